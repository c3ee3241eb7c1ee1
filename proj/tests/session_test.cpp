#include <gtest/gtest.h>

#include <cstdlib>

#include "test_support.hpp"
#include "vvp/session.hpp"

namespace vvp {
namespace {

using testing::sample_playthrough;
using testing::sample_project;
using testing::Script;
using testing::t0;

std::vector<EventKind> kinds(const std::vector<SessionEvent>& events) {
  std::vector<EventKind> out;
  for (const auto& e : events) out.push_back(e.kind);
  return out;
}

TEST(StartSession, OpensAtFirstScene) {
  const auto t = start_session(sample_project(), "v1", t0(), StartOptions{"fixed"});
  EXPECT_EQ(t.state.mode.mode, Mode::Playing);
  EXPECT_EQ(t.state.current_node, "s_intro");
  EXPECT_EQ(t.state.playhead_ms, 0);
  EXPECT_FALSE(t.state.annotations_visible);
  ASSERT_EQ(t.events.size(), 2u);
  EXPECT_EQ(t.events[0].seq, 0);
  EXPECT_EQ(t.events[0].kind, EventKind::SessionStarted);
  EXPECT_EQ(t.events[0].payload["session_id"], "fixed");
  EXPECT_EQ(t.events[1].seq, 1);
  EXPECT_EQ(t.events[1].kind, EventKind::SceneEntered);
}

TEST(StartSession, InvalidProjectThrows) {
  auto p = testing::one_fork_project();
  std::get<ForkNode>(p.nodes["fork"]).options[0].target = "gone";
  EXPECT_THROW(start_session(p, "v", t0()), InvalidProject);
}

TEST(StartSession, SessionsAreIndependent) {
  const auto a = start_session(sample_project(), "v1", t0());
  const auto b = start_session(sample_project(), "v1", t0());
  EXPECT_NE(a.state.session_id, b.state.session_id);
  auto a2 = apply_event(sample_project(), a.state, input::Pause{}, t0());
  EXPECT_EQ(a2.state.mode.mode, Mode::PausedByUser);
  EXPECT_EQ(b.state.mode.mode, Mode::Playing);
}

TEST(StartSession, ClockOverloadReadsTheClock) {
  ManualClock clock(t0() + std::chrono::hours(1));
  const auto t = start_session(sample_project(), "v", clock.clock());
  EXPECT_EQ(t.state.started_at, t0() + std::chrono::hours(1));
}

TEST(Transitions, SceneEndBeforeQuestionPauses) {
  Script s(sample_project());
  s.finish_scene();
  EXPECT_EQ(s.state().mode.mode, Mode::PausedQuestion);
  EXPECT_EQ(s.state().mode.node, "q_intro");
  EXPECT_EQ(s.log().back().kind, EventKind::QuestionPresented);
  EXPECT_EQ(s.log().back().playhead, (Playhead{"q_intro", 0}));
}

TEST(Transitions, PlayheadFrozenInQuestion) {
  Script s(sample_project());
  s.finish_scene();
  s.play(10'000);
  EXPECT_EQ(s.state().playhead_ms, 0);
}

TEST(Transitions, ForkRejectsEverythingButAChoice) {
  Script s(sample_project());
  for (int i = 0; i < 4; ++i) s.finish_scene().answer_correctly();
  ASSERT_EQ(s.state().mode.mode, Mode::AwaitingFork);
  for (const ViewerInput& in : std::vector<ViewerInput>{input::Play{}, input::Pause{}, input::Seek{0}, input::SceneEnd{},
                                                        input::OpenOverview{}, input::Quit{}, input::Acknowledge{},
                                                        input::ChoosePath{"teleport"}}) {
    EXPECT_THROW(s.apply(in), IllegalTransition) << input_name(in);
  }
  s.wait(3'600'000);  // no timer: an hour later it still waits
  EXPECT_EQ(s.state().mode.mode, Mode::AwaitingFork);
  s.choose("order_fill");
  EXPECT_EQ(s.state().mode.mode, Mode::Playing);
  EXPECT_EQ(s.state().current_node, "s_order_fill");
}

TEST(Transitions, IllegalTransitionCarriesModeAndInput) {
  Script s(sample_project());
  s.finish_scene();
  try {
    s.apply(input::Seek{10});
    FAIL();
  } catch (const IllegalTransition& e) {
    EXPECT_EQ(e.mode(), "PausedQuestion");
    EXPECT_EQ(e.input(), "Seek");
  }
}

TEST(Transitions, ExpandCollapseRestoresPlayingAtSamePlayhead) {
  Script s(sample_project());
  s.finish_scene().answer_correctly().play(7000);
  s.apply(input::ToggleAnnotations{});
  EXPECT_EQ(s.state().mode.mode, Mode::Playing);  // boxes shown, still playing
  s.apply(input::ExpandAnnotation{"a_village_map"});
  EXPECT_EQ(s.state().mode.mode, Mode::AnnotationExpanded);
  s.play(20'000);
  EXPECT_EQ(s.state().playhead_ms, 7000);
  s.apply(input::CollapseAnnotation{});
  EXPECT_EQ(s.state().mode.mode, Mode::Playing);
  EXPECT_EQ(s.state().playhead_ms, 7000);
}

TEST(Transitions, CollapseReturnsToUserPause) {
  Script s(sample_project());
  s.finish_scene().answer_correctly().play(1000);
  s.apply(input::ToggleAnnotations{}).apply(input::Pause{});
  s.apply(input::ExpandAnnotation{"a_village_map"}).apply(input::CollapseAnnotation{});
  EXPECT_EQ(s.state().mode.mode, Mode::PausedByUser);
}

TEST(Transitions, AnnotationControlsNeedAnAnchoredAnnotation) {
  Script s(sample_project());
  EXPECT_THROW(s.apply(input::ToggleAnnotations{}), IllegalTransition);  // nothing on s_intro
  s.finish_scene().answer_correctly().play(31'000);
  s.apply(input::ToggleAnnotations{});
  // a_village_map covers 0..30000; the playhead has moved past it.
  EXPECT_THROW(s.apply(input::ExpandAnnotation{"a_village_map"}), IllegalTransition);
  EXPECT_THROW(s.apply(input::ExpandAnnotation{"a_fill_sensor"}), IllegalTransition);
  s.apply(input::ToggleAnnotations{});
  EXPECT_FALSE(s.state().annotations_visible);
  EXPECT_EQ(s.log().back().kind, EventKind::AnnotationsHidden);
}

TEST(Transitions, OverviewPausesAndResumes) {
  Script s(sample_project());
  s.play(2000).apply(input::OpenOverview{});
  EXPECT_EQ(s.state().mode.mode, Mode::OverviewOpen);
  s.play(5000);
  EXPECT_EQ(s.state().playhead_ms, 2000);
  s.apply(input::CloseOverview{});
  EXPECT_EQ(s.state().mode.mode, Mode::Playing);
}

TEST(Transitions, NavigateSeeksToNavigationPoint) {
  Script s(sample_project());
  s.finish_scene().answer_correctly().play(9000);
  const auto before = s.log().size();
  s.navigate("s_intro");
  EXPECT_EQ(s.state().mode.mode, Mode::Playing);
  EXPECT_EQ(s.state().current_node, "s_intro");
  const std::vector<SessionEvent> group(s.log().begin() + static_cast<std::ptrdiff_t>(before) + 1, s.log().end());
  EXPECT_EQ(kinds(group), (std::vector{EventKind::OverviewNavigated, EventKind::Seeked, EventKind::SceneEntered}));
  EXPECT_EQ(group[1].payload["from"]["node"], "s_village");
  EXPECT_EQ(group[1].payload["from"]["offset_ms"], 9000);
  EXPECT_EQ(group[1].payload["to"]["node"], "s_intro");
}

TEST(Transitions, NavigateRefusesQuestionsAndLockedBranches) {
  Script s(sample_project());
  s.apply(input::OpenOverview{});
  EXPECT_THROW(s.apply(input::Navigate{"q_intro"}), IllegalTransition);       // not a navigation point
  EXPECT_THROW(s.apply(input::Navigate{"s_order_app"}), IllegalTransition);   // behind fork_order
  EXPECT_NO_THROW(s.apply(input::Navigate{"fork_order"}));                    // reachable without choosing
  EXPECT_EQ(s.state().mode.mode, Mode::AwaitingFork);
}

TEST(Transitions, OverviewBlockedDuringMandatoryInteractions) {
  Script s(sample_project());
  s.finish_scene();
  EXPECT_THROW(s.apply(input::OpenOverview{}), IllegalTransition);
  s.apply(input::Answer{0});
  EXPECT_THROW(s.apply(input::OpenOverview{}), IllegalTransition);
}

TEST(Transitions, SeekWithinNode) {
  Script s(sample_project());
  s.apply(input::Seek{30'000});
  EXPECT_EQ(s.state().playhead_ms, 30'000);
  EXPECT_EQ(s.log().back().playhead.offset_ms, 0);  // stamped at the from-position
  EXPECT_THROW(s.apply(input::Seek{45'001}), IllegalTransition);
  EXPECT_THROW(s.apply(input::Seek{-1}), IllegalTransition);
  s.apply(input::Pause{}).apply(input::Seek{100});
  EXPECT_EQ(s.state().mode.mode, Mode::PausedByUser);
}

TEST(Transitions, SeekAllowedInFeedback) {
  Script s(sample_project());
  s.finish_scene().apply(input::Answer{1});
  EXPECT_NO_THROW(s.apply(input::Seek{0}));
  EXPECT_EQ(s.state().mode.mode, Mode::PausedQuestionFeedback);
}

TEST(Transitions, QuitEndsTheSession) {
  Script s(sample_project());
  s.play(100).apply(input::Quit{});
  EXPECT_EQ(s.state().mode.mode, Mode::Ended);
  EXPECT_EQ(s.log().back().kind, EventKind::SessionEnded);
  EXPECT_THROW(s.apply(input::Play{}), IllegalTransition);
  EXPECT_THROW(s.apply(input::AddComment{"late"}), IllegalTransition);
}

TEST(Transitions, ReachingEndEmitsSessionEnded) {
  auto s = sample_playthrough("order_button", "deliver_neighbor");
  EXPECT_EQ(s.state().mode.mode, Mode::Ended);
  EXPECT_EQ(s.state().current_node, "end");
  EXPECT_EQ(s.log().back().kind, EventKind::SessionEnded);
}

TEST(Transitions, TimeIsClampedForward) {
  Script s(sample_project());
  s.wait(5000).apply(input::Pause{});
  const auto t = apply_event(sample_project(), s.state(), input::Play{}, t0());
  EXPECT_EQ(t.events[0].wall_time, t0() + std::chrono::milliseconds(5000));
}

TEST(Transitions, ViewerAnnotationIsStamped) {
  Script s(sample_project());
  s.wait(700).apply(input::AddAnnotation{{"mine", AuthorKind::creator, {"s_intro", 0, 1000}, "note", {}, std::nullopt}});
  ASSERT_EQ(s.state().viewer_annotations.size(), 1u);
  EXPECT_EQ(s.state().viewer_annotations[0].author_kind, AuthorKind::viewer);
  EXPECT_EQ(s.state().viewer_annotations[0].created_at, t0() + std::chrono::milliseconds(700));
  // Its own annotation now makes the toggle available on s_intro.
  EXPECT_NO_THROW(s.apply(input::ToggleAnnotations{}));
  EXPECT_THROW(s.apply(input::AddAnnotation{{"mine", AuthorKind::viewer, {"s_intro", 0, 10}, "again", {}, std::nullopt}}),
               IllegalTransition);
  EXPECT_THROW(s.apply(input::AddAnnotation{{"a_village_map", AuthorKind::viewer, {"s_intro", 0, 10}, "x", {}, std::nullopt}}),
               IllegalTransition);
}

TEST(AnswerQuestion, CorrectFirstAnswerCounts) {
  Script s(sample_project());
  s.finish_scene();
  const auto r = answer_question(sample_project(), s.state(), 1, t0());
  EXPECT_TRUE(r.feedback.correct);
  EXPECT_TRUE(r.feedback.counts_for_metrics);
  EXPECT_EQ(r.feedback.correct_index, 1u);
  EXPECT_EQ(r.transition.state.mode.mode, Mode::PausedQuestionFeedback);
}

TEST(AnswerQuestion, WrongAnswerIsFinal) {
  Script s(sample_project());
  s.finish_scene();
  const auto r = answer_question(sample_project(), s.state(), 0, t0());
  EXPECT_FALSE(r.feedback.correct);
  EXPECT_EQ(r.feedback.correct_index, 1u);
  // No second try from feedback: the only way on is acknowledging.
  EXPECT_THROW(apply_event(sample_project(), r.transition.state, input::Answer{1}, t0()), IllegalTransition);
  const auto next = apply_event(sample_project(), r.transition.state, input::Acknowledge{}, t0());
  EXPECT_EQ(next.state.current_node, "s_village");
  EXPECT_FALSE(next.state.answered.at("q_intro").correct);
}

TEST(AnswerQuestion, ReencounterDoesNotCount) {
  Script s(sample_project());
  s.finish_scene().answer_wrong().navigate("s_intro").finish_scene();
  ASSERT_EQ(s.state().mode.mode, Mode::PausedQuestion);
  const auto r = answer_question(sample_project(), s.state(), 1, t0() + std::chrono::hours(1));
  EXPECT_TRUE(r.feedback.correct);
  EXPECT_FALSE(r.feedback.counts_for_metrics);
  EXPECT_FALSE(r.transition.state.answered.at("q_intro").correct);
}

TEST(AnswerQuestion, OnlyInPausedQuestion) {
  Script s(sample_project());
  EXPECT_THROW(answer_question(sample_project(), s.state(), 0, t0()), IllegalTransition);
  s.finish_scene();
  EXPECT_THROW(s.apply(input::Answer{7}), IllegalTransition);
}

TEST(Classify, TotalOverEventKinds) {
  SessionState ctx;
  for (std::size_t k = 0; k < kEventKindCount; ++k) {
    SessionEvent e;
    e.kind = static_cast<EventKind>(k);
    e.payload = {{"node", "f"}, {"option_id", "o"}};
    const auto c = classify_interaction(e, ctx);
    EXPECT_TRUE(c == InteractionClass::mandatory || c == InteractionClass::optional || c == InteractionClass::system);
  }
}

TEST(Classify, KindsAndForkContext) {
  SessionState ctx;
  SessionEvent e;
  e.kind = EventKind::AnnotationExpanded;
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::optional);
  e.kind = EventKind::OverviewNavigated;
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::optional);
  e.kind = EventKind::QuestionAnswered;
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::mandatory);
  e.kind = EventKind::Seeked;
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::system);
  e.kind = EventKind::AnnotationsShown;
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::system);
  e.kind = EventKind::CommentAdded;
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::optional);

  e.kind = EventKind::ChoosePath;
  e.payload = {{"node", "fork_order"}, {"option_id", "order_fill"}};
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::mandatory);  // first pass
  ctx.forks_taken.push_back({"fork_order", "order_app"});
  ctx.branch_paths_seen.insert({"fork_order", "order_app"});
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::optional);  // an additional path
  e.payload["option_id"] = "order_app";
  EXPECT_EQ(classify_interaction(e, ctx), InteractionClass::mandatory);  // same path again
}

TEST(Metrics, FiveOfSixCorrect) {
  Script s(sample_project());
  s.finish_scene().answer_correctly();
  s.finish_scene().answer_wrong();
  s.finish_scene().answer_correctly();
  s.finish_scene().answer_correctly().choose("order_app");
  s.finish_scene().answer_correctly().choose("deliver_drone");
  s.finish_scene().answer_correctly();
  ASSERT_EQ(s.state().mode.mode, Mode::Ended);
  const auto m = session_metrics(s.log(), sample_project());
  EXPECT_EQ(m.correct_answers, 5);
  EXPECT_EQ(m.questions_available, 6);
  EXPECT_NEAR(m.correct_ratio(), 5.0 / 6.0, 1e-12);
  EXPECT_EQ(m.branch_paths_seen, 2);
  EXPECT_EQ(m.optional_interactions, 0);
}

TEST(Metrics, BothForksOnceGivesTwoPaths) {
  const auto s = sample_playthrough("order_fill", "deliver_trunk");
  const auto m = session_metrics(s.log(), sample_project());
  EXPECT_EQ(m.branch_paths_seen, 2);
  EXPECT_EQ(m.correct_answers, 4);  // neither conditional question was on this route
}

TEST(Metrics, StartedThenQuit) {
  Script s(sample_project());
  s.wait(90'000).apply(input::Quit{});
  const auto m = session_metrics(s.log(), sample_project());
  EXPECT_EQ(m.correct_answers, 0);
  EXPECT_EQ(m.optional_interactions, 0);
  EXPECT_EQ(m.branch_paths_seen, 0);
  EXPECT_EQ(m.comments, 0);
  EXPECT_EQ(m.time_spent_ms, 90'000);
  EXPECT_EQ(m.active_time_ms, 90'000);
}

TEST(Metrics, ActiveTimeExcludesPauses) {
  Script s(sample_project());
  s.play(10'000).apply(input::Pause{}).wait(50'000).apply(input::Play{}).play(5000).apply(input::Quit{});
  const auto m = session_metrics(s.log(), sample_project());
  EXPECT_EQ(m.time_spent_ms, 65'000);
  EXPECT_EQ(m.active_time_ms, 15'000);
}

TEST(Replay, EngineLogsReplay) {
  const auto s = testing::demo_playthrough();
  EXPECT_EQ(replay(s.log(), sample_project()), s.state());
}

TEST(Replay, PlayDuringForkIsCorrupt) {
  Script s(sample_project());
  for (int i = 0; i < 4; ++i) s.finish_scene().answer_correctly();
  auto log = s.log();
  SessionEvent bogus = log.back();
  bogus.seq = static_cast<std::int64_t>(log.size());
  bogus.kind = EventKind::PlaybackResumed;
  bogus.payload = Json::object();
  log.push_back(bogus);
  try {
    replay(log, sample_project());
    FAIL();
  } catch (const CorruptLog& e) {
    EXPECT_EQ(e.seq(), bogus.seq);
  }
}

TEST(Replay, ShapeErrors) {
  auto log = testing::demo_playthrough().log();
  auto gap = log;
  gap.erase(gap.begin() + 5);
  try {
    replay(gap, sample_project());
    FAIL();
  } catch (const CorruptLog& e) {
    EXPECT_EQ(e.seq(), 5);
  }
  auto offset = log;
  offset[3].playhead.offset_ms = 10'000'000;
  EXPECT_THROW(replay(offset, sample_project()), CorruptLog);
  auto backwards = log;
  backwards[4].wall_time = t0() - std::chrono::seconds(1);
  EXPECT_THROW(session_metrics(backwards, sample_project()), CorruptLog);
  EXPECT_THROW(replay({}, sample_project()), CorruptLog);
  auto tampered = log;
  for (auto& e : tampered)
    if (e.kind == EventKind::QuestionAnswered) {
      e.payload["correct"] = !e.payload["correct"].get<bool>();
      break;
    }
  EXPECT_THROW(replay(tampered, sample_project()), CorruptLog);
  // Cutting between ChoosePath and the SceneEntered it causes.
  auto truncated = log;
  const auto choose = std::find_if(log.begin(), log.end(), [](auto& e) { return e.kind == EventKind::ChoosePath; }) - log.begin();
  truncated.erase(truncated.begin() + choose + 1, truncated.end());
  EXPECT_THROW(replay(truncated, sample_project()), CorruptLog);
  // A cut on a group boundary is just a session still in progress.
  auto prefix = log;
  prefix.erase(prefix.begin() + choose + 2, prefix.end());
  EXPECT_NO_THROW(replay(prefix, sample_project()));
}

TEST(Replay, WrongProjectIsCorrupt) {
  EXPECT_THROW(replay(testing::demo_playthrough().log(), testing::one_fork_project()), CorruptLog);
}

TEST(LogFormat, FieldOrderAndRoundTrip) {
  const auto log = testing::demo_playthrough().log();
  const auto line = to_log_line(log[0]);
  EXPECT_EQ(line.rfind("{\"seq\":0,\"wall_time\":\"2026-03-02T09:00:00.000Z\",\"node\":\"s_intro\",\"offset_ms\":0,"
                       "\"kind\":\"SessionStarted\",\"payload\":{",
                       0),
            0u)
      << line;
  const auto text = serialize_log(log);
  EXPECT_EQ(parse_log(text), log);
  EXPECT_EQ(serialize_log(parse_log(text)), text);
}

TEST(LogFormat, BadLinesAreCorrupt) {
  const auto text = serialize_log(testing::demo_playthrough().log());
  const auto second_line = text.find('\n') + 1;
  std::string broken = text;
  broken.insert(second_line, "{not json\n");
  try {
    parse_log(broken);
    FAIL();
  } catch (const CorruptLog& e) {
    EXPECT_EQ(e.seq(), 1);
  }
  EXPECT_THROW(parse_log("{\"seq\":0}\n"), CorruptLog);
  std::string unknown_kind = text.substr(0, second_line);
  unknown_kind.replace(unknown_kind.find("SessionStarted"), 14, "SessionPaused");
  EXPECT_THROW(parse_log(unknown_kind), CorruptLog);
  EXPECT_TRUE(parse_log("\n\n").empty());
}

// The checked-in demo log. Set VVP_REGENERATE_FIXTURES=1 to rewrite it.
TEST(DemoLog, FixtureMatchesScriptedPlaythrough) {
  const auto text = serialize_log(testing::demo_playthrough().log());
  if (std::getenv("VVP_REGENERATE_FIXTURES")) testing::write_file(testing::demo_log_path(), text);
  EXPECT_EQ(testing::read_file(testing::demo_log_path()), text);
}

// Expected numbers come from tests/oracles/demo_log_metrics.py, which counts
// straight from the .vvlog lines without the engine.
TEST(DemoLog, MetricsMatchIndependentCount) {
  const auto log = parse_log(testing::read_file(testing::demo_log_path()));
  const auto m = session_metrics(log, sample_project());
  EXPECT_EQ(m.correct_answers, 5);
  EXPECT_EQ(m.questions_available, 6);
  EXPECT_EQ(m.optional_interactions, 7);
  EXPECT_EQ(m.branch_paths_seen, 3);
  EXPECT_EQ(m.comments, 1);
  EXPECT_EQ(m.time_spent_ms, 403'500);
  EXPECT_EQ(m.active_time_ms, 316'500);
  EXPECT_EQ(metrics_from_state(replay(log, sample_project()), sample_project()), m);
}

}  // namespace
}  // namespace vvp
