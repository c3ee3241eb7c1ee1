#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "test_support.hpp"
#include "vvp/server.hpp"

namespace vvp::server {
namespace {

using testing::read_file;
using testing::sample_project;

/// A scratch copy of the sample data directory, removed afterwards.
class DataDir {
 public:
  DataDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("vvp-server-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::copy(VVP_SAMPLE_DATA_DIR, path_, fs::copy_options::recursive);
  }
  ~DataDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Json body(const ApiResponse& r) { return Json::parse(r.body); }

Json record(const SessionEvent& e) {
  return {{"seq", e.seq}, {"kind", to_string(e.kind)}, {"node", e.playhead.node}, {"offset_ms", e.playhead.offset_ms},
          {"payload", e.payload}};
}

/// Feeds a recorded log to the service as a client would: one record per
/// transition, with the server clock set to the recorded time.
std::string post_log(Service& svc, ManualClock& clock, const SessionLog& log) {
  clock.set(log.front().wall_time);
  const auto session_id = log.front().payload.at("session_id").get<std::string>();
  auto created = svc.create_session(Json{{"project_id", log.front().payload.at("project_id")},
                                         {"viewer_id", log.front().payload.at("viewer_id")},
                                         {"session_id", session_id}}
                                        .dump());
  EXPECT_EQ(created.status, 201) << created.body;
  std::int64_t next = body(created).at("next_seq");
  for (const auto& e : log) {
    if (e.seq < next) continue;
    clock.set(e.wall_time);
    const auto r = svc.ingest_event(session_id, record(e).dump());
    EXPECT_EQ(r.status, 200) << r.body;
    if (r.status != 200) break;
    next = body(r).at("head").get<std::int64_t>() + 1;
  }
  return session_id;
}

struct Fixture : ::testing::Test {
  DataDir dir;
  ManualClock clock{testing::t0()};
  std::unique_ptr<Service> svc = std::make_unique<Service>(dir.path(), ServiceOptions{clock.clock(), false});

  std::string create(const std::string& viewer = "viewer-x") {
    const auto r = svc->create_session(Json{{"project_id", "rural-delivery"}, {"viewer_id", viewer}}.dump());
    EXPECT_EQ(r.status, 201) << r.body;
    return body(r).at("session_id");
  }

  Json snap(const std::string& id) {
    const auto r = svc->snapshot(id);
    EXPECT_EQ(r.status, 200) << r.body;
    return body(r);
  }

  ApiResponse post(const std::string& id, Json rec) { return svc->ingest_event(id, rec.dump()); }

  /// Posts the event a client would send for `kind` at the current snapshot.
  ApiResponse act(const std::string& id, std::string_view kind, Json payload = Json::object(), std::int64_t advance_ms = 0) {
    const auto s = snap(id);
    if (payload.is_null()) payload = Json::object();
    clock.advance(std::chrono::milliseconds(advance_ms));
    return post(id, {{"seq", s.at("next_seq")},
                     {"kind", kind},
                     {"node", s.at("current_node")},
                     {"offset_ms", s.at("playhead_ms").get<std::int64_t>() + (s.at("mode") == "Playing" ? advance_ms : 0)},
                     {"payload", std::move(payload)}});
  }
};

TEST_F(Fixture, LoadsSampleProjectAndDemoSession) {
  EXPECT_TRUE(svc->load_warnings().empty());
  EXPECT_EQ(svc->session_count(), 1u);
  const auto list = body(svc->list_projects());
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0].at("project_id"), "rural-delivery");
  EXPECT_EQ(list[0].at("branch_paths"), 6);
  EXPECT_EQ(list[0].at("minimum_per_playthrough"), 2);
  const auto demo = snap("demo-1");
  EXPECT_EQ(demo.at("mode"), "Ended");
  EXPECT_EQ(demo.at("status"), "ended");
}

TEST_F(Fixture, ProjectDocumentWithholdsAnswers) {
  const auto r = svc->get_project("rural-delivery");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body.find("correct_index"), std::string::npos);
  EXPECT_EQ(body(r).at("nodes").size(), 19u);
  EXPECT_EQ(svc->get_project("nope").status, 404);
}

TEST_F(Fixture, NavigationMatchesGraphModule) {
  const auto nav = body(svc->get_navigation("rural-delivery"));
  const auto points = navigation_points(sample_project());
  ASSERT_EQ(nav.size(), points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    EXPECT_EQ(nav[i].at("node"), points[i].node);
    EXPECT_EQ(nav[i].at("timeline_position_ms"), points[i].timeline_position_ms);
  }
}

TEST_F(Fixture, FreshSessionIsPlayingAtStart) {
  const auto id = create();
  const auto s = snap(id);
  EXPECT_EQ(s.at("mode"), "Playing");
  EXPECT_EQ(s.at("current_node"), "s_intro");
  EXPECT_EQ(s.at("playhead_ms"), 0);
  EXPECT_EQ(s.at("status"), "active");
  EXPECT_TRUE(fs::exists(dir.path() / "sessions" / (id + ".vvlog")));
}

TEST_F(Fixture, CreateSessionErrors) {
  EXPECT_EQ(svc->create_session("{").status, 400);
  EXPECT_EQ(svc->create_session(R"({"viewer_id": "v"})").status, 400);
  EXPECT_EQ(svc->create_session(R"({"project_id": "missing"})").status, 404);
  EXPECT_EQ(svc->create_session(R"({"project_id": "rural-delivery", "session_id": "../x"})").status, 400);
  EXPECT_EQ(svc->create_session(R"({"project_id": "rural-delivery", "session_id": "demo-1"})").status, 409);
}

TEST_F(Fixture, ValidEventIsAckedWithItsSeq) {
  const auto id = create();
  const auto next = snap(id).at("next_seq").get<std::int64_t>();
  const auto r = act(id, "PlaybackPaused", {}, 2500);
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(body(r).at("seq"), next);
  EXPECT_EQ(body(r).at("head"), next);
  const auto s = snap(id);
  EXPECT_EQ(s.at("mode"), "PausedByUser");
  EXPECT_EQ(s.at("playhead_ms"), 2500);
}

TEST_F(Fixture, DuplicateSeqConflictsWithHead) {
  const auto id = create();
  const auto s = snap(id);
  const Json rec{{"seq", s.at("next_seq")}, {"kind", "CommentAdded"}, {"node", "s_intro"}, {"offset_ms", 0}, {"payload", {{"text", "hi"}}}};
  ASSERT_EQ(post(id, rec).status, 200);
  const auto again = post(id, rec);
  EXPECT_EQ(again.status, 409);
  EXPECT_EQ(body(again).at("error"), "SequenceConflict");
  EXPECT_EQ(body(again).at("head"), s.at("next_seq"));
  Json ahead = rec;
  ahead["seq"] = s.at("next_seq").get<std::int64_t>() + 5;
  EXPECT_EQ(post(id, ahead).status, 409);
}

TEST_F(Fixture, UnknownOptionIsUnprocessable) {
  const auto id = create();
  // Walk to the first fork: four scene/question pairs.
  for (int i = 0; i < 4; ++i) {
    ASSERT_EQ(act(id, "SceneEntered").status, 200);
    const auto s = snap(id);
    ASSERT_EQ(s.at("mode"), "PausedQuestion");
    ASSERT_EQ(act(id, "QuestionAnswered", {{"chosen_index", 0}}).status, 200);
    ASSERT_EQ(act(id, "SceneEntered").status, 200);
  }
  ASSERT_EQ(snap(id).at("mode"), "AwaitingFork");
  const auto r = act(id, "ChoosePath", {{"node", "fork_order"}, {"option_id", "order_by_pigeon"}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(body(r).at("error"), "IllegalTransition");
  EXPECT_EQ(act(id, "ChoosePath", {{"node", "fork_order"}, {"option_id", "order_app"}}).status, 200);
}

TEST_F(Fixture, IllegalAndMalformedRecords) {
  const auto id = create();
  EXPECT_EQ(act(id, "PlaybackResumed").status, 422);  // already playing
  EXPECT_EQ(act(id, "QuestionAnswered", {{"chosen_index", 0}}).status, 422);
  EXPECT_EQ(act(id, "SessionStarted").status, 422);
  EXPECT_EQ(svc->ingest_event(id, "not json").status, 400);
  EXPECT_EQ(svc->ingest_event(id, R"({"seq": 2, "kind": "Bogus", "node": "s_intro", "offset_ms": 0})").status, 400);
  EXPECT_EQ(svc->ingest_event(id, R"({"kind": "PlaybackPaused", "node": "s_intro", "offset_ms": 0})").status, 400);
  // Playhead elsewhere than the session.
  const auto s = snap(id);
  EXPECT_EQ(post(id, {{"seq", s.at("next_seq")}, {"kind", "PlaybackPaused"}, {"node", "s_shop"}, {"offset_ms", 0}}).status, 422);
  // Rejections leave no trace.
  EXPECT_EQ(snap(id), s);
  EXPECT_EQ(svc->ingest_event("no-such-session", "{}").status, 404);
  EXPECT_EQ(svc->snapshot("no-such-session").status, 404);
}

TEST_F(Fixture, EndedSessionIsGone) {
  const auto r = act("demo-1", "CommentAdded", {{"text", "late"}});
  EXPECT_EQ(r.status, 410);
  const auto id = create();
  ASSERT_EQ(act(id, "SessionEnded", {}, 1000).status, 200);
  EXPECT_EQ(snap(id).at("mode"), "Ended");
  EXPECT_EQ(act(id, "PlaybackPaused").status, 410);
}

TEST_F(Fixture, CorrectIndexWithheldUntilAnswered) {
  const auto id = create();
  std::vector<std::string> bodies;
  ASSERT_EQ(act(id, "SceneEntered", {}, 45'000).status, 200);
  const auto q = snap(id);
  ASSERT_EQ(q.at("mode"), "PausedQuestion");
  EXPECT_EQ(q.at("question").at("choices").size(), 3u);
  EXPECT_FALSE(q.at("question").contains("correct_index"));
  EXPECT_EQ(svc->snapshot(id).body.find("correct_index"), std::string::npos);
  EXPECT_EQ(svc->get_project("rural-delivery").body.find("correct_index"), std::string::npos);

  const auto answer = act(id, "QuestionAnswered", {{"chosen_index", 2}}, 3000);
  ASSERT_EQ(answer.status, 200);
  const auto fb = snap(id);
  EXPECT_EQ(fb.at("mode"), "PausedQuestionFeedback");
  const auto correct = std::get<QuestionNode>(sample_project().nodes.at("q_intro")).correct_index;
  EXPECT_EQ(fb.at("question").at("correct_index"), correct);
  EXPECT_EQ(fb.at("answered").at("q_intro").at("chosen_index"), 2);

  // The next question is unanswered again.
  ASSERT_EQ(act(id, "SceneEntered", {}, 1000).status, 200);
  ASSERT_EQ(act(id, "QuestionPresented", {}, 1000).status, 200);
  const auto next = snap(id);
  ASSERT_EQ(next.at("mode"), "PausedQuestion");
  EXPECT_FALSE(next.at("question").contains("correct_index"));
}

TEST_F(Fixture, ReplayingTheDemoThroughTheServerReproducesItsLog) {
  auto demo = parse_log(read_file(testing::demo_log_path()));
  // The checked-in copy already exists under that id.
  for (auto& e : demo)
    if (e.kind == EventKind::SessionStarted) e.payload["session_id"] = "demo-2";
  const auto id = post_log(*svc, clock, demo);
  EXPECT_EQ(svc->export_session(id).body, serialize_log(demo));
  EXPECT_EQ(read_file(dir.path() / "sessions" / "demo-2.vvlog"), serialize_log(demo));
}

TEST_F(Fixture, RestartReproducesSnapshots) {
  std::vector<std::string> ids{"demo-1"};
  for (const auto& [order, delivery] : std::vector<std::pair<std::string, std::string>>{
           {"order_app", "deliver_drone"}, {"order_fill", "deliver_trunk"}, {"order_button", "deliver_neighbor"}}) {
    auto log = testing::sample_playthrough(order, delivery, "v-" + order, "run-" + order).log();
    ids.push_back(post_log(*svc, clock, log));
  }
  // Unfinished sessions in several modes.
  ids.push_back(create("viewer-mid"));
  ASSERT_EQ(act(ids.back(), "SceneEntered", {}, 45'000).status, 200);
  ids.push_back(create("viewer-paused"));
  ASSERT_EQ(act(ids.back(), "PlaybackPaused", {}, 1'234).status, 200);
  ids.push_back(create("viewer-overview"));
  ASSERT_EQ(act(ids.back(), "OverviewOpened", {}, 700).status, 200);

  std::map<std::string, std::string> before;
  for (const auto& id : ids) before[id] = svc->snapshot(id).body;
  const auto export_before = svc->export_project("rural-delivery").body;
  svc.reset();

  Service restarted(dir.path(), ServiceOptions{clock.clock(), false});
  EXPECT_TRUE(restarted.load_warnings().empty());
  EXPECT_EQ(restarted.session_count(), ids.size());
  for (const auto& id : ids) EXPECT_EQ(restarted.snapshot(id).body, before[id]) << id;
  EXPECT_EQ(restarted.export_project("rural-delivery").body, export_before);
}

TEST_F(Fixture, CorruptLogIsSkippedAtStartup) {
  testing::write_file(dir.path() / "sessions" / "broken.vvlog", "{\"seq\": 0}\n");
  Service s(dir.path(), ServiceOptions{clock.clock(), false});
  ASSERT_EQ(s.load_warnings().size(), 1u);
  EXPECT_EQ(s.load_warnings()[0].rfind("broken.vvlog", 0), 0u);
  EXPECT_EQ(s.session_count(), 1u);
}

TEST_F(Fixture, ConcurrentSubmissionsLinearize) {
  const auto id = create();
  constexpr int kThreads = 8, kEach = 25;
  std::atomic<int> conflicts{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int k = 0; k < kEach;) {
        const auto s = Json::parse(svc->snapshot(id).body);
        const auto r = svc->ingest_event(id, Json{{"seq", s.at("next_seq")},
                                                  {"kind", "CommentAdded"},
                                                  {"node", "s_intro"},
                                                  {"offset_ms", 0},
                                                  {"payload", {{"text", std::to_string(t) + ":" + std::to_string(k)}}}}
                                                  .dump());
        if (r.status == 200) {
          ++k;
        } else {
          ASSERT_EQ(r.status, 409) << r.body;
          ++conflicts;
        }
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto log = parse_log(svc->export_session(id).body);
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].seq, static_cast<std::int64_t>(i));
  const auto state = replay(log, sample_project());
  EXPECT_EQ(state.comments.size(), static_cast<std::size_t>(kThreads * kEach));
  EXPECT_EQ(read_file(dir.path() / "sessions" / (id + ".vvlog")), serialize_log(log));
  SUCCEED() << conflicts.load() << " conflicts";
}

TEST_F(Fixture, ViewerAnnotationEndpoint) {
  const auto id = create();
  ASSERT_EQ(act(id, "CommentAdded", {{"text", "x"}}, 5000).status, 200);
  const Json note{{"annotation_id", "v-1"}, {"author_kind", "viewer"}, {"anchor", {{"node", "s_intro"}, {"start_ms", 0}, {"end_ms", 4000}}},
                  {"title", "idea"}, {"body", {{{"type", "text"}, {"value", "more light"}}}}};
  const auto r = svc->add_annotation(id, note.dump());
  ASSERT_EQ(r.status, 200) << r.body;
  EXPECT_EQ(body(r).at("events")[0].at("kind"), "ViewerAnnotationAdded");
  EXPECT_EQ(snap(id).at("viewer_annotations").size(), 1u);
  EXPECT_EQ(svc->add_annotation(id, note.dump()).status, 422);  // id already used
  EXPECT_EQ(svc->add_annotation(id, note.dump(), 0).status, 409);
  EXPECT_EQ(svc->add_annotation(id, "{}").status, 400);
}

TEST_F(Fixture, ExportsAndConsensus) {
  const auto demo = svc->export_session("demo-1");
  EXPECT_EQ(demo.body, read_file(testing::demo_log_path()));
  const auto bundle = body(svc->export_project("rural-delivery"));
  EXPECT_EQ(bundle.at("sessions").size(), 1u);
  const auto consensus = body(svc->consensus("rural-delivery"));
  EXPECT_EQ(consensus.at("sessions"), 1);
  EXPECT_EQ(consensus.at("forks")[1].at("additional_views").at("order_button"), 1);
  EXPECT_EQ(svc->consensus("nope").status, 404);
}

TEST_F(Fixture, MediaLookup) {
  const auto m = svc->media("m_intro");
  ASSERT_TRUE(m);
  EXPECT_EQ(m->mime, "video/mp4");
  EXPECT_FALSE(svc->media("m_nowhere"));
}

// --- over a real socket

struct Http : Fixture {
  std::unique_ptr<HttpServer> http;
  std::thread thread;
  int port = 0;

  void SetUp() override {
    http = std::make_unique<HttpServer>(*svc);
    const auto bound = http->bind("127.0.0.1", 0);
    ASSERT_TRUE(bound);
    port = *bound;
    thread = std::thread([this] { http->serve(); });
    http->wait_until_ready();
  }

  void TearDown() override {
    http->stop();
    if (thread.joinable()) thread.join();
  }

  httplib::Client client() { return httplib::Client("127.0.0.1", port); }
};

TEST_F(Http, EndpointsRespond) {
  auto c = client();
  auto r = c.Get("/api/projects");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(Json::parse(r->body)[0].at("project_id"), "rural-delivery");
  EXPECT_EQ(c.Get("/api/projects/rural-delivery")->status, 200);
  EXPECT_EQ(c.Get("/api/projects/rural-delivery/navigation")->status, 200);
  EXPECT_EQ(c.Get("/api/projects/rural-delivery/export")->status, 200);
  EXPECT_EQ(c.Get("/api/projects/rural-delivery/analytics/consensus")->status, 200);
  EXPECT_EQ(c.Get("/api/projects/nope")->status, 404);
  EXPECT_EQ(c.Get("/api/sessions/demo-1/export")->body, read_file(testing::demo_log_path()));

  r = c.Post("/api/sessions", R"({"project_id": "rural-delivery", "viewer_id": "web"})", "application/json");
  ASSERT_EQ(r->status, 201);
  const std::string id = Json::parse(r->body).at("session_id");
  const auto snap = Json::parse(c.Get("/api/sessions/" + id + "/snapshot")->body);
  const Json rec{{"seq", snap.at("next_seq")}, {"kind", "PlaybackPaused"}, {"node", "s_intro"}, {"offset_ms", 0}};
  r = c.Post("/api/sessions/" + id + "/events", rec.dump(), "application/json");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(Json::parse(r->body).at("seq"), snap.at("next_seq"));
  r = c.Post("/api/sessions/" + id + "/events", rec.dump(), "application/json");
  EXPECT_EQ(r->status, 409);
  r = c.Post("/api/sessions/" + id + "/annotations?seq=abc", "{}", "application/json");
  EXPECT_EQ(r->status, 400);
}

TEST_F(Http, MediaIsServedWithRanges) {
  auto c = client();
  const auto bytes = read_file(dir.path() / "projects" / "media" / "intro.mp4");
  ASSERT_GE(bytes.size(), 8u);
  auto whole = c.Get("/media/m_intro");
  ASSERT_TRUE(whole);
  EXPECT_EQ(whole->status, 200);
  EXPECT_EQ(whole->body, bytes);
  EXPECT_EQ(whole->get_header_value("Content-Type"), "video/mp4");

  auto part = c.Get("/media/m_intro", {{"Range", "bytes=2-5"}});
  ASSERT_TRUE(part);
  EXPECT_EQ(part->status, 206);
  EXPECT_EQ(part->body, bytes.substr(2, 4));
  EXPECT_EQ(c.Get("/media/m_missing")->status, 404);
}

}  // namespace
}  // namespace vvp::server
