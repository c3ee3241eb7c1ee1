#pragma once

// Playback session state machine.
//
// A session is a fold of viewer inputs over a project graph. Every input
// that changes anything emits one or more SessionEvents; the event log is
// the source of truth and `replay` rebuilds the identical state from it.
//
// Mandatory interactions (questions, forks) pause playback and can only be
// left through their own inputs: an answer plus acknowledgement for a
// question, a path choice for a fork. Overview and expanded annotations
// pause as well but are optional and restore the prior mode on close.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "vvp/codec.hpp"
#include "vvp/error.hpp"
#include "vvp/graph.hpp"
#include "vvp/time.hpp"

namespace vvp {

enum class Mode {
  Playing,
  PausedByUser,
  PausedQuestion,
  PausedQuestionFeedback,
  AwaitingFork,
  OverviewOpen,
  AnnotationExpanded,
  Ended,
};

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Playing: return "Playing";
    case Mode::PausedByUser: return "PausedByUser";
    case Mode::PausedQuestion: return "PausedQuestion";
    case Mode::PausedQuestionFeedback: return "PausedQuestionFeedback";
    case Mode::AwaitingFork: return "AwaitingFork";
    case Mode::OverviewOpen: return "OverviewOpen";
    case Mode::AnnotationExpanded: return "AnnotationExpanded";
    case Mode::Ended: return "Ended";
  }
  return "?";
}

/// Modes in which the playhead is frozen regardless of elapsed time.
inline bool is_pausing(Mode m) {
  return m == Mode::PausedQuestion || m == Mode::PausedQuestionFeedback || m == Mode::AwaitingFork ||
         m == Mode::OverviewOpen || m == Mode::AnnotationExpanded;
}

struct ModeState {
  Mode mode = Mode::Playing;
  NodeId node;                       // question or fork being handled
  std::size_t chosen_index = 0;      // PausedQuestionFeedback
  std::string annotation_id;         // AnnotationExpanded
  Mode resume_mode = Mode::Playing;  // OverviewOpen, AnnotationExpanded

  bool operator==(const ModeState&) const = default;
};

struct AnswerRecord {
  std::size_t chosen_index = 0;
  bool correct = false;
  std::int64_t seq = 0;

  bool operator==(const AnswerRecord&) const = default;
};

struct Playhead {
  NodeId node;
  std::int64_t offset_ms = 0;

  bool operator==(const Playhead&) const = default;
};

struct CommentRecord {
  std::string text;
  Playhead at;
  Timestamp wall_time;

  bool operator==(const CommentRecord&) const = default;
};

struct SessionState {
  std::string session_id;
  std::string project_id;
  std::string viewer_id;
  ModeState mode;
  NodeId current_node;
  std::int64_t playhead_ms = 0;
  bool annotations_visible = false;
  std::map<NodeId, AnswerRecord> answered;  // first answer per question
  std::vector<ForkChoice> forks_taken;      // every choice, in order
  std::set<ForkChoice> branch_paths_seen;
  std::vector<Annotation> viewer_annotations;
  std::vector<CommentRecord> comments;
  std::int64_t next_seq = 0;

  Timestamp started_at{};
  Timestamp last_wall_time{};
  std::optional<Timestamp> ended_at;
  std::int64_t active_time_ms = 0;
  std::int64_t optional_interactions = 0;

  Playhead playhead() const { return {current_node, playhead_ms}; }

  bool fork_satisfied(std::string_view fork) const {
    return std::any_of(forks_taken.begin(), forks_taken.end(), [&](const ForkChoice& c) { return c.fork == fork; });
  }

  bool operator==(const SessionState&) const = default;
};

// ---------------------------------------------------------------------------
// Events

enum class EventKind {
  SessionStarted,
  PlaybackResumed,
  PlaybackPaused,
  SceneEntered,
  QuestionPresented,
  QuestionAnswered,
  ForkPresented,
  ChoosePath,
  OverviewOpened,
  OverviewNavigated,
  OverviewClosed,
  AnnotationsShown,
  AnnotationsHidden,
  AnnotationExpanded,
  AnnotationCollapsed,
  ViewerAnnotationAdded,
  CommentAdded,
  Seeked,
  SessionEnded,
};

inline constexpr std::string_view kEventKindNames[] = {
    "SessionStarted",    "PlaybackResumed",   "PlaybackPaused",     "SceneEntered",         "QuestionPresented",
    "QuestionAnswered",  "ForkPresented",     "ChoosePath",         "OverviewOpened",       "OverviewNavigated",
    "OverviewClosed",    "AnnotationsShown",  "AnnotationsHidden",  "AnnotationExpanded",   "AnnotationCollapsed",
    "ViewerAnnotationAdded", "CommentAdded",  "Seeked",             "SessionEnded",
};

inline constexpr std::size_t kEventKindCount = std::size(kEventKindNames);

inline std::string_view to_string(EventKind k) { return kEventKindNames[static_cast<std::size_t>(k)]; }

inline std::optional<EventKind> event_kind_from(std::string_view s) {
  for (std::size_t i = 0; i < kEventKindCount; ++i)
    if (kEventKindNames[i] == s) return static_cast<EventKind>(i);
  return std::nullopt;
}

struct SessionEvent {
  std::int64_t seq = 0;
  Timestamp wall_time{};
  Playhead playhead;
  EventKind kind = EventKind::SessionStarted;
  Json payload = Json::object();

  bool operator==(const SessionEvent&) const = default;
};

using SessionLog = std::vector<SessionEvent>;

// ---------------------------------------------------------------------------
// Viewer inputs

namespace input {
struct Play {};
struct Pause {};
/// Media time passes; moves the playhead only while Playing. Never logged.
struct Tick {
  std::int64_t ms = 0;
};
/// The current scene's media finished.
struct SceneEnd {};
struct Answer {
  std::size_t chosen_index = 0;
};
/// Leaves question feedback and continues to the question's successor.
struct Acknowledge {};
struct ChoosePath {
  std::string option_id;
};
struct OpenOverview {};
struct Navigate {
  NodeId target;
};
struct CloseOverview {};
struct ToggleAnnotations {};
struct ExpandAnnotation {
  std::string annotation_id;
};
struct CollapseAnnotation {};
/// author_kind and created_at are stamped by the engine.
struct AddAnnotation {
  Annotation annotation;
};
struct AddComment {
  std::string text;
};
/// Seek within the current node's media.
struct Seek {
  std::int64_t offset_ms = 0;
};
struct Quit {};
}  // namespace input

using ViewerInput = std::variant<input::Play, input::Pause, input::Tick, input::SceneEnd, input::Answer,
                                 input::Acknowledge, input::ChoosePath, input::OpenOverview, input::Navigate,
                                 input::CloseOverview, input::ToggleAnnotations, input::ExpandAnnotation,
                                 input::CollapseAnnotation, input::AddAnnotation, input::AddComment, input::Seek,
                                 input::Quit>;

inline std::string_view input_name(const ViewerInput& in) {
  static constexpr std::string_view names[] = {
      "Play",     "Pause",        "Tick",          "SceneEnd",          "Answer",           "Acknowledge",
      "ChoosePath", "OpenOverview", "Navigate",    "CloseOverview",     "ToggleAnnotations", "ExpandAnnotation",
      "CollapseAnnotation", "AddAnnotation", "AddComment", "Seek", "Quit"};
  return names[in.index()];
}

struct Transition {
  SessionState state;
  std::vector<SessionEvent> events;
};

// ---------------------------------------------------------------------------
// Interaction classes

enum class InteractionClass { mandatory, optional, system };

inline std::string_view to_string(InteractionClass c) {
  switch (c) {
    case InteractionClass::mandatory: return "mandatory";
    case InteractionClass::optional: return "optional";
    case InteractionClass::system: return "system";
  }
  return "?";
}

/// `context` is the session state before the event's input was applied.
/// A path choice at a fork the viewer already passed once, picking an
/// option not taken before, is an additional path and thus optional;
/// re-taking a known option just to leave the fork again stays mandatory.
inline InteractionClass classify_interaction(const SessionEvent& e, const SessionState& context) {
  switch (e.kind) {
    case EventKind::AnnotationExpanded:
    case EventKind::OverviewNavigated:
    case EventKind::ViewerAnnotationAdded:
    case EventKind::CommentAdded:
      return InteractionClass::optional;
    case EventKind::QuestionAnswered:
      return InteractionClass::mandatory;
    case EventKind::ChoosePath: {
      const ForkChoice choice{e.payload.value("node", ""), e.payload.value("option_id", "")};
      if (context.fork_satisfied(choice.fork) && !context.branch_paths_seen.contains(choice))
        return InteractionClass::optional;
      return InteractionClass::mandatory;
    }
    default:
      return InteractionClass::system;
  }
}

// ---------------------------------------------------------------------------
// Engine

namespace detail {

inline std::string random_session_id() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::ostringstream os;
  os << std::hex;
  for (int i = 0; i < 2; ++i) {
    os.width(16);
    os.fill('0');
    os << rng();
  }
  return os.str();
}

/// Annotations (creator and this session's viewer ones) anchored to `node`.
inline std::vector<const Annotation*> annotations_on(const VideoProject& p, const SessionState& s, std::string_view node) {
  std::vector<const Annotation*> out;
  for (const auto& a : p.annotations)
    if (a.anchor.node == node) out.push_back(&a);
  for (const auto& a : s.viewer_annotations)
    if (a.anchor.node == node) out.push_back(&a);
  return out;
}

/// Nodes a viewer may jump to: everything reachable from the start through
/// scene/question edges and fork options this session has already taken.
inline std::set<NodeId> unlocked_nodes(const VideoProject& p, const SessionState& s) {
  std::set<NodeId> seen{p.start_node};
  std::vector<NodeId> stack{p.start_node};
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    const Node* n = p.find(id);
    if (!n) continue;
    std::vector<NodeId> next;
    if (const auto* f = std::get_if<ForkNode>(n)) {
      for (const auto& o : f->options)
        if (s.branch_paths_seen.contains({id, o.option_id})) next.push_back(o.target);
    } else {
      next = successors(*n);
    }
    for (auto& t : next)
      if (seen.insert(t).second) stack.push_back(t);
  }
  return seen;
}

class Step {
 public:
  Step(const VideoProject& p, SessionState s, Timestamp now) : p_(p), s_(std::move(s)), now_(now) {}

  SessionState& state() { return s_; }
  std::vector<SessionEvent>& events() { return events_; }

  void emit(EventKind kind, Json payload = Json::object()) { emit_at(s_.playhead(), kind, std::move(payload)); }

  void emit_at(Playhead at, EventKind kind, Json payload = Json::object()) {
    events_.push_back({s_.next_seq++, now_, std::move(at), kind, std::move(payload)});
  }

  [[noreturn]] void illegal(std::string_view input, const std::string& why = {}) const {
    throw IllegalTransition(std::string(to_string(s_.mode.mode)), std::string(input), why);
  }

  void require_mode(std::string_view input, std::initializer_list<Mode> allowed) const {
    if (std::find(allowed.begin(), allowed.end(), s_.mode.mode) == allowed.end()) illegal(input);
  }

  /// Moves to `id` at offset zero and presents whatever lives there.
  void enter(const NodeId& id) {
    const Node* n = p_.find(id);
    if (!n) throw DanglingTarget(id);
    s_.current_node = id;
    s_.playhead_ms = 0;
    if (std::holds_alternative<SceneNode>(*n)) {
      s_.mode = {Mode::Playing};
      emit(EventKind::SceneEntered, {{"node", id}});
    } else if (std::holds_alternative<QuestionNode>(*n)) {
      s_.mode = {Mode::PausedQuestion, id};
      emit(EventKind::QuestionPresented, {{"node", id}});
    } else if (std::holds_alternative<ForkNode>(*n)) {
      s_.mode = {Mode::AwaitingFork, id};
      emit(EventKind::ForkPresented, {{"node", id}});
    } else {
      end();
    }
  }

  void end() {
    s_.mode = {Mode::Ended};
    s_.ended_at = now_;
    emit(EventKind::SessionEnded);
  }

  void operator()(const input::Tick&) {}  // handled before a Step exists

  void operator()(const input::Play&) {
    require_mode("Play", {Mode::PausedByUser});
    s_.mode = {Mode::Playing};
    emit(EventKind::PlaybackResumed);
  }

  void operator()(const input::Pause&) {
    require_mode("Pause", {Mode::Playing});
    s_.mode = {Mode::PausedByUser};
    emit(EventKind::PlaybackPaused);
  }

  void operator()(const input::SceneEnd&) {
    require_mode("SceneEnd", {Mode::Playing});
    const auto& scene = std::get<SceneNode>(p_.nodes.at(s_.current_node));
    s_.playhead_ms = scene.duration_ms;
    enter(scene.next);
  }

  void operator()(const input::Answer& a) {
    require_mode("Answer", {Mode::PausedQuestion});
    const NodeId q_id = s_.mode.node;
    const auto& q = std::get<QuestionNode>(p_.nodes.at(q_id));
    if (a.chosen_index >= q.choices.size()) illegal("Answer", "choice index out of range");
    const bool correct = a.chosen_index == q.correct_index;
    const bool counts = !s_.answered.contains(q_id);
    if (counts) s_.answered.emplace(q_id, AnswerRecord{a.chosen_index, correct, s_.next_seq});
    emit(EventKind::QuestionAnswered,
         {{"node", q_id}, {"chosen_index", a.chosen_index}, {"correct", correct}, {"counts_for_metrics", counts}});
    s_.mode = {Mode::PausedQuestionFeedback, q_id, a.chosen_index};
  }

  void operator()(const input::Acknowledge&) {
    require_mode("Acknowledge", {Mode::PausedQuestionFeedback});
    enter(std::get<QuestionNode>(p_.nodes.at(s_.mode.node)).next);
  }

  void operator()(const input::ChoosePath& c) {
    require_mode("ChoosePath", {Mode::AwaitingFork});
    const NodeId fork_id = s_.mode.node;
    const auto& fork = std::get<ForkNode>(p_.nodes.at(fork_id));
    const ForkOption* option = fork.find_option(c.option_id);
    if (!option) illegal("ChoosePath", "no option '" + c.option_id + "'");
    emit(EventKind::ChoosePath, {{"node", fork_id}, {"option_id", c.option_id}});
    s_.forks_taken.push_back({fork_id, c.option_id});
    s_.branch_paths_seen.insert({fork_id, c.option_id});
    enter(option->target);
  }

  void operator()(const input::OpenOverview&) {
    require_mode("OpenOverview", {Mode::Playing, Mode::PausedByUser});
    s_.mode = {Mode::OverviewOpen, {}, 0, {}, s_.mode.mode};
    emit(EventKind::OverviewOpened);
  }

  void operator()(const input::Navigate& n) {
    require_mode("Navigate", {Mode::OverviewOpen});
    const Node* target = p_.find(n.target);
    if (!target || !is_nav_point(*target)) illegal("Navigate", "'" + n.target + "' is not a navigation point");
    if (!unlocked_nodes(p_, s_).contains(n.target)) illegal("Navigate", "'" + n.target + "' lies behind an unchosen path");
    const Playhead from = s_.playhead();
    const Playhead to{n.target, 0};
    emit(EventKind::OverviewNavigated, {{"target", n.target}});
    emit_at(from, EventKind::Seeked, {{"from", {{"node", from.node}, {"offset_ms", from.offset_ms}}},
                                      {"to", {{"node", to.node}, {"offset_ms", to.offset_ms}}}});
    enter(n.target);
  }

  void operator()(const input::CloseOverview&) {
    require_mode("CloseOverview", {Mode::OverviewOpen});
    s_.mode = {s_.mode.resume_mode};
    emit(EventKind::OverviewClosed);
  }

  void operator()(const input::ToggleAnnotations&) {
    require_mode("ToggleAnnotations", {Mode::Playing, Mode::PausedByUser});
    if (annotations_on(p_, s_, s_.current_node).empty()) illegal("ToggleAnnotations", "no annotations on this node");
    s_.annotations_visible = !s_.annotations_visible;
    emit(s_.annotations_visible ? EventKind::AnnotationsShown : EventKind::AnnotationsHidden);
  }

  void operator()(const input::ExpandAnnotation& x) {
    require_mode("ExpandAnnotation", {Mode::Playing, Mode::PausedByUser});
    if (!s_.annotations_visible) illegal("ExpandAnnotation", "annotations are hidden");
    const auto here = annotations_on(p_, s_, s_.current_node);
    const bool shown = std::any_of(here.begin(), here.end(), [&](const Annotation* a) {
      return a->annotation_id == x.annotation_id && a->anchor.covers(s_.current_node, s_.playhead_ms);
    });
    if (!shown) illegal("ExpandAnnotation", "annotation '" + x.annotation_id + "' is not shown at the playhead");
    s_.mode = {Mode::AnnotationExpanded, {}, 0, x.annotation_id, s_.mode.mode};
    emit(EventKind::AnnotationExpanded, {{"annotation_id", x.annotation_id}});
  }

  void operator()(const input::CollapseAnnotation&) {
    require_mode("CollapseAnnotation", {Mode::AnnotationExpanded});
    const std::string id = s_.mode.annotation_id;
    s_.mode = {s_.mode.resume_mode};
    emit(EventKind::AnnotationCollapsed, {{"annotation_id", id}});
  }

  void operator()(const input::AddAnnotation& add) {
    require_mode("AddAnnotation", {Mode::Playing, Mode::PausedByUser});
    Annotation a = add.annotation;
    a.author_kind = AuthorKind::viewer;
    a.created_at = now_;
    const Node* anchor = p_.find(a.anchor.node);
    if (a.annotation_id.empty() || a.title.empty()) illegal("AddAnnotation", "annotation needs an id and a title");
    if (!anchor || a.anchor.start_ms < 0 || a.anchor.start_ms > a.anchor.end_ms ||
        a.anchor.end_ms > node_duration(*anchor))
      illegal("AddAnnotation", "anchor outside node media");
    auto same_id = [&](const Annotation& o) { return o.annotation_id == a.annotation_id; };
    if (std::any_of(p_.annotations.begin(), p_.annotations.end(), same_id) ||
        std::any_of(s_.viewer_annotations.begin(), s_.viewer_annotations.end(), same_id))
      illegal("AddAnnotation", "annotation id '" + a.annotation_id + "' already used");
    emit(EventKind::ViewerAnnotationAdded, {{"annotation", codec::to_json(a)}});
    s_.viewer_annotations.push_back(std::move(a));
  }

  void operator()(const input::AddComment& c) {
    if (c.text.empty()) illegal("AddComment", "empty comment");
    s_.comments.push_back({c.text, s_.playhead(), now_});
    emit(EventKind::CommentAdded, {{"text", c.text}});
  }

  void operator()(const input::Seek& k) {
    require_mode("Seek", {Mode::Playing, Mode::PausedByUser, Mode::PausedQuestionFeedback, Mode::OverviewOpen,
                          Mode::AnnotationExpanded});
    const auto duration = node_duration(p_, s_.current_node);
    if (k.offset_ms < 0 || k.offset_ms > duration) illegal("Seek", "offset outside node media");
    const Playhead from = s_.playhead();
    s_.playhead_ms = k.offset_ms;
    emit_at(from, EventKind::Seeked, {{"from", {{"node", from.node}, {"offset_ms", from.offset_ms}}},
                                      {"to", {{"node", from.node}, {"offset_ms", k.offset_ms}}}});
  }

  void operator()(const input::Quit&) {
    // Leaving is allowed anywhere except while a decision is pending.
    require_mode("Quit", {Mode::Playing, Mode::PausedByUser, Mode::PausedQuestionFeedback, Mode::OverviewOpen,
                          Mode::AnnotationExpanded});
    end();
  }

 private:
  const VideoProject& p_;
  SessionState s_;
  Timestamp now_;
  std::vector<SessionEvent> events_;
};

}  // namespace detail

struct StartOptions {
  std::optional<std::string> session_id;
};

/// Validates the project, then opens a session at the start node.
inline Transition start_session(const VideoProject& p, const std::string& viewer_id, Timestamp now,
                                const StartOptions& opts = {}) {
  const auto report = validate_graph(p);
  if (!report.playable()) {
    const auto& first = report.errors.front();
    throw InvalidProject("project '" + p.id + "' has " + std::to_string(report.errors.size()) +
                         " validation error(s), first: " + std::string(to_string(first.code)) + " " + first.detail);
  }
  SessionState s;
  s.session_id = opts.session_id.value_or(detail::random_session_id());
  s.project_id = p.id;
  s.viewer_id = viewer_id;
  s.current_node = p.start_node;
  s.started_at = now;
  s.last_wall_time = now;
  detail::Step step(p, std::move(s), now);
  step.emit(EventKind::SessionStarted,
            {{"project_id", p.id}, {"session_id", step.state().session_id}, {"viewer_id", viewer_id}});
  step.enter(p.start_node);
  return {std::move(step.state()), std::move(step.events())};
}

inline Transition start_session(const VideoProject& p, const std::string& viewer_id, const Clock& clock,
                                const StartOptions& opts = {}) {
  return start_session(p, viewer_id, clock(), opts);
}

/// Applies one viewer input. Wall time never runs backwards: an earlier
/// `now` is clamped to the last event time.
inline Transition apply_event(const VideoProject& p, const SessionState& before, const ViewerInput& in, Timestamp now) {
  if (before.mode.mode == Mode::Ended)
    throw IllegalTransition(std::string(to_string(Mode::Ended)), std::string(input_name(in)));
  if (const auto* tick = std::get_if<input::Tick>(&in)) {
    SessionState s = before;
    if (tick->ms < 0) throw IllegalTransition(std::string(to_string(s.mode.mode)), "Tick", "negative time");
    if (s.mode.mode == Mode::Playing)
      s.playhead_ms = std::min(s.playhead_ms + tick->ms, node_duration(p, s.current_node));
    return {std::move(s), {}};
  }
  now = std::max(now, before.last_wall_time);
  SessionState s = before;
  if (before.mode.mode == Mode::Playing) s.active_time_ms += (now - before.last_wall_time).count();
  s.last_wall_time = now;
  detail::Step step(p, std::move(s), now);
  std::visit(step, in);
  for (const auto& e : step.events())
    if (classify_interaction(e, before) == InteractionClass::optional) ++step.state().optional_interactions;
  return {std::move(step.state()), std::move(step.events())};
}

inline Transition apply_event(const VideoProject& p, const SessionState& before, const ViewerInput& in,
                              const Clock& clock) {
  return apply_event(p, before, in, clock());
}

struct Feedback {
  std::size_t correct_index = 0;
  std::size_t chosen_index = 0;
  bool correct = false;
  bool counts_for_metrics = false;
};

struct AnswerResult {
  Transition transition;
  Feedback feedback;
};

inline AnswerResult answer_question(const VideoProject& p, const SessionState& s, std::size_t chosen_index,
                                    Timestamp now) {
  if (s.mode.mode != Mode::PausedQuestion) throw IllegalTransition(std::string(to_string(s.mode.mode)), "Answer");
  const auto& q = std::get<QuestionNode>(p.nodes.at(s.mode.node));
  auto t = apply_event(p, s, input::Answer{chosen_index}, now);
  const auto& payload = t.events.back().payload;
  Feedback fb{q.correct_index, chosen_index, payload.at("correct").get<bool>(),
              payload.at("counts_for_metrics").get<bool>()};
  return {std::move(t), fb};
}

// ---------------------------------------------------------------------------
// Metrics

struct SessionMetrics {
  std::int64_t correct_answers = 0;
  std::int64_t questions_available = 0;
  std::int64_t time_spent_ms = 0;
  std::int64_t active_time_ms = 0;
  std::int64_t optional_interactions = 0;
  std::int64_t branch_paths_seen = 0;
  std::int64_t comments = 0;

  double correct_ratio() const {
    return questions_available == 0 ? 0.0 : static_cast<double>(correct_answers) / static_cast<double>(questions_available);
  }

  bool operator==(const SessionMetrics&) const = default;
};

/// Metrics read off a session state's accumulators.
inline SessionMetrics metrics_from_state(const SessionState& s, const VideoProject& p) {
  SessionMetrics m;
  m.correct_answers = std::count_if(s.answered.begin(), s.answered.end(), [](const auto& kv) { return kv.second.correct; });
  m.questions_available = static_cast<std::int64_t>(question_count(p));
  m.time_spent_ms = (s.ended_at.value_or(s.last_wall_time) - s.started_at).count();
  m.active_time_ms = s.active_time_ms;
  m.optional_interactions = s.optional_interactions;
  m.branch_paths_seen = static_cast<std::int64_t>(s.branch_paths_seen.size());
  m.comments = static_cast<std::int64_t>(s.comments.size());
  return m;
}

// ---------------------------------------------------------------------------
// Replay

struct DerivedInput {
  ViewerInput input;
  /// The group opens with a node being entered (scene end, feedback
  /// acknowledged); its playhead is the destination, not the current spot.
  bool enters_node = false;
};

/// Recovers the viewer input that produced a group's leading event.
inline std::optional<DerivedInput> input_from_event(const SessionEvent& e, const SessionState& s, const VideoProject& p) {
  const Json& pl = e.payload;
  auto str = [&](const char* key) -> std::optional<std::string> {
    auto it = pl.find(key);
    if (it == pl.end() || !it->is_string()) return std::nullopt;
    return it->get<std::string>();
  };
  auto entering = [&]() -> std::optional<DerivedInput> {
    if (s.mode.mode == Mode::Playing) return DerivedInput{input::SceneEnd{}, true};
    if (s.mode.mode == Mode::PausedQuestionFeedback) return DerivedInput{input::Acknowledge{}, true};
    return std::nullopt;
  };
  switch (e.kind) {
    case EventKind::SessionStarted: return std::nullopt;
    case EventKind::PlaybackResumed: return DerivedInput{input::Play{}};
    case EventKind::PlaybackPaused: return DerivedInput{input::Pause{}};
    case EventKind::SceneEntered:
    case EventKind::QuestionPresented:
    case EventKind::ForkPresented: return entering();
    case EventKind::SessionEnded: {
      const Node* at = p.find(e.playhead.node);
      if (at && std::holds_alternative<EndNode>(*at) && s.current_node != e.playhead.node) return entering();
      return DerivedInput{input::Quit{}};
    }
    case EventKind::QuestionAnswered: {
      auto it = pl.find("chosen_index");
      if (it == pl.end() || !it->is_number_integer() || it->get<std::int64_t>() < 0) return std::nullopt;
      return DerivedInput{input::Answer{it->get<std::size_t>()}};
    }
    case EventKind::ChoosePath:
      if (auto o = str("option_id")) return DerivedInput{input::ChoosePath{*o}};
      return std::nullopt;
    case EventKind::OverviewOpened: return DerivedInput{input::OpenOverview{}};
    case EventKind::OverviewNavigated:
      if (auto t = str("target")) return DerivedInput{input::Navigate{*t}};
      return std::nullopt;
    case EventKind::OverviewClosed: return DerivedInput{input::CloseOverview{}};
    case EventKind::AnnotationsShown:
    case EventKind::AnnotationsHidden: return DerivedInput{input::ToggleAnnotations{}};
    case EventKind::AnnotationExpanded:
      if (auto id = str("annotation_id")) return DerivedInput{input::ExpandAnnotation{*id}};
      return std::nullopt;
    case EventKind::AnnotationCollapsed: return DerivedInput{input::CollapseAnnotation{}};
    case EventKind::ViewerAnnotationAdded: {
      auto it = pl.find("annotation");
      if (it == pl.end()) return std::nullopt;
      try {
        return DerivedInput{input::AddAnnotation{codec::annotation_from_json(*it, "/payload/annotation", nullptr)}};
      } catch (const SyntaxError&) {
        return std::nullopt;
      }
    }
    case EventKind::CommentAdded:
      if (auto t = str("text")) return DerivedInput{input::AddComment{*t}};
      return std::nullopt;
    case EventKind::Seeked: {
      auto to = pl.find("to");
      if (to == pl.end() || !to->is_object() || !to->contains("offset_ms") || !(*to)["offset_ms"].is_number_integer())
        return std::nullopt;
      return DerivedInput{input::Seek{(*to)["offset_ms"].get<std::int64_t>()}};
    }
  }
  return std::nullopt;
}

/// Brings the state's playhead up to where an input-led event says it was.
/// Only Playing lets media time pass; elsewhere the position must match.
inline SessionState sync_playhead(const VideoProject& p, const SessionState& s, const Playhead& at) {
  if (at.node != s.current_node)
    throw IllegalTransition(std::string(to_string(s.mode.mode)), "Tick", "event at node '" + at.node + "' but session is at '" + s.current_node + "'");
  if (at.offset_ms == s.playhead_ms) return s;
  if (s.mode.mode != Mode::Playing || at.offset_ms < s.playhead_ms || at.offset_ms > node_duration(p, s.current_node))
    throw IllegalTransition(std::string(to_string(s.mode.mode)), "Tick", "playhead moved without playback");
  SessionState out = s;
  out.playhead_ms = at.offset_ms;
  return out;
}

namespace detail {

inline void check_log_shape(const SessionLog& log, const VideoProject& p) {
  if (log.empty()) throw CorruptLog(0, "empty log");
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& e = log[i];
    if (e.seq != static_cast<std::int64_t>(i)) throw CorruptLog(static_cast<std::int64_t>(i), "sequence gap (found seq " + std::to_string(e.seq) + ")");
    if (i > 0 && e.wall_time < log[i - 1].wall_time) throw CorruptLog(e.seq, "wall time runs backwards");
    const Node* n = p.find(e.playhead.node);
    if (!n) throw CorruptLog(e.seq, "playhead on unknown node '" + e.playhead.node + "'");
    if (e.playhead.offset_ms < 0 || e.playhead.offset_ms > node_duration(*n)) throw CorruptLog(e.seq, "playhead offset out of range");
  }
  if (log.front().kind != EventKind::SessionStarted) throw CorruptLog(0, "log must open with SessionStarted");
}

inline std::size_t match_group(const std::vector<SessionEvent>& produced, const SessionLog& log, std::size_t at) {
  for (std::size_t k = 0; k < produced.size(); ++k) {
    if (at + k >= log.size()) throw CorruptLog(produced[k].seq, "log ends inside a transition");
    if (!(produced[k] == log[at + k]))
      throw CorruptLog(log[at + k].seq, "recorded " + std::string(to_string(log[at + k].kind)) + " differs from replayed " +
                                            std::string(to_string(produced[k].kind)));
  }
  return at + produced.size();
}

}  // namespace detail

/// Folds the log back into a session state, checking every recorded event
/// against what the engine produces for the recovered input.
inline SessionState replay(const SessionLog& log, const VideoProject& p) {
  detail::check_log_shape(log, p);
  const SessionEvent& first = log.front();
  const auto project_id = first.payload.value("project_id", "");
  if (project_id != p.id) throw CorruptLog(0, "log belongs to project '" + project_id + "'");
  Transition t = start_session(p, first.payload.value("viewer_id", ""), first.wall_time,
                               StartOptions{first.payload.value("session_id", "")});
  std::size_t i = detail::match_group(t.events, log, 0);
  SessionState s = std::move(t.state);
  while (i < log.size()) {
    const SessionEvent& e = log[i];
    auto derived = input_from_event(e, s, p);
    if (!derived) throw CorruptLog(e.seq, std::string(to_string(e.kind)) + " cannot start a transition in mode " + std::string(to_string(s.mode.mode)));
    try {
      if (!derived->enters_node) s = sync_playhead(p, s, e.playhead);
      t = apply_event(p, s, derived->input, e.wall_time);
    } catch (const IllegalTransition& err) {
      throw CorruptLog(e.seq, err.what());
    } catch (const std::out_of_range& err) {
      throw CorruptLog(e.seq, err.what());
    }
    i = detail::match_group(t.events, log, i);
    s = std::move(t.state);
  }
  return s;
}

/// Counts metrics straight off the events (after confirming the log
/// replays). Kept independent of the engine's own accumulators.
inline SessionMetrics session_metrics(const SessionLog& log, const VideoProject& p) {
  const SessionState replayed = replay(log, p);
  SessionMetrics m;
  m.questions_available = static_cast<std::int64_t>(question_count(p));
  std::set<NodeId> answered;
  std::set<NodeId> forks_passed;
  std::set<ForkChoice> paths;
  std::optional<Timestamp> started, ended;
  for (const auto& e : log) {
    switch (e.kind) {
      case EventKind::SessionStarted: started = e.wall_time; break;
      case EventKind::SessionEnded: ended = e.wall_time; break;
      case EventKind::QuestionAnswered: {
        const NodeId q = e.payload.at("node").get<std::string>();
        if (answered.insert(q).second &&
            e.payload.at("chosen_index").get<std::size_t>() == std::get<QuestionNode>(p.nodes.at(q)).correct_index)
          ++m.correct_answers;
        break;
      }
      case EventKind::ChoosePath: {
        const ForkChoice c{e.payload.at("node").get<std::string>(), e.payload.at("option_id").get<std::string>()};
        if (forks_passed.contains(c.fork) && !paths.contains(c)) ++m.optional_interactions;
        forks_passed.insert(c.fork);
        paths.insert(c);
        break;
      }
      case EventKind::AnnotationExpanded:
      case EventKind::OverviewNavigated:
      case EventKind::ViewerAnnotationAdded:
        ++m.optional_interactions;
        break;
      case EventKind::CommentAdded:
        ++m.optional_interactions;
        ++m.comments;
        break;
      default: break;
    }
  }
  m.branch_paths_seen = static_cast<std::int64_t>(paths.size());
  m.time_spent_ms = (ended.value_or(log.back().wall_time) - started.value_or(log.front().wall_time)).count();
  m.active_time_ms = replayed.active_time_ms;
  return m;
}

// ---------------------------------------------------------------------------
// .vvlog lines

inline std::string to_log_line(const SessionEvent& e) {
  OrderedJson j;
  j["seq"] = e.seq;
  j["wall_time"] = format_rfc3339(e.wall_time);
  j["node"] = e.playhead.node;
  j["offset_ms"] = e.playhead.offset_ms;
  j["kind"] = to_string(e.kind);
  j["payload"] = OrderedJson::parse(e.payload.dump());  // payload keys stay sorted
  return j.dump() + "\n";
}

inline std::string serialize_log(const SessionLog& log) {
  std::string out;
  for (const auto& e : log) out += to_log_line(e);
  return out;
}

/// Parses one record; throws SyntaxError naming the offending field.
inline SessionEvent event_from_json(const Json& j, const std::string& where) {
  codec::ObjectReader r(j, where, nullptr);
  SessionEvent e;
  e.seq = r.integer("seq");
  try {
    e.wall_time = parse_rfc3339(r.string("wall_time"));
  } catch (const std::invalid_argument& err) {
    throw SyntaxError(r.child("wall_time"), err.what());
  }
  e.playhead.node = r.string("node");
  e.playhead.offset_ms = r.integer("offset_ms");
  const auto kind = r.string("kind");
  const auto k = event_kind_from(kind);
  if (!k) throw SyntaxError(r.child("kind"), "unknown event kind '" + kind + "'");
  e.kind = *k;
  e.payload = r.required("payload");
  if (!e.payload.is_object()) throw SyntaxError(r.child("payload"), "expected an object");
  r.finish();
  return e;
}

inline Json event_to_json(const SessionEvent& e) {
  return {{"seq", e.seq},
          {"wall_time", format_rfc3339(e.wall_time)},
          {"node", e.playhead.node},
          {"offset_ms", e.playhead.offset_ms},
          {"kind", to_string(e.kind)},
          {"payload", e.payload}};
}

/// Malformed lines surface as CorruptLog at the line's position.
inline SessionLog parse_log(std::string_view text) {
  SessionLog out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto index = static_cast<std::int64_t>(out.size());
    try {
      out.push_back(event_from_json(Json::parse(line), "line " + std::to_string(index + 1)));
    } catch (const Json::exception& err) {
      throw CorruptLog(index, err.what());
    } catch (const SyntaxError& err) {
      throw CorruptLog(index, err.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convenience wrapper holding one session's state and log

class Session {
 public:
  static Session start(const VideoProject& project, const std::string& viewer_id, Clock clock,
                       const StartOptions& opts = {}) {
    Session s(project, std::move(clock));
    auto t = start_session(project, viewer_id, s.clock_(), opts);
    s.state_ = std::move(t.state);
    s.log_ = std::move(t.events);
    return s;
  }

  /// Returns the events this input produced.
  std::vector<SessionEvent> apply(const ViewerInput& in) {
    auto t = apply_event(*project_, state_, in, clock_());
    state_ = std::move(t.state);
    log_.insert(log_.end(), t.events.begin(), t.events.end());
    return std::move(t.events);
  }

  const SessionState& state() const { return state_; }
  const SessionLog& log() const { return log_; }
  const VideoProject& project() const { return *project_; }

 private:
  Session(const VideoProject& project, Clock clock) : project_(&project), clock_(std::move(clock)) {}

  const VideoProject* project_;
  Clock clock_;
  SessionState state_;
  SessionLog log_;
};

}  // namespace vvp
