#pragma once

// HTTP service over a data directory:
//
//   <data_dir>/projects/*.vvp          projects; media uris resolve against this directory
//   <data_dir>/sessions/<id>.vvlog     one append-only log per session
//
// `Service` holds the logic and answers with status/body pairs so it can be
// driven without a socket; `HttpServer` binds it to routes.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <system_error>
#include <vector>

#include <httplib.h>

#include "vvp/analytics.hpp"
#include "vvp/project_io.hpp"
#include "vvp/session.hpp"

namespace vvp::server {

namespace fs = std::filesystem;

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline ApiResponse json_response(const Json& j, int status = 200) { return {status, canonical_dump(j), "application/json"}; }

inline ApiResponse error_response(int status, std::string_view code, const std::string& message, Json extra = Json::object()) {
  extra["error"] = code;
  extra["message"] = message;
  return json_response(extra, status);
}

/// Appends and fsyncs before returning, so an acknowledged event survives a crash.
inline void append_durably(const fs::path& file, std::string_view bytes, bool sync = true) {
  const int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) throw std::system_error(errno, std::generic_category(), "open " + file.string());
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw std::system_error(err, std::generic_category(), "write " + file.string());
    }
    done += static_cast<std::size_t>(n);
  }
  if (sync && ::fsync(fd) != 0) {
    const int err = errno;
    ::close(fd);
    throw std::system_error(err, std::generic_category(), "fsync " + file.string());
  }
  ::close(fd);
}

inline bool is_safe_id(std::string_view id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  return true;
}

inline std::string mime_for(const fs::path& file, const std::string& hint) {
  if (!hint.empty()) return hint;
  static const std::map<std::string, std::string> types = {
      {".mp4", "video/mp4"}, {".webm", "video/webm"}, {".ogv", "video/ogg"}, {".mov", "video/quicktime"},
      {".png", "image/png"}, {".jpg", "image/jpeg"},  {".jpeg", "image/jpeg"}, {".vtt", "text/vtt"}};
  const auto it = types.find(file.extension().string());
  return it == types.end() ? "application/octet-stream" : it->second;
}

// ---------------------------------------------------------------------------
// JSON views

/// What a client needs to resume rendering. A question's correct_index is
/// included only once this session has answered it.
inline Json snapshot_json(const SessionState& s, const VideoProject& p, bool ended_status) {
  Json answered = Json::object();
  for (const auto& [q, a] : s.answered) answered[q] = {{"chosen_index", a.chosen_index}, {"correct", a.correct}, {"seq", a.seq}};
  Json forks = Json::array();
  for (const auto& c : s.forks_taken) forks.push_back({{"fork", c.fork}, {"option_id", c.option_id}});
  Json paths = Json::array();
  for (const auto& c : s.branch_paths_seen) paths.push_back({{"fork", c.fork}, {"option_id", c.option_id}});

  Json j{{"session_id", s.session_id},
         {"project_id", s.project_id},
         {"viewer_id", s.viewer_id},
         {"status", ended_status ? "ended" : "active"},
         {"mode", to_string(s.mode.mode)},
         {"current_node", s.current_node},
         {"playhead_ms", s.playhead_ms},
         {"node_duration_ms", node_duration(p, s.current_node)},
         {"annotations_visible", s.annotations_visible},
         {"next_seq", s.next_seq},
         {"head", s.next_seq - 1},
         {"answered", std::move(answered)},
         {"forks_taken", std::move(forks)},
         {"branch_paths_seen", std::move(paths)},
         {"started_at", format_rfc3339(s.started_at)},
         {"last_event_at", format_rfc3339(s.last_wall_time)}};

  const Mode m = s.mode.mode;
  if (m == Mode::OverviewOpen || m == Mode::AnnotationExpanded) j["resume_mode"] = to_string(s.mode.resume_mode);
  if (m == Mode::PausedQuestion || m == Mode::PausedQuestionFeedback) {
    const auto& q = std::get<QuestionNode>(p.nodes.at(s.mode.node));
    Json question{{"node", s.mode.node}, {"prompt", q.prompt}, {"choices", q.choices}};
    if (s.answered.contains(s.mode.node)) question["correct_index"] = q.correct_index;
    if (m == Mode::PausedQuestionFeedback) {
      question["chosen_index"] = s.mode.chosen_index;
      question["correct"] = s.mode.chosen_index == q.correct_index;
    }
    j["question"] = std::move(question);
  }
  if (m == Mode::AwaitingFork) {
    const auto& f = std::get<ForkNode>(p.nodes.at(s.mode.node));
    Json options = Json::array();
    for (const auto& o : f.options) options.push_back({{"option_id", o.option_id}, {"label", o.label}});
    j["fork"] = {{"node", s.mode.node}, {"prompt", f.prompt}, {"options", std::move(options)}};
  }
  if (m == Mode::AnnotationExpanded) j["expanded_annotation"] = s.mode.annotation_id;

  // Annotation boxes over the playhead, drawn only while visible.
  Json boxes = Json::array();
  bool any_here = false;
  for (const Annotation* a : detail::annotations_on(p, s, s.current_node)) {
    any_here = true;
    if (s.annotations_visible && a->anchor.start_ms <= s.playhead_ms && s.playhead_ms <= a->anchor.end_ms)
      boxes.push_back(codec::to_json(*a));
  }
  j["annotations_here"] = any_here;
  j["visible_annotations"] = std::move(boxes);

  Json mine = Json::array();
  for (const auto& a : s.viewer_annotations) mine.push_back(codec::to_json(a));
  j["viewer_annotations"] = std::move(mine);
  Json comments = Json::array();
  for (const auto& c : s.comments)
    comments.push_back({{"text", c.text}, {"node", c.at.node}, {"offset_ms", c.at.offset_ms}, {"wall_time", format_rfc3339(c.wall_time)}});
  j["comments"] = std::move(comments);
  return j;
}

/// Project document for players: the canonical form with every
/// correct_index removed.
inline Json player_project_json(const VideoProject& p) {
  Json j = project_to_json(p);
  for (auto& n : j.at("nodes"))
    if (n.value("kind", "") == "question") n.erase("correct_index");
  return j;
}

inline Json navigation_json(const VideoProject& p) {
  Json out = Json::array();
  for (const auto& np : navigation_points(p))
    out.push_back({{"node", np.node},
                   {"timeline_position_ms", np.timeline_position_ms},
                   {"title", np.title},
                   {"category", to_string(np.category)}});
  return out;
}

/// Parses a client event record. wall_time, if sent, is ignored: the
/// server stamps events with its own clock.
inline SessionEvent event_record_from_json(const Json& j) {
  if (!j.is_object()) throw SyntaxError("/", "expected an object");
  auto need = [&](const char* key) -> const Json& {
    const auto it = j.find(key);
    if (it == j.end()) throw SyntaxError(std::string("/") + key, "missing field");
    return *it;
  };
  SessionEvent e;
  const Json& seq = need("seq");
  if (!seq.is_number_integer()) throw SyntaxError("/seq", "expected an integer");
  e.seq = seq.get<std::int64_t>();
  const Json& kind = need("kind");
  if (!kind.is_string()) throw SyntaxError("/kind", "expected a string");
  const auto k = event_kind_from(kind.get<std::string>());
  if (!k) throw SyntaxError("/kind", "unknown event kind '" + kind.get<std::string>() + "'");
  e.kind = *k;
  const Json& node = need("node");
  if (!node.is_string()) throw SyntaxError("/node", "expected a string");
  e.playhead.node = node.get<std::string>();
  const Json& offset = need("offset_ms");
  if (!offset.is_number_integer()) throw SyntaxError("/offset_ms", "expected an integer");
  e.playhead.offset_ms = offset.get<std::int64_t>();
  if (const auto it = j.find("payload"); it != j.end()) {
    if (!it->is_object()) throw SyntaxError("/payload", "expected an object");
    e.payload = *it;
  }
  return e;
}

// ---------------------------------------------------------------------------
// Service

struct ServiceOptions {
  Clock clock = system_clock();
  bool fsync = true;
};

class Service {
 public:
  explicit Service(fs::path data_dir, ServiceOptions opts = {}) : root_(std::move(data_dir)), opts_(std::move(opts)) {
    if (!fs::is_directory(root_)) throw std::invalid_argument("data directory '" + root_.string() + "' does not exist");
    fs::create_directories(sessions_dir());
    load_projects();
    load_sessions();
  }

  const fs::path& data_dir() const { return root_; }
  fs::path projects_dir() const { return root_ / "projects"; }
  fs::path sessions_dir() const { return root_ / "sessions"; }

  /// Files skipped at startup, with the reason.
  const std::vector<std::string>& load_warnings() const { return warnings_; }

  std::size_t session_count() const {
    std::shared_lock lock(sessions_mutex_);
    return sessions_.size();
  }

  // --- projects

  ApiResponse list_projects() const {
    Json out = Json::array();
    for (const auto& [id, p] : projects_) {
      const auto paths = enumerate_branch_paths(*p);
      out.push_back({{"project_id", id},
                     {"title", p->title},
                     {"start_node", p->start_node},
                     {"nodes", p->nodes.size()},
                     {"questions", question_count(*p)},
                     {"forks", fork_count(*p)},
                     {"branch_paths", paths.paths.size()},
                     {"minimum_per_playthrough", paths.minimum_per_playthrough}});
    }
    return json_response(out);
  }

  ApiResponse get_project(const std::string& id) const {
    const auto* p = project(id);
    if (!p) return error_response(404, "NotFound", "unknown project '" + id + "'");
    return json_response(player_project_json(*p));
  }

  ApiResponse get_navigation(const std::string& id) const {
    const auto* p = project(id);
    if (!p) return error_response(404, "NotFound", "unknown project '" + id + "'");
    return json_response(navigation_json(*p));
  }

  ApiResponse export_project(const std::string& id) const {
    const auto* p = project(id);
    if (!p) return error_response(404, "NotFound", "unknown project '" + id + "'");
    const auto logs = logs_for(id);
    return {200, analytics::export_bundle(logs, *p), "application/json"};
  }

  ApiResponse consensus(const std::string& id) const {
    const auto* p = project(id);
    if (!p) return error_response(404, "NotFound", "unknown project '" + id + "'");
    const auto logs = logs_for(id);
    return json_response({{"project_id", id}, {"sessions", logs.size()}, {"forks", analytics::to_json(analytics::fork_consensus(*p, logs))}});
  }

  // --- sessions

  ApiResponse create_session(const std::string& body) {
    Json req;
    try {
      req = Json::parse(body);
    } catch (const Json::exception& e) {
      return error_response(400, "SyntaxError", e.what());
    }
    if (!req.is_object() || !req.contains("project_id") || !req["project_id"].is_string())
      return error_response(400, "SyntaxError", "body needs a string project_id");
    const auto project_id = req["project_id"].get<std::string>();
    const auto viewer_id = req.contains("viewer_id") && req["viewer_id"].is_string() ? req["viewer_id"].get<std::string>() : "";
    const auto* p = project(project_id);
    if (!p) return error_response(404, "NotFound", "unknown project '" + project_id + "'");

    auto stored = std::make_shared<Stored>();
    stored->project = p;
    std::unique_lock lock(sessions_mutex_);
    std::string id;
    if (req.contains("session_id")) {
      // Clients that buffer offline may name the session themselves.
      if (!req["session_id"].is_string() || !is_safe_id(req["session_id"].get<std::string>()))
        return error_response(400, "SyntaxError", "session_id must be 1-128 characters from [A-Za-z0-9._-]");
      id = req["session_id"].get<std::string>();
      if (sessions_.contains(id) || fs::exists(log_path(id)))
        return error_response(409, "SessionExists", "session '" + id + "' already exists");
    } else {
      do id = detail::random_session_id();
      while (sessions_.contains(id) || fs::exists(log_path(id)));
    }
    Transition t;
    try {
      t = start_session(*p, viewer_id, opts_.clock, StartOptions{id});
    } catch (const InvalidProject& e) {
      return error_response(422, "InvalidProject", e.what());
    }
    append_durably(log_path(id), serialize_log(t.events), opts_.fsync);
    stored->state = std::move(t.state);
    stored->log = std::move(t.events);
    sessions_.emplace(id, stored);
    return json_response({{"session_id", id}, {"next_seq", stored->state.next_seq}}, 201);
  }

  ApiResponse snapshot(const std::string& id) const {
    auto s = find(id);
    if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
    std::lock_guard lock(s->mutex);
    return json_response(snapshot_json(s->state, *s->project, s->ended()));
  }

  ApiResponse export_session(const std::string& id) const {
    auto s = find(id);
    if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
    std::lock_guard lock(s->mutex);
    return {200, serialize_log(s->log), "application/x-ndjson"};
  }

  /// One client event record. The record's kind, node and offset name the
  /// viewer action; the engine then produces the events actually stored,
  /// the first of which carries the client's seq.
  ApiResponse ingest_event(const std::string& id, const std::string& body) {
    auto s = find(id);
    if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
    SessionEvent record;
    try {
      record = event_record_from_json(Json::parse(body));
    } catch (const Json::exception& e) {
      return error_response(400, "SyntaxError", e.what());
    } catch (const SyntaxError& e) {
      return error_response(400, "SyntaxError", e.what());
    }
    std::lock_guard lock(s->mutex);
    if (auto refused = refuse(*s, record.seq)) return *refused;
    const auto derived = input_from_event(record, s->state, *s->project);
    if (!derived)
      return error_response(422, "IllegalTransition",
                            std::string(to_string(record.kind)) + " is not a viewer action in mode " + std::string(to_string(s->state.mode.mode)),
                            {{"mode", to_string(s->state.mode.mode)}});
    return commit(*s, derived->input, derived->enters_node ? std::nullopt : std::optional(record.playhead));
  }

  /// Adds a viewer annotation at the current playhead. `seq`, when given,
  /// is checked like an event record's.
  ApiResponse add_annotation(const std::string& id, const std::string& body, std::optional<std::int64_t> seq = std::nullopt) {
    auto s = find(id);
    if (!s) return error_response(404, "NotFound", "unknown session '" + id + "'");
    Annotation a;
    try {
      a = codec::annotation_from_json(Json::parse(body), "", nullptr);
    } catch (const Json::exception& e) {
      return error_response(400, "SyntaxError", e.what());
    } catch (const SyntaxError& e) {
      return error_response(400, "SyntaxError", e.what());
    }
    std::lock_guard lock(s->mutex);
    if (auto refused = refuse(*s, seq.value_or(s->state.next_seq))) return *refused;
    return commit(*s, input::AddAnnotation{std::move(a)}, std::nullopt);
  }

  // --- media

  struct MediaFile {
    fs::path path;
    std::string mime;
    std::optional<std::string> redirect;
  };

  /// First project (by id) declaring the media id wins.
  std::optional<MediaFile> media(const std::string& media_id) const {
    const auto base = fs::weakly_canonical(projects_dir());
    for (const auto& [_, p] : projects_) {
      const auto it = p->media_assets.find(media_id);
      if (it == p->media_assets.end()) continue;
      if (is_url(it->second.uri)) return MediaFile{{}, it->second.mime_hint, it->second.uri};
      const auto path = fs::weakly_canonical(base / it->second.uri);
      const auto rel = path.lexically_relative(base);
      if (rel.empty() || *rel.begin() == "..") return std::nullopt;
      if (!fs::is_regular_file(path)) return std::nullopt;
      return MediaFile{path, mime_for(path, it->second.mime_hint), std::nullopt};
    }
    return std::nullopt;
  }

 private:
  struct Stored {
    mutable std::mutex mutex;
    const VideoProject* project = nullptr;
    SessionState state;
    SessionLog log;

    bool ended() const { return state.mode.mode == Mode::Ended; }
  };

  const VideoProject* project(const std::string& id) const {
    const auto it = projects_.find(id);
    return it == projects_.end() ? nullptr : it->second.get();
  }

  std::shared_ptr<Stored> find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  fs::path log_path(const std::string& session_id) const { return sessions_dir() / (session_id + ".vvlog"); }

  /// Copies of every log for a project, each taken under its session lock.
  std::vector<SessionLog> logs_for(const std::string& project_id) const {
    std::vector<std::shared_ptr<Stored>> matching;
    {
      std::shared_lock lock(sessions_mutex_);
      for (const auto& [_, s] : sessions_)
        if (s->state.project_id == project_id) matching.push_back(s);
    }
    std::vector<SessionLog> out;
    for (const auto& s : matching) {
      std::lock_guard lock(s->mutex);
      out.push_back(s->log);
    }
    return out;
  }

  static std::optional<ApiResponse> refuse(const Stored& s, std::int64_t seq) {
    if (s.ended()) return error_response(410, "SessionEnded", "session has ended", {{"head", s.state.next_seq - 1}});
    if (seq != s.state.next_seq)
      return error_response(409, "SequenceConflict",
                            "expected seq " + std::to_string(s.state.next_seq) + ", got " + std::to_string(seq),
                            {{"head", s.state.next_seq - 1}, {"next_seq", s.state.next_seq}});
    return std::nullopt;
  }

  /// Runs the input, persists the produced events, then advances the mirror.
  ApiResponse commit(Stored& s, const ViewerInput& in, std::optional<Playhead> at) {
    Transition t;
    try {
      const SessionState before = at ? sync_playhead(*s.project, s.state, *at) : s.state;
      t = apply_event(*s.project, before, in, opts_.clock);
    } catch (const IllegalTransition& e) {
      return error_response(422, "IllegalTransition", e.what(), {{"mode", to_string(s.state.mode.mode)}});
    } catch (const std::out_of_range& e) {
      return error_response(422, "IllegalTransition", e.what(), {{"mode", to_string(s.state.mode.mode)}});
    }
    if (t.events.empty()) return error_response(422, "IllegalTransition", "input produced no events");
    append_durably(log_path(s.state.session_id), serialize_log(t.events), opts_.fsync);
    Json events = Json::array();
    for (const auto& e : t.events) events.push_back(event_to_json(e));
    const auto first = t.events.front().seq;
    s.log.insert(s.log.end(), t.events.begin(), t.events.end());
    s.state = std::move(t.state);
    return json_response({{"seq", first}, {"head", s.state.next_seq - 1}, {"events", std::move(events)}});
  }

  void load_projects() {
    if (!fs::is_directory(projects_dir())) return;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(projects_dir()))
      if (entry.is_regular_file() && entry.path().extension() == ".vvp") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        std::ifstream in(f, std::ios::binary);
        const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto parsed = parse_project(bytes);
        if (!parsed.report.playable()) {
          warnings_.push_back(f.filename().string() + ": not playable (" + std::to_string(parsed.report.errors.size()) + " error(s))");
          continue;
        }
        const auto id = parsed.project.id;
        if (projects_.contains(id)) {
          warnings_.push_back(f.filename().string() + ": duplicate project id '" + id + "'");
          continue;
        }
        projects_.emplace(id, std::make_unique<VideoProject>(std::move(parsed.project)));
      } catch (const Error& e) {
        warnings_.push_back(f.filename().string() + ": " + e.what());
      }
    }
  }

  /// Rebuilds every session mirror by replaying its log.
  void load_sessions() {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(sessions_dir()))
      if (entry.is_regular_file() && entry.path().extension() == ".vvlog") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      try {
        std::ifstream in(f, std::ios::binary);
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        auto log = parse_log(text);
        if (log.empty()) throw CorruptLog(0, "empty log");
        const auto project_id = log.front().payload.value("project_id", "");
        const auto* p = project(project_id);
        if (!p) {
          warnings_.push_back(f.filename().string() + ": unknown project '" + project_id + "'");
          continue;
        }
        auto stored = std::make_shared<Stored>();
        stored->project = p;
        stored->state = replay(log, *p);
        stored->log = std::move(log);
        const auto id = stored->state.session_id;
        if (f.stem() != id) {
          warnings_.push_back(f.filename().string() + ": file name does not match session id '" + id + "'");
          continue;
        }
        sessions_.emplace(id, std::move(stored));
      } catch (const Error& e) {
        warnings_.push_back(f.filename().string() + ": " + e.what());
      }
    }
  }

  fs::path root_;
  ServiceOptions opts_;
  std::map<std::string, std::unique_ptr<VideoProject>> projects_;  // fixed after construction
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Stored>> sessions_;
  std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// HTTP binding

class HttpServer {
 public:
  explicit HttpServer(Service& service) : service_(service) {
    // httplib also sets SO_REUSEPORT, which would let a second server share
    // a busy port instead of failing.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    routes();
  }

  /// Binds without serving yet. Port 0 picks a free port. Returns the bound
  /// port, or nullopt if the address is unavailable.
  std::optional<int> bind(const std::string& host, int port) {
    if (port == 0) {
      const int bound = http_.bind_to_any_port(host);
      if (bound <= 0) return std::nullopt;
      return bound;
    }
    if (!http_.bind_to_port(host, port)) return std::nullopt;
    return port;
  }

  /// Blocks until stop().
  bool serve() { return http_.listen_after_bind(); }
  void stop() { http_.stop(); }
  void wait_until_ready() const { http_.wait_until_ready(); }
  bool running() const { return http_.is_running(); }

 private:
  static void send(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  }

  void routes() {
    const std::string id = "([A-Za-z0-9._-]+)";
    http_.Get("/api/projects", [this](const httplib::Request&, httplib::Response& res) { send(res, service_.list_projects()); });
    http_.Get("/api/projects/" + id, [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.get_project(req.matches[1]));
    });
    http_.Get("/api/projects/" + id + "/navigation", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.get_navigation(req.matches[1]));
    });
    http_.Get("/api/projects/" + id + "/export", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.export_project(req.matches[1]));
    });
    http_.Get("/api/projects/" + id + "/analytics/consensus", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.consensus(req.matches[1]));
    });
    http_.Post("/api/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.create_session(req.body));
    });
    http_.Get("/api/sessions/" + id + "/snapshot", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.snapshot(req.matches[1]));
    });
    http_.Post("/api/sessions/" + id + "/events", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.ingest_event(req.matches[1], req.body));
    });
    http_.Post("/api/sessions/" + id + "/annotations", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::int64_t> seq;
      if (req.has_param("seq")) {
        try {
          seq = std::stoll(req.get_param_value("seq"));
        } catch (const std::exception&) {
          return send(res, error_response(400, "SyntaxError", "seq must be an integer"));
        }
      }
      send(res, service_.add_annotation(req.matches[1], req.body, seq));
    });
    http_.Get("/api/sessions/" + id + "/export", [this](const httplib::Request& req, httplib::Response& res) {
      send(res, service_.export_session(req.matches[1]));
    });
    http_.Get("/media/" + id, [this](const httplib::Request& req, httplib::Response& res) {
      const auto m = service_.media(req.matches[1]);
      if (!m) return send(res, error_response(404, "NotFound", "no media file for '" + std::string(req.matches[1]) + "'"));
      if (m->redirect) return res.set_redirect(*m->redirect);
      const auto size = static_cast<std::size_t>(fs::file_size(m->path));
      auto file = std::make_shared<std::ifstream>(m->path, std::ios::binary);
      res.set_header("Accept-Ranges", "bytes");
      res.set_content_provider(size, m->mime, [file](std::size_t offset, std::size_t length, httplib::DataSink& sink) {
        char buf[64 * 1024];
        file->clear();
        file->seekg(static_cast<std::streamoff>(offset));
        const auto n = std::min(length, sizeof buf);
        file->read(buf, static_cast<std::streamsize>(n));
        const auto got = static_cast<std::size_t>(file->gcount());
        if (got == 0) return false;
        return sink.write(buf, got);
      });
    });
    http_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      send(res, error_response(500, "InternalError", what));
    });
  }

  Service& service_;
  httplib::Server http_;
};

}  // namespace vvp::server
