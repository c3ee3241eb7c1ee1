#pragma once

// The `vvp` command line. run_cli() is the whole program minus main(), so
// tests can drive it with captured streams.
//
// Exit status: 0 success, 1 domain error, 2 usage or syntax error.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "vvp/analytics.hpp"
#include "vvp/project_io.hpp"
#include "vvp/server.hpp"
#include "vvp/session.hpp"

namespace vvp::cli {

namespace fs = std::filesystem;

inline constexpr int kOk = 0;
inline constexpr int kDomainError = 1;
inline constexpr int kUsageError = 2;

enum class OutputFormat { text, structured };

struct CliConfig {
  fs::path data_dir = ".";
  std::string host = "127.0.0.1";
  int port = 8080;
  double alpha = analytics::kDefaultAlpha;
  OutputFormat output_format = OutputFormat::text;
};

/// Hooks for embedding `serve`. By default serve blocks until SIGINT or
/// SIGTERM; a test can pass on_listening to talk to the server and stop it.
struct RunOptions {
  std::function<void(server::HttpServer&, int port)> on_listening;
};

/// A domain failure with the message already worded for the user.
class CommandError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CommandError(p.string() + ": cannot read file");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::string describe(const Issue& i) {
  std::string s(to_string(i.code));
  if (i.node) s += " at " + *i.node;
  if (!i.detail.empty()) s += ": " + i.detail;
  return s;
}

inline Json issue_json(const Issue& i) {
  Json j{{"code", to_string(i.code)}, {"detail", i.detail}};
  j["node"] = i.node ? Json(*i.node) : Json(nullptr);
  return j;
}

/// Parse plus the media check against files next to the project.
inline ParsedProject load_project(const fs::path& file) {
  auto parsed = parse_project(read_file(file));
  const auto dir = file.has_parent_path() ? file.parent_path() : fs::path(".");
  const auto available = files_under(dir);
  for (const auto& m : check_media_refs(parsed.project, available)) {
    if (m.status == MediaRefStatus::missing)
      parsed.report.warnings.push_back({IssueCode::MissingMedia, std::nullopt, "media '" + m.media_id + "' file not found: " + m.uri});
    else
      parsed.report.warnings.push_back({IssueCode::RemoteMedia, std::nullopt, "media '" + m.media_id + "' is remote, not checked: " + m.uri});
  }
  parsed.report.sort();
  return parsed;
}

inline ParsedProject load_playable(const fs::path& file) {
  auto parsed = load_project(file);
  if (!parsed.report.playable())
    throw CommandError(file.string() + ": " + std::to_string(parsed.report.errors.size()) +
                       " validation error(s), first: " + describe(parsed.report.errors.front()));
  return parsed;
}

inline SessionLog load_log(const fs::path& file) {
  try {
    return parse_log(read_file(file));
  } catch (const CorruptLog& e) {
    throw CommandError(file.string() + ": " + e.what());
  }
}

/// Files with `ext` under `dir`, recursively, sorted.
inline std::vector<fs::path> files_with(const fs::path& dir, std::string_view ext) {
  std::vector<fs::path> out;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(dir, ec); !ec && it != fs::end(it); it.increment(ec))
    if (it->is_regular_file() && it->path().extension() == ext) out.push_back(it->path());
  std::sort(out.begin(), out.end());
  return out;
}

struct LoadedDirectory {
  fs::path project_file;
  VideoProject project;
  std::vector<fs::path> log_files;
  std::vector<SessionLog> logs;
};

/// One project plus the logs that belong to it. Logs of other projects
/// are skipped; a log of this project that fails to replay is an error.
inline LoadedDirectory load_directory(const fs::path& dir, const std::string& project_id = {}) {
  if (!fs::is_directory(dir)) throw CommandError(dir.string() + ": not a directory");
  LoadedDirectory out;
  std::vector<std::pair<fs::path, VideoProject>> projects;
  for (const auto& f : files_with(dir, ".vvp")) {
    auto p = load_playable(f).project;
    if (project_id.empty() || p.id == project_id) projects.emplace_back(f, std::move(p));
  }
  if (projects.empty())
    throw CommandError(dir.string() + ": no project file" + (project_id.empty() ? "" : " with id '" + project_id + "'"));
  if (projects.size() > 1) throw CommandError(dir.string() + ": several project files; pick one with --project-id");
  out.project_file = projects.front().first;
  out.project = std::move(projects.front().second);
  for (const auto& f : files_with(dir, ".vvlog")) {
    auto log = load_log(f);
    if (!log.empty() && log.front().payload.value("project_id", "") != out.project.id) continue;
    try {
      (void)replay(log, out.project);
    } catch (const CorruptLog& e) {
      throw CommandError(f.string() + ": " + e.what());
    }
    out.log_files.push_back(f);
    out.logs.push_back(std::move(log));
  }
  return out;
}

// --- commands

inline int cmd_validate(const fs::path& file, const CliConfig& cfg, std::ostream& out) {
  const auto parsed = load_project(file);
  const auto& r = parsed.report;
  if (cfg.output_format == OutputFormat::structured) {
    Json errors = Json::array(), warnings = Json::array();
    for (const auto& i : r.errors) errors.push_back(issue_json(i));
    for (const auto& i : r.warnings) warnings.push_back(issue_json(i));
    out << canonical_dump({{"file", file.string()}, {"project_id", parsed.project.id}, {"errors", errors}, {"warnings", warnings}});
  } else {
    for (const auto& i : r.errors) out << "error " << describe(i) << "\n";
    for (const auto& i : r.warnings) out << "warning " << describe(i) << "\n";
    out << file.filename().string() << ": " << r.errors.size() << " error(s), " << r.warnings.size() << " warning(s); "
        << parsed.project.nodes.size() << " nodes, " << question_count(parsed.project) << " questions, "
        << fork_count(parsed.project) << " forks\n";
  }
  return r.playable() ? kOk : kDomainError;
}

inline std::string paths_headline(const BranchPathSet& set) {
  if (set.paths.empty()) return "0 branch paths";
  return std::to_string(set.paths.size()) + " branch paths, minimum " + std::to_string(set.minimum_per_playthrough) +
         " per playthrough";
}

inline int cmd_paths(const fs::path& file, const CliConfig& cfg, std::ostream& out) {
  const auto p = load_playable(file).project;
  const auto set = enumerate_branch_paths(p);
  const auto conditional = conditional_questions(p);
  if (cfg.output_format == OutputFormat::structured) {
    Json paths = Json::array();
    for (const auto& bp : set.paths) paths.push_back({{"fork", bp.fork}, {"option_id", bp.option_id}, {"nodes", bp.nodes}});
    Json cond = Json::object();
    for (const auto& [q, c] : conditional) cond[q] = {{"fork", c.fork}, {"option_id", c.option_id}};
    out << canonical_dump({{"branch_paths", paths},
                           {"minimum_per_playthrough", set.minimum_per_playthrough},
                           {"questions", question_count(p)},
                           {"conditional_questions", cond}});
    return kOk;
  }
  out << paths_headline(set) << "\n";
  for (const auto& bp : set.paths) {
    out << "  " << bp.fork << "/" << bp.option_id << ":";
    for (const auto& n : bp.nodes) out << " " << n;
    out << "\n";
  }
  out << question_count(p) << " questions, " << conditional.size() << " reachable only through one option\n";
  for (const auto& [q, c] : conditional) out << "  " << q << " via " << c.fork << "/" << c.option_id << "\n";
  return kOk;
}

inline int cmd_metrics(const fs::path& log_file, const fs::path& project_file, const CliConfig& cfg, std::ostream& out) {
  const auto p = load_playable(project_file).project;
  const auto log = load_log(log_file);
  SessionMetrics m;
  try {
    m = session_metrics(log, p);
  } catch (const CorruptLog& e) {
    throw CommandError(log_file.string() + ": " + e.what());
  }
  if (cfg.output_format == OutputFormat::structured) {
    Json j = analytics::metrics_to_json(m);
    j["session_id"] = log.front().payload.value("session_id", "");
    out << canonical_dump(j);
    return kOk;
  }
  char ratio[32];
  std::snprintf(ratio, sizeof ratio, "%.3f", m.correct_ratio());
  out << "session               " << log.front().payload.value("session_id", "") << "\n"
      << "correct answers       " << m.correct_answers << " of " << m.questions_available << " (" << ratio << ")\n"
      << "time spent            " << m.time_spent_ms << " ms\n"
      << "active time           " << m.active_time_ms << " ms\n"
      << "optional interactions " << m.optional_interactions << "\n"
      << "branch paths seen     " << m.branch_paths_seen << "\n"
      << "comments              " << m.comments << "\n";
  return kOk;
}

inline std::vector<SessionMetrics> group_metrics(const LoadedDirectory& d) {
  std::vector<SessionMetrics> out;
  for (std::size_t i = 0; i < d.logs.size(); ++i) {
    try {
      out.push_back(session_metrics(d.logs[i], d.project));
    } catch (const CorruptLog& e) {
      throw CommandError(d.log_files[i].string() + ": " + e.what());
    }
  }
  return out;
}

inline int cmd_analyze(const fs::path& dir_a, const fs::path& dir_b, const CliConfig& cfg, std::ostream& out) {
  const auto a = load_directory(dir_a);
  const auto b = load_directory(dir_b);
  for (const auto* d : {&a, &b})
    if (d->logs.size() < 3)
      throw CommandError((d == &a ? dir_a : dir_b).string() + ": SampleTooSmall: " + std::to_string(d->logs.size()) +
                         " session log(s), each group needs at least 3");
  analytics::ComparisonReport report;
  try {
    report = analytics::compare_groups(group_metrics(a), group_metrics(b), cfg.alpha);
  } catch (const StatsError& e) {
    throw CommandError(std::string("comparison failed: ") + e.what());
  }
  if (cfg.output_format == OutputFormat::structured) {
    Json j = analytics::to_json(report);
    j["group_a"] = {{"dir", dir_a.string()}, {"project_id", a.project.id}, {"sessions", a.logs.size()}};
    j["group_b"] = {{"dir", dir_b.string()}, {"project_id", b.project.id}, {"sessions", b.logs.size()}};
    out << canonical_dump(j);
  } else {
    out << "group A: " << dir_a.string() << " (" << a.logs.size() << " sessions, " << a.project.id << ")\n"
        << "group B: " << dir_b.string() << " (" << b.logs.size() << " sessions, " << b.project.id << ")\n\n"
        << analytics::render_table(report);
  }
  return kOk;
}

inline int cmd_export(const fs::path& dir, const std::string& output, const std::string& project_id, std::ostream& out,
                      std::ostream& err) {
  const auto d = load_directory(dir, project_id);
  const auto bytes = analytics::export_bundle(d.logs, d.project);
  if (output.empty() || output == "-") {
    out << bytes;
  } else {
    std::ofstream f(output, std::ios::binary | std::ios::trunc);
    if (!f) throw CommandError(output + ": cannot write file");
    f << bytes;
    if (!f.flush()) throw CommandError(output + ": write failed");
    err << "wrote " << d.logs.size() << " session(s) of " << d.project.id << " to " << output << "\n";
  }
  return kOk;
}

inline int cmd_serve(const CliConfig& cfg, const RunOptions& run, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(cfg.data_dir)) {
    err << "error: data directory '" << cfg.data_dir.string() << "' does not exist\n";
    return kDomainError;
  }
  server::Service service(cfg.data_dir);
  for (const auto& w : service.load_warnings()) err << "warning: skipped " << w << "\n";
  server::HttpServer http(service);
  const auto port = http.bind(cfg.host, cfg.port);
  if (!port) {
    err << "error: cannot listen on " << cfg.host << ":" << cfg.port << "\n";
    return kDomainError;
  }
  out << "listening on http://" << cfg.host << ":" << *port << "\n" << std::flush;

  std::thread watcher;
  if (run.on_listening) {
    watcher = std::thread([&] {
      http.wait_until_ready();
      run.on_listening(http, *port);
    });
  } else {
    // Signals go to a dedicated thread that stops the server cleanly.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    watcher = std::thread([&http, set] {
      int sig = 0;
      sigwait(&set, &sig);
      http.stop();
    });
    watcher.detach();
  }
  http.serve();
  if (watcher.joinable()) watcher.join();
  return kOk;
}

}  // namespace detail

/// The full program. `args` excludes the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const RunOptions& run = {}) {
  CLI::App app{"Branching vision-video projects: validation, sessions, analytics and serving", "vvp"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "vvp 1.0.0");

  CliConfig cfg;
  std::string format = "text";
  auto add_format = [&](CLI::App* cmd) {
    cmd->add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"text", "structured", "json"}))
        ->envname("VVP_FORMAT");
  };

  std::string project_file, log_file, dir_a, dir_b, output, project_id;

  auto* validate = app.add_subcommand("validate", "Check a project file; exit 1 on graph errors");
  validate->add_option("file", project_file, "Project file (.vvp)")->required();
  add_format(validate);

  auto* paths = app.add_subcommand("paths", "List branch paths and conditional questions");
  paths->add_option("file", project_file, "Project file (.vvp)")->required();
  add_format(paths);

  auto* metrics = app.add_subcommand("metrics", "Per-session metrics from one log");
  metrics->add_option("log", log_file, "Session log (.vvlog)")->required();
  metrics->add_option("--project", project_file, "Project file (.vvp)")->required()->envname("VVP_PROJECT");
  add_format(metrics);

  auto* analyze = app.add_subcommand("analyze", "Compare two groups of sessions, one directory each");
  analyze->add_option("group_a", dir_a, "Directory for group A")->required();
  analyze->add_option("group_b", dir_b, "Directory for group B")->required();
  analyze->add_option("--alpha", cfg.alpha, "Significance level")->envname("VVP_ALPHA");
  add_format(analyze);

  auto* exp = app.add_subcommand("export", "Write the analysis bundle for a project directory");
  exp->add_option("project_dir", dir_a, "Directory holding the project and its session logs")->required();
  exp->add_option("-o,--output", output, "Bundle file (.vvx); '-' for stdout")->envname("VVP_OUTPUT");
  exp->add_option("--project-id", project_id, "Project to export when the directory holds several")->envname("VVP_PROJECT_ID");

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--port", cfg.port, "Listen port")->check(CLI::Range(0, 65535))->envname("VVP_PORT");
  serve->add_option("--data-dir", cfg.data_dir, "Data directory")->envname("VVP_DATA_DIR");
  serve->add_option("--host", cfg.host, "Listen address")->envname("VVP_HOST");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) {
    err << "error: --alpha must lie strictly between 0 and 1\n";
    return kUsageError;
  }
  cfg.output_format = format == "text" ? OutputFormat::text : OutputFormat::structured;

  try {
    if (*validate) return detail::cmd_validate(project_file, cfg, out);
    if (*paths) return detail::cmd_paths(project_file, cfg, out);
    if (*metrics) return detail::cmd_metrics(log_file, project_file, cfg, out);
    if (*analyze) return detail::cmd_analyze(dir_a, dir_b, cfg, out);
    if (*exp) return detail::cmd_export(dir_a, output, project_id, out, err);
    if (*serve) return detail::cmd_serve(cfg, run, out, err);
  } catch (const SyntaxError& e) {
    err << "syntax error: " << (project_file.empty() ? "" : project_file + ": ") << e.what() << "\n";
    return kUsageError;
  } catch (const UnsupportedVersion& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const CommandError& e) {
    err << "error: " << e.what() << "\n";
    return kDomainError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kDomainError;
  }
  return kUsageError;
}

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, out, err);
}

}  // namespace vvp::cli
