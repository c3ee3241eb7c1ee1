#pragma once

// Session exports, group comparison, fork consensus and the viewer
// annotation digest, all computed from session logs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "vvp/codec.hpp"
#include "vvp/session.hpp"
#include "vvp/stats.hpp"

namespace vvp::analytics {

using stats::GroupSummary;
using stats::TestKind;
using stats::TestResult;

// ---------------------------------------------------------------------------
// Export bundle (.vvx)

inline Json metrics_to_json(const SessionMetrics& m) {
  return {{"correct_answers", m.correct_answers},
          {"questions_available", m.questions_available},
          {"correct_ratio", m.correct_ratio()},
          {"time_spent_ms", m.time_spent_ms},
          {"active_time_ms", m.active_time_ms},
          {"optional_interactions", m.optional_interactions},
          {"branch_paths_seen", m.branch_paths_seen},
          {"comments", m.comments}};
}

namespace detail {

inline std::string session_id_of(const SessionLog& log) {
  return log.empty() ? std::string() : log.front().payload.value("session_id", "");
}

inline std::string viewer_id_of(const SessionLog& log) {
  return log.empty() ? std::string() : log.front().payload.value("viewer_id", "");
}

/// Logs ordered by session id so the output does not depend on input order.
inline std::vector<const SessionLog*> ordered(std::span<const SessionLog> logs) {
  std::vector<const SessionLog*> out;
  for (const auto& l : logs) out.push_back(&l);
  std::stable_sort(out.begin(), out.end(), [](auto* a, auto* b) { return session_id_of(*a) < session_id_of(*b); });
  return out;
}

}  // namespace detail

/// The bundle as a JSON value. Throws CorruptLog if any log fails to replay.
/// generated_at is the latest event time across all logs, which keeps the
/// bytes a function of the inputs alone.
inline Json export_bundle_json(std::span<const SessionLog> logs, const VideoProject& p) {
  Timestamp latest{};
  Json sessions = Json::array();

  std::map<NodeId, std::vector<std::int64_t>> choice_counts;
  std::map<NodeId, std::int64_t> presented, answered, correct;
  for (const auto& [id, node] : p.nodes)
    if (const auto* q = std::get_if<QuestionNode>(&node)) choice_counts[id].assign(q->choices.size(), 0);
  std::map<NodeId, std::map<std::string, std::int64_t>> first_pass, total;
  for (const auto& [id, node] : p.nodes)
    if (const auto* f = std::get_if<ForkNode>(&node))
      for (const auto& o : f->options) first_pass[id][o.option_id] = total[id][o.option_id] = 0;

  for (const SessionLog* log : detail::ordered(logs)) {
    const SessionState s = replay(*log, p);
    const SessionMetrics m = session_metrics(*log, p);
    latest = std::max(latest, log->back().wall_time);

    Json events = Json::array();
    Json fork_choices = Json::array();
    std::set<NodeId> forks_seen;
    for (const auto& e : *log) {
      events.push_back(event_to_json(e));
      switch (e.kind) {
        case EventKind::QuestionPresented: ++presented[e.payload.at("node").get<std::string>()]; break;
        case EventKind::QuestionAnswered:
          if (e.payload.at("counts_for_metrics").get<bool>()) {
            const auto q = e.payload.at("node").get<std::string>();
            ++answered[q];
            if (e.payload.at("correct").get<bool>()) ++correct[q];
            ++choice_counts[q].at(e.payload.at("chosen_index").get<std::size_t>());
          }
          break;
        case EventKind::ChoosePath: {
          const auto fork = e.payload.at("node").get<std::string>();
          const auto option = e.payload.at("option_id").get<std::string>();
          fork_choices.push_back({{"fork", fork}, {"option_id", option}, {"seq", e.seq}});
          ++total[fork][option];
          if (forks_seen.insert(fork).second) ++first_pass[fork][option];
          break;
        }
        default: break;
      }
    }
    Json annotations = Json::array();
    for (const auto& a : s.viewer_annotations) annotations.push_back(codec::to_json(a));
    Json comments = Json::array();
    for (const auto& c : s.comments)
      comments.push_back({{"text", c.text}, {"node", c.at.node}, {"offset_ms", c.at.offset_ms}, {"wall_time", format_rfc3339(c.wall_time)}});
    sessions.push_back({{"session_id", s.session_id},
                        {"viewer_id", s.viewer_id},
                        {"events", std::move(events)},
                        {"metrics", metrics_to_json(m)},
                        {"viewer_annotations", std::move(annotations)},
                        {"comments", std::move(comments)},
                        {"fork_choices", std::move(fork_choices)}});
  }

  Json question_tallies = Json::array();
  for (const auto& [q, counts] : choice_counts)
    question_tallies.push_back({{"node", q},
                                {"presented", presented[q]},
                                {"answered", answered[q]},
                                {"correct", correct[q]},
                                {"choice_counts", counts}});
  Json fork_tallies = Json::array();
  for (const auto& [fork, counts] : total)
    fork_tallies.push_back({{"node", fork}, {"first_pass", first_pass[fork]}, {"total", counts}});

  return {{"project_id", p.id},
          {"generated_at", format_rfc3339(latest)},
          {"sessions", std::move(sessions)},
          {"question_tallies", std::move(question_tallies)},
          {"fork_tallies", std::move(fork_tallies)}};
}

inline std::string export_bundle(std::span<const SessionLog> logs, const VideoProject& p) {
  return canonical_dump(export_bundle_json(logs, p));
}

// ---------------------------------------------------------------------------
// Group comparison

inline constexpr double kDefaultAlpha = 0.05;

/// The compared metrics, in report order.
inline const std::vector<std::pair<std::string, double (*)(const SessionMetrics&)>>& compared_metrics() {
  static const std::vector<std::pair<std::string, double (*)(const SessionMetrics&)>> metrics = {
      {"correct_ratio", [](const SessionMetrics& m) { return m.correct_ratio(); }},
      {"time_spent_ms", [](const SessionMetrics& m) { return static_cast<double>(m.time_spent_ms); }},
      {"optional_interactions", [](const SessionMetrics& m) { return static_cast<double>(m.optional_interactions); }},
      {"branch_paths_seen", [](const SessionMetrics& m) { return static_cast<double>(m.branch_paths_seen); }},
      {"comments", [](const SessionMetrics& m) { return static_cast<double>(m.comments); }},
  };
  return metrics;
}

struct MetricComparison {
  std::string metric;
  GroupSummary group_a;
  GroupSummary group_b;
  TestResult normality_a;
  TestResult normality_b;
  TestKind chosen_test = TestKind::MannWhitneyU;
  TestResult result;
  bool significant_at_alpha = false;
  double alpha = kDefaultAlpha;
  std::string note;  // set when a group could not be tested for normality
};

struct ComparisonReport {
  double alpha = kDefaultAlpha;
  std::vector<MetricComparison> metrics;

  const MetricComparison* find(std::string_view metric) const {
    for (const auto& m : metrics)
      if (m.metric == metric) return &m;
    return nullptr;
  }
};

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
}

/// Shapiro-Wilk, with a constant sample standing in as p = 0: it is
/// certainly not normal, and a t test on it would be degenerate anyway.
inline TestResult normality(std::span<const double> values, std::string& note, const char* group) {
  try {
    return stats::shapiro_wilk(values);
  } catch (const StatsError& e) {
    if (e.kind() != StatsErrorKind::ConstantSample) throw;
    note += std::string(note.empty() ? "" : "; ") + "group " + group + " is constant";
    return {TestKind::ShapiroWilk, 0.0, {}, {}, {}, 0.0, {}};
  }
}

}  // namespace detail

/// One metric: normality per group, then Student's t iff both normality
/// p-values exceed alpha, otherwise Mann-Whitney U.
inline MetricComparison compare_metric(std::string metric, std::span<const double> a, std::span<const double> b,
                                       double alpha = kDefaultAlpha) {
  detail::check_alpha(alpha);
  if (a.size() < 3 || b.size() < 3)
    throw StatsError(StatsErrorKind::SampleTooSmall, "each group needs at least 3 sessions (got " + std::to_string(a.size()) +
                                                         " and " + std::to_string(b.size()) + ")");
  MetricComparison c;
  c.metric = std::move(metric);
  c.alpha = alpha;
  c.group_a = stats::aggregate_group(a, c.metric);
  c.group_b = stats::aggregate_group(b, c.metric);
  c.normality_a = detail::normality(a, c.note, "A");
  c.normality_b = detail::normality(b, c.note, "B");
  const bool normal = c.normality_a.p_two_tailed > alpha && c.normality_b.p_two_tailed > alpha;
  c.chosen_test = normal ? TestKind::StudentT : TestKind::MannWhitneyU;
  c.result = normal ? stats::students_t_test(a, b) : stats::mann_whitney_u(a, b);
  c.significant_at_alpha = c.result.p_two_tailed < alpha;
  return c;
}

inline ComparisonReport compare_groups(std::span<const SessionMetrics> group_a, std::span<const SessionMetrics> group_b,
                                       double alpha = kDefaultAlpha) {
  detail::check_alpha(alpha);
  ComparisonReport r;
  r.alpha = alpha;
  for (const auto& [name, get] : compared_metrics()) {
    std::vector<double> a, b;
    for (const auto& m : group_a) a.push_back(get(m));
    for (const auto& m : group_b) b.push_back(get(m));
    r.metrics.push_back(compare_metric(name, a, b, alpha));
  }
  return r;
}

inline Json to_json(const GroupSummary& g) {
  return {{"metric_name", g.metric_name}, {"n", g.n},           {"mean", g.mean},     {"median", g.median},
          {"sample_sd", g.sample_sd},     {"min", g.min},       {"max", g.max},       {"degenerate", g.degenerate},
          {"values", g.values}};
}

inline Json to_json(const TestResult& t) {
  Json j{{"test", stats::to_string(t.test)}, {"statistic", t.statistic}, {"p_two_tailed", t.p_two_tailed}};
  if (t.df) j["df"] = *t.df;
  if (t.u) j["u"] = *t.u;
  if (t.z) j["z"] = *t.z;
  if (t.p_exact) j["p_exact"] = *t.p_exact;
  return j;
}

inline Json to_json(const ComparisonReport& r) {
  Json metrics = Json::array();
  for (const auto& m : r.metrics) {
    Json j{{"metric", m.metric},
           {"group_a", to_json(m.group_a)},
           {"group_b", to_json(m.group_b)},
           {"normality_a", to_json(m.normality_a)},
           {"normality_b", to_json(m.normality_b)},
           {"chosen_test", stats::to_string(m.chosen_test)},
           {"result", to_json(m.result)},
           {"significant_at_alpha", m.significant_at_alpha},
           {"alpha", m.alpha}};
    if (!m.note.empty()) j["note"] = m.note;
    metrics.push_back(std::move(j));
  }
  return {{"alpha", r.alpha}, {"metrics", std::move(metrics)}};
}

namespace detail {

inline std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

inline std::string lpad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

}  // namespace detail

/// Plain-text table: one row per group, test columns on the first row.
inline std::string render_table(const ComparisonReport& r) {
  using detail::fmt;
  using detail::lpad;
  using detail::pad;
  std::string out;
  auto row = [&](const std::vector<std::pair<std::string, int>>& cells) {
    std::string line;
    for (const auto& [text, width] : cells) line += width < 0 ? pad(text, static_cast<std::size_t>(-width)) : lpad(text, static_cast<std::size_t>(width));
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  };
  row({{"metric", -23}, {"grp", -4}, {"n", 3}, {"mean", 13}, {"median", 13}, {"sd", 13}, {"SW p", 9}, {"  test", -9},
       {"statistic", 10}, {"df", 6}, {"p", 9}, {"  sig", -5}});
  for (const auto& m : r.metrics) {
    const bool t = m.chosen_test == TestKind::StudentT;
    std::string stat = fmt("%.3f", m.result.statistic);
    std::string p = fmt("%.4f", m.result.p_two_tailed);
    row({{m.metric, -23}, {"A", -4}, {std::to_string(m.group_a.n), 3}, {fmt("%.3f", m.group_a.mean), 13},
         {fmt("%.3f", m.group_a.median), 13}, {fmt("%.3f", m.group_a.sample_sd), 13},
         {fmt("%.4f", m.normality_a.p_two_tailed), 9}, {std::string("  ") + (t ? "t" : "U"), -9}, {stat, 10},
         {t ? fmt("%.0f", *m.result.df) : "", 6}, {p, 9}, {m.significant_at_alpha ? "  *" : "", -5}});
    row({{"", -23}, {"B", -4}, {std::to_string(m.group_b.n), 3}, {fmt("%.3f", m.group_b.mean), 13},
         {fmt("%.3f", m.group_b.median), 13}, {fmt("%.3f", m.group_b.sample_sd), 13},
         {fmt("%.4f", m.normality_b.p_two_tailed), 9}, {"", -9}, {"", 10}, {"", 6},
         {m.result.p_exact ? fmt("%.4f", *m.result.p_exact) : "", 9}, {m.result.p_exact ? "  exact" : "", -5}});
    if (!m.note.empty()) out += "  note: " + m.note + "\n";
  }
  out += "alpha = " + fmt("%g", r.alpha) + "; t = Student's t (pooled), U = Mann-Whitney U; * marks p < alpha\n";
  return out;
}

// ---------------------------------------------------------------------------
// Fork consensus

struct ForkConsensus {
  NodeId fork;
  std::vector<std::string> options;  // author order
  std::map<std::string, std::int64_t> first_pass;
  std::map<std::string, std::int64_t> additional_views;
  std::int64_t sessions = 0;  // sessions that chose at this fork at all
  double controversy = 0;     // normalized entropy of first_pass, in [0, 1]
};

/// Shannon entropy of `counts` divided by ln(option_count).
inline double normalized_entropy(const std::vector<std::int64_t>& counts, std::size_t option_count) {
  if (option_count < 2) return 0.0;
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  if (total <= 0) return 0.0;
  double h = 0;
  for (auto c : counts) {
    if (c <= 0) continue;
    const double q = static_cast<double>(c) / total;
    h -= q * std::log(q);
  }
  return std::clamp(h / std::log(static_cast<double>(option_count)), 0.0, 1.0);
}

/// Forks in node id order. Throws CorruptLog if a log does not replay.
inline std::vector<ForkConsensus> fork_consensus(const VideoProject& p, std::span<const SessionLog> logs) {
  std::map<NodeId, ForkConsensus> by_fork;
  for (const auto& [id, node] : p.nodes) {
    if (const auto* f = std::get_if<ForkNode>(&node)) {
      auto& c = by_fork[id];
      c.fork = id;
      for (const auto& o : f->options) {
        c.options.push_back(o.option_id);
        c.first_pass[o.option_id] = 0;
        c.additional_views[o.option_id] = 0;
      }
    }
  }
  for (const auto& log : logs) {
    (void)replay(log, p);
    std::set<NodeId> passed;
    std::set<ForkChoice> seen;
    for (const auto& e : log) {
      if (e.kind != EventKind::ChoosePath) continue;
      const ForkChoice c{e.payload.at("node").get<std::string>(), e.payload.at("option_id").get<std::string>()};
      auto& fc = by_fork.at(c.fork);
      if (passed.insert(c.fork).second) {
        ++fc.first_pass[c.option_id];
        ++fc.sessions;
      } else if (!seen.contains(c)) {
        ++fc.additional_views[c.option_id];
      }
      seen.insert(c);
    }
  }
  std::vector<ForkConsensus> out;
  for (auto& [id, c] : by_fork) {
    std::vector<std::int64_t> counts;
    for (const auto& o : c.options) counts.push_back(c.first_pass[o]);
    c.controversy = normalized_entropy(counts, c.options.size());
    out.push_back(std::move(c));
  }
  return out;
}

inline Json to_json(const std::vector<ForkConsensus>& forks) {
  Json out = Json::array();
  for (const auto& c : forks)
    out.push_back({{"fork", c.fork},
                   {"options", c.options},
                   {"first_pass", c.first_pass},
                   {"additional_views", c.additional_views},
                   {"sessions", c.sessions},
                   {"controversy", c.controversy}});
  return out;
}

// ---------------------------------------------------------------------------
// Viewer annotation digest

struct DigestEntry {
  AnchorRange anchor;
  std::string session_id;
  std::string viewer_id;
  std::string title;
  std::vector<BodyItem> body;
  Timestamp created_at{};
  bool is_comment = false;
};

struct DigestGroup {
  NodeId node;
  std::vector<DigestEntry> entries;  // by time, then session id
};

/// Viewer annotations and comments from all logs, grouped by anchor node.
/// Comments become entries titled "comment" anchored at their playhead.
/// Reads payloads directly; no project is needed.
inline std::vector<DigestGroup> annotation_digest(std::span<const SessionLog> logs) {
  std::map<NodeId, std::vector<DigestEntry>> groups;
  for (const auto& log : logs) {
    const auto session = detail::session_id_of(log);
    const auto viewer = detail::viewer_id_of(log);
    for (const auto& e : log) {
      if (e.kind == EventKind::ViewerAnnotationAdded) {
        const auto it = e.payload.find("annotation");
        if (it == e.payload.end()) continue;
        Annotation a;
        try {
          a = codec::annotation_from_json(*it, "/payload/annotation", nullptr);
        } catch (const SyntaxError&) {
          continue;
        }
        groups[a.anchor.node].push_back({a.anchor, session, viewer, a.title, a.body, a.created_at.value_or(e.wall_time), false});
      } else if (e.kind == EventKind::CommentAdded) {
        groups[e.playhead.node].push_back({{e.playhead.node, e.playhead.offset_ms, e.playhead.offset_ms},
                                           session,
                                           viewer,
                                           "comment",
                                           {{BodyKind::text, e.payload.value("text", "")}},
                                           e.wall_time,
                                           true});
      }
    }
  }
  std::vector<DigestGroup> out;
  for (auto& [node, entries] : groups) {
    std::stable_sort(entries.begin(), entries.end(), [](const DigestEntry& a, const DigestEntry& b) {
      return std::tie(a.created_at, a.session_id) < std::tie(b.created_at, b.session_id);
    });
    out.push_back({node, std::move(entries)});
  }
  return out;
}

inline Json to_json(const std::vector<DigestGroup>& digest) {
  Json out = Json::array();
  for (const auto& g : digest) {
    Json entries = Json::array();
    for (const auto& e : g.entries) {
      Json body = Json::array();
      for (const auto& b : e.body) body.push_back({{"type", to_string(b.kind)}, {"value", b.value}});
      entries.push_back({{"anchor", {{"node", e.anchor.node}, {"start_ms", e.anchor.start_ms}, {"end_ms", e.anchor.end_ms}}},
                         {"session_id", e.session_id},
                         {"viewer_id", e.viewer_id},
                         {"title", e.title},
                         {"body", std::move(body)},
                         {"created_at", format_rfc3339(e.created_at)},
                         {"kind", e.is_comment ? "comment" : "annotation"}});
    }
    out.push_back({{"node", g.node}, {"entries", std::move(entries)}});
  }
  return out;
}

}  // namespace vvp::analytics
