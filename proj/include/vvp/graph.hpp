#pragma once

// Branching video graphs: scene, fork, question and end nodes, annotations
// anchored to node media, and the structural queries the player and the
// analytics rely on.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "vvp/error.hpp"
#include "vvp/time.hpp"

namespace vvp {

using NodeId = std::string;
using MediaId = std::string;

struct SceneNode {
  MediaId media;
  std::int64_t duration_ms = 0;
  std::string title;
  bool is_nav_point = false;
  NodeId next;

  bool operator==(const SceneNode&) const = default;
};

struct ForkOption {
  std::string option_id;
  std::string label;
  NodeId target;

  bool operator==(const ForkOption&) const = default;
};

/// Author order of `options` is display order.
struct ForkNode {
  std::string prompt;
  std::vector<ForkOption> options;
  bool is_nav_point = false;

  const ForkOption* find_option(std::string_view option_id) const {
    for (const auto& o : options)
      if (o.option_id == option_id) return &o;
    return nullptr;
  }

  bool operator==(const ForkNode&) const = default;
};

struct QuestionNode {
  std::string prompt;
  std::vector<std::string> choices;
  std::size_t correct_index = 0;
  bool is_nav_point = false;
  NodeId next;

  bool operator==(const QuestionNode&) const = default;
};

struct EndNode {
  bool operator==(const EndNode&) const = default;
};

using Node = std::variant<SceneNode, ForkNode, QuestionNode, EndNode>;

enum class AuthorKind { creator, viewer };

struct AnchorRange {
  NodeId node;
  std::int64_t start_ms = 0;
  std::int64_t end_ms = 0;

  bool covers(std::string_view at_node, std::int64_t offset_ms) const {
    return node == at_node && start_ms <= offset_ms && offset_ms <= end_ms;
  }

  bool operator==(const AnchorRange&) const = default;
};

enum class BodyKind { text, link, image, file };

struct BodyItem {
  BodyKind kind = BodyKind::text;
  std::string value;

  bool operator==(const BodyItem&) const = default;
};

struct Annotation {
  std::string annotation_id;
  AuthorKind author_kind = AuthorKind::creator;
  AnchorRange anchor;
  std::string title;
  std::vector<BodyItem> body;
  std::optional<Timestamp> created_at;  // viewer annotations only

  bool operator==(const Annotation&) const = default;
};

struct MediaDescriptor {
  MediaId media_id;
  std::string uri;
  std::int64_t duration_ms = 0;
  std::string mime_hint;

  bool operator==(const MediaDescriptor&) const = default;
};

struct VideoProject {
  std::string id;
  std::string title;
  NodeId start_node;
  std::map<NodeId, Node> nodes;
  std::vector<Annotation> annotations;
  std::map<MediaId, MediaDescriptor> media_assets;

  const Node* find(std::string_view node_id) const {
    auto it = nodes.find(std::string(node_id));
    return it == nodes.end() ? nullptr : &it->second;
  }

  template <class T>
  const T* find_as(std::string_view node_id) const {
    const Node* n = find(node_id);
    return n ? std::get_if<T>(n) : nullptr;
  }

  bool operator==(const VideoProject&) const = default;
};

inline std::string_view to_string(AuthorKind k) { return k == AuthorKind::creator ? "creator" : "viewer"; }

inline std::string_view to_string(BodyKind k) {
  switch (k) {
    case BodyKind::text: return "text";
    case BodyKind::link: return "link";
    case BodyKind::image: return "image";
    case BodyKind::file: return "file";
  }
  return "text";
}

inline std::string_view node_kind(const Node& n) {
  static constexpr std::string_view names[] = {"scene", "fork", "question", "end"};
  return names[n.index()];
}

/// Media length for scenes; forks, questions and end nodes take no playback time.
inline std::int64_t node_duration(const Node& n) {
  if (const auto* s = std::get_if<SceneNode>(&n)) return s->duration_ms;
  return 0;
}

inline std::int64_t node_duration(const VideoProject& p, std::string_view node_id) {
  const Node* n = p.find(node_id);
  return n ? node_duration(*n) : 0;
}

inline bool is_nav_point(const Node& n) {
  return std::visit(
      [](const auto& v) {
        if constexpr (std::is_same_v<std::decay_t<decltype(v)>, EndNode>)
          return false;
        else
          return v.is_nav_point;
      },
      n);
}

/// Outgoing edges in author order: `next` for scenes/questions, option
/// targets for forks.
inline std::vector<NodeId> successors(const Node& n) {
  if (const auto* s = std::get_if<SceneNode>(&n)) return {s->next};
  if (const auto* q = std::get_if<QuestionNode>(&n)) return {q->next};
  if (const auto* f = std::get_if<ForkNode>(&n)) {
    std::vector<NodeId> out;
    out.reserve(f->options.size());
    for (const auto& o : f->options) out.push_back(o.target);
    return out;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Validation

enum class IssueCode {
  DanglingTarget,
  UnreachableNode,
  NoEndNode,
  BadCorrectIndex,
  EmptyFork,
  BadAnchor,
  DuplicateId,
  BadDuration,
  UnknownField,
  RemoteMedia,
  MissingMedia,
};

inline std::string_view to_string(IssueCode c) {
  switch (c) {
    case IssueCode::DanglingTarget: return "DanglingTarget";
    case IssueCode::UnreachableNode: return "UnreachableNode";
    case IssueCode::NoEndNode: return "NoEndNode";
    case IssueCode::BadCorrectIndex: return "BadCorrectIndex";
    case IssueCode::EmptyFork: return "EmptyFork";
    case IssueCode::BadAnchor: return "BadAnchor";
    case IssueCode::DuplicateId: return "DuplicateId";
    case IssueCode::BadDuration: return "BadDuration";
    case IssueCode::UnknownField: return "UnknownField";
    case IssueCode::RemoteMedia: return "RemoteMedia";
    case IssueCode::MissingMedia: return "MissingMedia";
  }
  return "?";
}

struct Issue {
  IssueCode code;
  std::optional<NodeId> node;
  std::string detail;

  bool operator==(const Issue&) const = default;
};

struct ValidationReport {
  std::vector<Issue> errors;
  std::vector<Issue> warnings;

  bool playable() const { return errors.empty(); }

  std::size_t count(IssueCode code) const {
    return static_cast<std::size_t>(
        std::count_if(errors.begin(), errors.end(), [&](const Issue& i) { return i.code == code; }));
  }

  /// Orders by node id (project-level issues first), then code, then detail.
  void sort() {
    auto key = [](const Issue& i) { return std::tuple(i.node.has_value(), i.node.value_or(""), i.code, i.detail); };
    auto less = [&](const Issue& a, const Issue& b) { return key(a) < key(b); };
    std::stable_sort(errors.begin(), errors.end(), less);
    std::stable_sort(warnings.begin(), warnings.end(), less);
  }

  bool operator==(const ValidationReport&) const = default;

  void merge(const ValidationReport& other) {
    errors.insert(errors.end(), other.errors.begin(), other.errors.end());
    warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
    sort();
  }
};

namespace detail {

/// Breadth-first closure from `from`, skipping references that do not resolve.
inline std::set<NodeId> reach_lenient(const VideoProject& p, const NodeId& from) {
  std::set<NodeId> seen;
  if (!p.find(from)) return seen;
  std::deque<NodeId> queue{from};
  seen.insert(from);
  while (!queue.empty()) {
    const NodeId id = queue.front();
    queue.pop_front();
    for (auto& next : successors(p.nodes.at(id))) {
      if (p.find(next) && seen.insert(next).second) queue.push_back(next);
    }
  }
  return seen;
}

}  // namespace detail

inline ValidationReport validate_graph(const VideoProject& p) {
  ValidationReport r;
  auto error = [&](IssueCode c, std::optional<NodeId> node, std::string detail) {
    r.errors.push_back({c, std::move(node), std::move(detail)});
  };
  auto check_ref = [&](const NodeId& from, const NodeId& to, std::string_view what) {
    if (!p.find(to)) error(IssueCode::DanglingTarget, from, std::string(what) + " '" + to + "' does not exist");
  };

  if (!p.find(p.start_node)) error(IssueCode::DanglingTarget, std::nullopt, "start_node '" + p.start_node + "' does not exist");

  for (const auto& [id, node] : p.nodes) {
    if (const auto* s = std::get_if<SceneNode>(&node)) {
      auto media = p.media_assets.find(s->media);
      if (media == p.media_assets.end()) {
        error(IssueCode::DanglingTarget, id, "media '" + s->media + "' does not exist");
      } else if (media->second.duration_ms != s->duration_ms) {
        error(IssueCode::BadDuration, id, "scene duration differs from media '" + s->media + "'");
      }
      if (s->duration_ms <= 0) error(IssueCode::BadDuration, id, "scene duration must be positive");
      check_ref(id, s->next, "next");
    } else if (const auto* f = std::get_if<ForkNode>(&node)) {
      if (f->options.size() < 2) error(IssueCode::EmptyFork, id, "fork needs at least two options");
      std::set<std::string> option_ids;
      std::set<NodeId> targets;
      for (const auto& o : f->options) {
        if (o.label.empty()) error(IssueCode::EmptyFork, id, "option '" + o.option_id + "' has an empty label");
        if (!option_ids.insert(o.option_id).second)
          error(IssueCode::DuplicateId, id, "option id '" + o.option_id + "' repeated");
        if (!targets.insert(o.target).second)
          error(IssueCode::DuplicateId, id, "option target '" + o.target + "' repeated");
        check_ref(id, o.target, "option target");
      }
    } else if (const auto* q = std::get_if<QuestionNode>(&node)) {
      if (q->choices.size() < 2) error(IssueCode::BadCorrectIndex, id, "question needs at least two choices");
      if (q->correct_index >= q->choices.size())
        error(IssueCode::BadCorrectIndex, id, "correct_index " + std::to_string(q->correct_index) + " out of range");
      check_ref(id, q->next, "next");
    }
  }

  for (const auto& [media_id, m] : p.media_assets) {
    if (m.duration_ms <= 0) error(IssueCode::BadDuration, std::nullopt, "media '" + media_id + "' duration must be positive");
    if (m.uri.empty()) error(IssueCode::DanglingTarget, std::nullopt, "media '" + media_id + "' has no uri");
  }

  std::set<std::string> annotation_ids;
  for (const auto& a : p.annotations) {
    if (!annotation_ids.insert(a.annotation_id).second)
      error(IssueCode::DuplicateId, a.anchor.node, "annotation id '" + a.annotation_id + "' repeated");
    const Node* anchor = p.find(a.anchor.node);
    if (!anchor) {
      error(IssueCode::BadAnchor, a.anchor.node, "annotation '" + a.annotation_id + "' anchors to a missing node");
    } else if (a.anchor.start_ms < 0 || a.anchor.start_ms > a.anchor.end_ms ||
               a.anchor.end_ms > node_duration(*anchor)) {
      error(IssueCode::BadAnchor, a.anchor.node, "annotation '" + a.annotation_id + "' range outside node media");
    }
    if (a.title.empty()) error(IssueCode::BadAnchor, a.anchor.node, "annotation '" + a.annotation_id + "' has no title");
  }

  const auto reachable = detail::reach_lenient(p, p.start_node);
  bool end_reachable = false;
  for (const auto& [id, node] : p.nodes) {
    if (!reachable.contains(id)) {
      r.warnings.push_back({IssueCode::UnreachableNode, id, "not reachable from start"});
    } else if (std::holds_alternative<EndNode>(node)) {
      end_reachable = true;
    }
  }
  if (!end_reachable) error(IssueCode::NoEndNode, std::nullopt, "no end node reachable from start");

  r.sort();
  return r;
}

// ---------------------------------------------------------------------------
// Structural queries

inline std::set<NodeId> reachable_nodes(const VideoProject& p) {
  if (!p.find(p.start_node)) throw DanglingTarget(p.start_node);
  std::set<NodeId> seen{p.start_node};
  std::deque<NodeId> queue{p.start_node};
  while (!queue.empty()) {
    const NodeId id = queue.front();
    queue.pop_front();
    for (auto& next : successors(p.nodes.at(id))) {
      if (!p.find(next)) throw DanglingTarget(next);
      if (seen.insert(next).second) queue.push_back(next);
    }
  }
  return seen;
}

enum class NavCategory { scene, path, question };

inline std::string_view to_string(NavCategory c) {
  switch (c) {
    case NavCategory::scene: return "scene";
    case NavCategory::path: return "path";
    case NavCategory::question: return "question";
  }
  return "scene";
}

struct NavigationPoint {
  NodeId node;
  std::int64_t timeline_position_ms = 0;
  std::string title;
  NavCategory category = NavCategory::scene;

  bool operator==(const NavigationPoint&) const = default;
};

/// Timeline position of every reachable node: cumulative media time along
/// the first route found by a depth-first walk that tries fork options in
/// author order. On the default route (first option at each fork) this is
/// exactly the default-path running time. The second member is the walk's
/// visiting order, used to break position ties.
inline std::map<NodeId, std::pair<std::int64_t, std::size_t>> timeline_positions(const VideoProject& p) {
  std::map<NodeId, std::pair<std::int64_t, std::size_t>> out;
  if (!p.find(p.start_node)) return out;
  std::vector<std::pair<NodeId, std::int64_t>> stack{{p.start_node, 0}};
  std::size_t order = 0;
  while (!stack.empty()) {
    auto [id, pos] = stack.back();
    stack.pop_back();
    if (out.contains(id)) continue;
    const Node* n = p.find(id);
    if (!n) continue;
    out.emplace(id, std::pair{pos, order++});
    const auto next = successors(*n);
    const auto after = pos + node_duration(*n);
    for (auto it = next.rbegin(); it != next.rend(); ++it)
      if (!out.contains(*it)) stack.emplace_back(*it, after);
  }
  return out;
}

inline std::vector<NavigationPoint> navigation_points(const VideoProject& p) {
  const auto positions = timeline_positions(p);
  std::vector<std::pair<std::size_t, NavigationPoint>> points;
  for (const auto& [id, node] : p.nodes) {
    if (!is_nav_point(node)) continue;
    auto pos = positions.find(id);
    // Unreachable flagged nodes have no place on the timeline.
    if (pos == positions.end()) continue;
    NavigationPoint np{id, pos->second.first, {}, NavCategory::scene};
    if (const auto* s = std::get_if<SceneNode>(&node)) {
      np.title = s->title;
    } else if (const auto* f = std::get_if<ForkNode>(&node)) {
      np.title = f->prompt;
      np.category = NavCategory::path;
    } else if (const auto* q = std::get_if<QuestionNode>(&node)) {
      np.title = q->prompt;
      np.category = NavCategory::question;
    }
    points.emplace_back(pos->second.second, std::move(np));
  }
  std::sort(points.begin(), points.end(), [](const auto& a, const auto& b) {
    return std::pair(a.second.timeline_position_ms, a.first) < std::pair(b.second.timeline_position_ms, b.first);
  });
  std::vector<NavigationPoint> out;
  out.reserve(points.size());
  for (auto& [_, np] : points) out.push_back(std::move(np));
  return out;
}

/// The nodes entered through one fork option, up to but excluding the next
/// fork or end node.
struct BranchPath {
  NodeId fork;
  std::string option_id;
  std::vector<NodeId> nodes;

  bool operator==(const BranchPath&) const = default;
};

struct BranchPathSet {
  std::vector<BranchPath> paths;
  /// Fewest forks on any start-to-end route, i.e. the fewest branch paths a
  /// complete playthrough has to watch.
  int minimum_per_playthrough = 0;
};

inline BranchPathSet enumerate_branch_paths(const VideoProject& p) {
  BranchPathSet out;
  for (const auto& [id, node] : p.nodes) {
    const auto* f = std::get_if<ForkNode>(&node);
    if (!f) continue;
    for (const auto& o : f->options) {
      BranchPath bp{id, o.option_id, {}};
      std::set<NodeId> seen;
      NodeId cur = o.target;
      while (const Node* n = p.find(cur)) {
        if (std::holds_alternative<ForkNode>(*n) || std::holds_alternative<EndNode>(*n)) break;
        if (!seen.insert(cur).second) break;  // loop back into the same chain
        bp.nodes.push_back(cur);
        cur = successors(*n).front();
      }
      out.paths.push_back(std::move(bp));
    }
  }

  // 0-1 BFS where entering a fork costs one.
  if (p.find(p.start_node)) {
    std::map<NodeId, int> dist;
    std::deque<NodeId> dq{p.start_node};
    dist[p.start_node] = std::holds_alternative<ForkNode>(p.nodes.at(p.start_node)) ? 1 : 0;
    std::optional<int> best;
    while (!dq.empty()) {
      const NodeId id = dq.front();
      dq.pop_front();
      const Node& n = p.nodes.at(id);
      const int d = dist.at(id);
      if (std::holds_alternative<EndNode>(n)) {
        best = std::min(best.value_or(d), d);
        continue;
      }
      for (auto& next : successors(n)) {
        const Node* nn = p.find(next);
        if (!nn) continue;
        const int cost = std::holds_alternative<ForkNode>(*nn) ? 1 : 0;
        auto it = dist.find(next);
        if (it == dist.end() || d + cost < it->second) {
          dist[next] = d + cost;
          if (cost == 0)
            dq.push_front(next);
          else
            dq.push_back(next);
        }
      }
    }
    out.minimum_per_playthrough = best.value_or(0);
  }
  return out;
}

struct ForkChoice {
  NodeId fork;
  std::string option_id;

  auto operator<=>(const ForkChoice&) const = default;
};

/// Questions that can only be reached by taking one particular fork option:
/// removing that single option edge cuts them off from the start node.
inline std::map<NodeId, ForkChoice> conditional_questions(const VideoProject& p) {
  const auto base = detail::reach_lenient(p, p.start_node);
  std::map<NodeId, std::vector<ForkChoice>> cuts;
  for (const auto& [fork_id, node] : p.nodes) {
    const auto* f = std::get_if<ForkNode>(&node);
    if (!f || !base.contains(fork_id)) continue;
    for (std::size_t i = 0; i < f->options.size(); ++i) {
      VideoProject pruned = p;
      auto& opts = std::get<ForkNode>(pruned.nodes.at(fork_id)).options;
      opts.erase(opts.begin() + static_cast<std::ptrdiff_t>(i));
      const auto reach = detail::reach_lenient(pruned, pruned.start_node);
      for (const auto& id : base) {
        if (!reach.contains(id) && std::holds_alternative<QuestionNode>(p.nodes.at(id)))
          cuts[id].push_back({fork_id, f->options[i].option_id});
      }
    }
  }
  std::map<NodeId, ForkChoice> out;
  for (auto& [q, choices] : cuts)
    if (choices.size() == 1) out.emplace(q, choices.front());
  return out;
}

inline std::size_t count_nodes_of(const VideoProject& p, std::size_t variant_index) {
  return static_cast<std::size_t>(std::count_if(p.nodes.begin(), p.nodes.end(),
                                                [&](const auto& kv) { return kv.second.index() == variant_index; }));
}

inline std::size_t question_count(const VideoProject& p) { return count_nodes_of(p, 2); }
inline std::size_t fork_count(const VideoProject& p) { return count_nodes_of(p, 1); }

}  // namespace vvp
