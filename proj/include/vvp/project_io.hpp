#pragma once

// The .vvp project document: parsing (strict or lenient about unknown
// fields), canonical serialization, and media reference checks.

#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vvp/codec.hpp"
#include "vvp/graph.hpp"

namespace vvp {

inline constexpr std::int64_t kFormatVersion = 1;

struct ParseOptions {
  /// Downgrade unknown fields from SyntaxError to UnknownField warnings.
  bool lenient = false;
};

struct ParsedProject {
  VideoProject project;
  ValidationReport report;
};

namespace detail {

inline Json parse_json_document(std::string_view bytes) {
  if (bytes.empty()) throw SyntaxError("byte 0", "empty document");
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const Json::parse_error& e) {
    throw SyntaxError("byte " + std::to_string(e.byte), e.what());
  }
}

inline ParsedProject parse_project_document(std::string_view bytes, ParseOptions opts) {
  const Json doc = detail::parse_json_document(bytes);
  std::vector<Issue> unknown;
  std::vector<Issue>* sink = opts.lenient ? &unknown : nullptr;
  ValidationReport parse_report;

  codec::ObjectReader top(doc, "", sink);
  const std::int64_t version = top.integer("format_version");
  if (version != kFormatVersion) throw UnsupportedVersion(version);

  ParsedProject out;
  VideoProject& p = out.project;
  p.id = top.string("id");
  p.title = top.string_or("title", "");
  p.start_node = top.string("start_node");

  const Json& media = top.array_or_empty("media");
  for (std::size_t i = 0; i < media.size(); ++i) {
    codec::ObjectReader m(media[i], "/media/" + std::to_string(i), sink);
    MediaDescriptor d;
    d.media_id = m.string("media_id");
    d.uri = m.string("uri");
    d.duration_ms = m.integer("duration_ms");
    d.mime_hint = m.string_or("mime_hint", "");
    m.finish();
    if (!p.media_assets.emplace(d.media_id, d).second)
      parse_report.errors.push_back({IssueCode::DuplicateId, std::nullopt, "media id '" + d.media_id + "' repeated"});
  }

  const Json& nodes = top.array("nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    codec::ObjectReader n(nodes[i], "/nodes/" + std::to_string(i), sink);
    NodeId id = n.string("node_id");
    const std::string kind = n.string("kind");
    Node node;
    if (kind == "scene") {
      SceneNode s;
      s.media = n.string("media");
      s.title = n.string_or("title", "");
      s.is_nav_point = n.boolean_or("nav_point", false);
      s.next = n.string("next");
      if (auto it = p.media_assets.find(s.media); it != p.media_assets.end()) s.duration_ms = it->second.duration_ms;
      node = std::move(s);
    } else if (kind == "fork") {
      ForkNode f;
      f.prompt = n.string_or("prompt", "");
      f.is_nav_point = n.boolean_or("nav_point", false);
      const Json& options = n.array("options");
      for (std::size_t k = 0; k < options.size(); ++k) {
        codec::ObjectReader o(options[k], n.child("options/" + std::to_string(k)), sink);
        ForkOption opt;
        opt.option_id = o.string("option_id");
        opt.label = o.string("label");
        opt.target = o.string("target");
        o.finish();
        f.options.push_back(std::move(opt));
      }
      node = std::move(f);
    } else if (kind == "question") {
      QuestionNode q;
      q.prompt = n.string("prompt");
      const Json& choices = n.array("choices");
      for (std::size_t k = 0; k < choices.size(); ++k)
        q.choices.push_back(codec::ObjectReader::as_string(choices[k], n.child("choices/" + std::to_string(k))));
      const std::int64_t correct = n.integer("correct_index");
      q.correct_index = correct < 0 ? std::numeric_limits<std::size_t>::max() : static_cast<std::size_t>(correct);
      q.is_nav_point = n.boolean_or("nav_point", false);
      q.next = n.string("next");
      node = std::move(q);
    } else if (kind == "end") {
      node = EndNode{};
    } else {
      throw SyntaxError(n.child("kind"), "unknown node kind '" + kind + "'");
    }
    n.finish();
    if (!p.nodes.emplace(id, std::move(node)).second)
      parse_report.errors.push_back({IssueCode::DuplicateId, id, "node id repeated"});
  }

  const Json& annotations = top.array_or_empty("annotations");
  for (std::size_t i = 0; i < annotations.size(); ++i)
    p.annotations.push_back(codec::annotation_from_json(annotations[i], "/annotations/" + std::to_string(i), sink));

  top.finish();

  out.report = validate_graph(p);
  parse_report.warnings = std::move(unknown);
  out.report.merge(parse_report);
  return out;
}

}  // namespace detail

inline ParsedProject parse_project(std::string_view bytes, ParseOptions opts = {}) {
  try {
    return detail::parse_project_document(bytes, opts);
  } catch (const Json::exception& e) {
    // Anything the field readers did not anticipate is still a malformed document.
    throw SyntaxError("document", e.what());
  }
}

inline ParsedProject parse_project(std::span<const std::byte> bytes, ParseOptions opts = {}) {
  return parse_project(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), opts);
}

inline Json project_to_json(const VideoProject& p) {
  Json media = Json::array();
  for (const auto& [id, m] : p.media_assets)
    media.push_back({{"media_id", m.media_id}, {"uri", m.uri}, {"duration_ms", m.duration_ms}, {"mime_hint", m.mime_hint}});

  Json nodes = Json::array();
  for (const auto& [id, node] : p.nodes) {
    Json j{{"node_id", id}, {"kind", node_kind(node)}};
    if (const auto* s = std::get_if<SceneNode>(&node)) {
      j["media"] = s->media;
      j["title"] = s->title;
      j["nav_point"] = s->is_nav_point;
      j["next"] = s->next;
    } else if (const auto* f = std::get_if<ForkNode>(&node)) {
      j["prompt"] = f->prompt;
      j["nav_point"] = f->is_nav_point;
      Json options = Json::array();
      for (const auto& o : f->options) options.push_back({{"option_id", o.option_id}, {"label", o.label}, {"target", o.target}});
      j["options"] = std::move(options);
    } else if (const auto* q = std::get_if<QuestionNode>(&node)) {
      j["prompt"] = q->prompt;
      j["choices"] = q->choices;
      j["correct_index"] = q->correct_index;
      j["nav_point"] = q->is_nav_point;
      j["next"] = q->next;
    }
    nodes.push_back(std::move(j));
  }

  Json annotations = Json::array();
  for (const auto& a : p.annotations) annotations.push_back(codec::to_json(a));

  return {{"format_version", kFormatVersion},
          {"id", p.id},
          {"title", p.title},
          {"start_node", p.start_node},
          {"media", std::move(media)},
          {"nodes", std::move(nodes)},
          {"annotations", std::move(annotations)}};
}

inline std::string serialize_project(const VideoProject& p) { return canonical_dump(project_to_json(p)); }

enum class MediaRefStatus { missing, remote_skipped };

struct MediaRefIssue {
  MediaId media_id;
  std::string uri;
  MediaRefStatus status;

  bool operator==(const MediaRefIssue&) const = default;
};

inline bool is_url(std::string_view uri) { return uri.find("://") != std::string_view::npos; }

/// `available` holds paths relative to the directory the project's media
/// uris are resolved against. Remote uris are reported but not checked.
inline std::vector<MediaRefIssue> check_media_refs(const VideoProject& p, const std::set<std::string>& available) {
  std::vector<MediaRefIssue> out;
  for (const auto& [id, m] : p.media_assets) {
    if (is_url(m.uri)) {
      out.push_back({id, m.uri, MediaRefStatus::remote_skipped});
    } else if (!available.contains(std::filesystem::path(m.uri).lexically_normal().generic_string())) {
      out.push_back({id, m.uri, MediaRefStatus::missing});
    }
  }
  return out;
}

/// Regular files below `root`, as normalized relative paths.
inline std::set<std::string> files_under(const std::filesystem::path& root) {
  std::set<std::string> out;
  std::error_code ec;
  for (auto it = std::filesystem::recursive_directory_iterator(root, ec); !ec && it != std::filesystem::end(it);
       it.increment(ec)) {
    if (it->is_regular_file()) out.insert(std::filesystem::relative(it->path(), root).lexically_normal().generic_string());
  }
  return out;
}

}  // namespace vvp
