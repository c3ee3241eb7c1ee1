#pragma once

// Shared JSON plumbing for the project document, session logs and export
// bundles: a schema reader that tracks its position for error messages and
// rejects unknown keys, plus the annotation encoding used by all three.

#include <cstdint>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vvp/error.hpp"
#include "vvp/graph.hpp"
#include "vvp/time.hpp"

namespace vvp {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Canonical document bytes: sorted keys, two-space indent, newline-terminated.
inline std::string canonical_dump(const Json& j) { return j.dump(2, ' ', false, Json::error_handler_t::strict) + "\n"; }

namespace codec {

/// Field-by-field reader over a JSON object. Every key must be consumed via
/// one of the accessors before `finish()`; leftovers are unknown fields.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path, std::vector<Issue>* lenient_sink)
      : j_(j), path_(std::move(path)), sink_(lenient_sink) {
    if (!j_.is_object()) throw SyntaxError(path_or_root(), "expected an object");
  }

  const std::string& path() const { return path_; }

  bool has(const char* key) const { return j_.contains(key); }

  const Json& required(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw SyntaxError(path_or_root(), std::string("missing field '") + key + "'");
    return *it;
  }

  const Json* optional(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string string(const char* key) { return as_string(required(key), child(key)); }

  std::string string_or(const char* key, std::string fallback) {
    const Json* v = optional(key);
    return v ? as_string(*v, child(key)) : std::move(fallback);
  }

  std::int64_t integer(const char* key) { return as_integer(required(key), child(key)); }

  bool boolean_or(const char* key, bool fallback) {
    const Json* v = optional(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw SyntaxError(child(key), "expected a boolean");
    return v->get<bool>();
  }

  const Json& array(const char* key) {
    const Json& v = required(key);
    if (!v.is_array()) throw SyntaxError(child(key), "expected an array");
    return v;
  }

  const Json& array_or_empty(const char* key) {
    static const Json empty = Json::array();
    const Json* v = optional(key);
    if (!v) return empty;
    if (!v->is_array()) throw SyntaxError(child(key), "expected an array");
    return *v;
  }

  std::string child(const std::string& key) const { return path_ + "/" + key; }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (seen_.contains(it.key())) continue;
      if (!sink_) throw SyntaxError(child(it.key()), "unknown field");
      sink_->push_back({IssueCode::UnknownField, std::nullopt, "unknown field " + child(it.key())});
    }
  }

  static std::string as_string(const Json& v, const std::string& at) {
    if (!v.is_string()) throw SyntaxError(at, "expected a string");
    return v.get<std::string>();
  }

  static std::int64_t as_integer(const Json& v, const std::string& at) {
    if (v.is_number_integer()) return v.get<std::int64_t>();
    if (v.is_number_unsigned()) {
      const auto u = v.get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
        throw SyntaxError(at, "integer out of range");
      return static_cast<std::int64_t>(u);
    }
    throw SyntaxError(at, "expected an integer");
  }

 private:
  std::string path_or_root() const { return path_.empty() ? "/" : path_; }

  const Json& j_;
  std::string path_;
  std::vector<Issue>* sink_;
  std::set<std::string> seen_;
};

inline BodyKind body_kind_from(const std::string& s, const std::string& at) {
  if (s == "text") return BodyKind::text;
  if (s == "link") return BodyKind::link;
  if (s == "image") return BodyKind::image;
  if (s == "file") return BodyKind::file;
  throw SyntaxError(at, "unknown body type '" + s + "'");
}

inline Json to_json(const Annotation& a) {
  Json body = Json::array();
  for (const auto& item : a.body) body.push_back({{"type", to_string(item.kind)}, {"value", item.value}});
  Json j{{"annotation_id", a.annotation_id},
         {"author_kind", to_string(a.author_kind)},
         {"anchor", {{"node", a.anchor.node}, {"start_ms", a.anchor.start_ms}, {"end_ms", a.anchor.end_ms}}},
         {"title", a.title},
         {"body", std::move(body)}};
  if (a.created_at) j["created_at"] = format_rfc3339(*a.created_at);
  return j;
}

inline Annotation annotation_from_json(const Json& j, const std::string& path, std::vector<Issue>* lenient) {
  ObjectReader r(j, path, lenient);
  Annotation a;
  a.annotation_id = r.string("annotation_id");
  const auto kind = r.string("author_kind");
  if (kind == "creator")
    a.author_kind = AuthorKind::creator;
  else if (kind == "viewer")
    a.author_kind = AuthorKind::viewer;
  else
    throw SyntaxError(r.child("author_kind"), "expected \"creator\" or \"viewer\"");
  {
    ObjectReader anchor(r.required("anchor"), r.child("anchor"), lenient);
    a.anchor.node = anchor.string("node");
    a.anchor.start_ms = anchor.integer("start_ms");
    a.anchor.end_ms = anchor.integer("end_ms");
    anchor.finish();
  }
  a.title = r.string("title");
  const Json& body = r.array_or_empty("body");
  for (std::size_t i = 0; i < body.size(); ++i) {
    ObjectReader item(body[i], r.child("body/" + std::to_string(i)), lenient);
    BodyItem b;
    b.kind = body_kind_from(item.string("type"), item.child("type"));
    b.value = item.string("value");
    item.finish();
    a.body.push_back(std::move(b));
  }
  if (const Json* created = r.optional("created_at")) {
    try {
      a.created_at = parse_rfc3339(ObjectReader::as_string(*created, r.child("created_at")));
    } catch (const std::invalid_argument& e) {
      throw SyntaxError(r.child("created_at"), e.what());
    }
  }
  r.finish();
  return a;
}

}  // namespace codec
}  // namespace vvp
