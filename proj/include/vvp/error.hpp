#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vvp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed project/bundle document. `location` is either "byte N" for
/// syntax errors or a slash path into the document for schema errors.
class SyntaxError : public Error {
 public:
  SyntaxError(std::string location, const std::string& message)
      : Error(location + ": " + message), location_(std::move(location)) {}

  const std::string& location() const noexcept { return location_; }

 private:
  std::string location_;
};

class UnsupportedVersion : public Error {
 public:
  explicit UnsupportedVersion(std::int64_t version)
      : Error("unsupported format_version " + std::to_string(version)), version_(version) {}

  std::int64_t version() const noexcept { return version_; }

 private:
  std::int64_t version_;
};

/// A graph query hit a reference to a node that does not exist.
class DanglingTarget : public Error {
 public:
  explicit DanglingTarget(const std::string& node_id)
      : Error("dangling node reference '" + node_id + "'"), node_id_(node_id) {}

  const std::string& node_id() const noexcept { return node_id_; }

 private:
  std::string node_id_;
};

class InvalidProject : public Error {
 public:
  using Error::Error;
};

class IllegalTransition : public Error {
 public:
  IllegalTransition(std::string mode, std::string input, const std::string& why = {})
      : Error("illegal input " + input + " in mode " + mode + (why.empty() ? "" : " (" + why + ")")),
        mode_(std::move(mode)),
        input_(std::move(input)) {}

  const std::string& mode() const noexcept { return mode_; }
  const std::string& input() const noexcept { return input_; }

 private:
  std::string mode_;
  std::string input_;
};

/// A session log that is not gap-free, has out-of-range playheads, or
/// records a transition the engine would not have produced.
class CorruptLog : public Error {
 public:
  CorruptLog(std::int64_t seq, const std::string& message)
      : Error("corrupt log at seq " + std::to_string(seq) + ": " + message), seq_(seq) {}

  std::int64_t seq() const noexcept { return seq_; }

 private:
  std::int64_t seq_;
};

enum class StatsErrorKind { EmptySample, SampleTooSmall, ConstantSample, DegenerateVariance };

class StatsError : public Error {
 public:
  StatsError(StatsErrorKind kind, const std::string& message) : Error(message), kind_(kind) {}

  StatsErrorKind kind() const noexcept { return kind_; }

 private:
  StatsErrorKind kind_;
};

}  // namespace vvp
