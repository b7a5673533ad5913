#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splatshard {

/// A caller broke an operation's precondition (shape mismatch, stale mask, off-schedule call).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed input file. `line` is 1-based, 0 when the location is not line-oriented.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& field,
             const std::string& message)
      : std::runtime_error(source + ":" + std::to_string(line) + ": field '" + field + "': " + message),
        source_(source),
        line_(line),
        field_(field) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string source_;
  std::size_t line_;
  std::string field_;
};

class MissingAssetError : public std::runtime_error {
 public:
  explicit MissingAssetError(const std::string& path)
      : std::runtime_error("missing asset: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const char* message) {
  if (!condition) throw ContractViolation(message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ContractViolation(message);
}

}  // namespace splatshard
