#pragma once

#include <stdexcept>
#include <string>

namespace calibkit {

/// Malformed input: bad file contents, bad flags, wrong sizes.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Input was well-formed but the geometry or data cannot support the request
/// (no visible points, no scoreable mask, degenerate rotation, ...).
class DomainError : public std::runtime_error {
 public:
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace calibkit
