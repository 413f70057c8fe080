#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace midl {

// Invalid user-supplied configuration (bad dims, bad probabilities, ...).
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file; carries the byte offset at which parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t byte_offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset_(byte_offset) {}
  std::uint64_t byte_offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace midl
