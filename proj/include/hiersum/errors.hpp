#pragma once

#include <stdexcept>
#include <string>

namespace hiersum {

// Bad user input: malformed files, invalid configuration, inconsistent
// flag combinations. The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Tensor shape disagreement; message names the offending shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Corrupt or unreadable files, failed writes.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace hiersum
