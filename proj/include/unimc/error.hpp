#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace unimc {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes incompatible with the requested op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf appeared in a value, loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file or record.
class FormatError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

}  // namespace detail
}  // namespace unimc
