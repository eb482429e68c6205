#pragma once

#include <stdexcept>
#include <string>

namespace kecae {

/// Tensor extents disagree with what an operation needs.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// An operation that needs a scalar (or a given rank) got something else.
class RankError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Bad or inconsistent input data: labels, counts, files.
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents. `offset` is the byte position of the problem.
class ParseError : public DataError {
public:
  ParseError(const std::string &what, std::size_t offset)
      : DataError(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

private:
  std::size_t offset_;
};

/// Loss became NaN or infinite during training.
class DivergenceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid command-line or config usage.
class UsageError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

} // namespace kecae
