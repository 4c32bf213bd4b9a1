#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace conmt {

/// Bad arguments: size mismatches, out-of-range indices, impossible requests.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed table or checkpoint file. `where()` is a 1-based line number for
/// text input and a byte offset for binary input.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t where)
      : std::runtime_error(what), where_(where) {}
  std::size_t where() const noexcept { return where_; }

 private:
  std::size_t where_;
};

/// A mixed embedding row collapsed to the zero vector.
class DegenerateRow : public std::runtime_error {
 public:
  DegenerateRow(const std::string& what, std::size_t row)
      : std::runtime_error(what), row_(row) {}
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

/// Hidden state whose norm is too small to define a direction.
class DegenerateHiddenState : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Operation not available for this index (e.g. Hamming prefilter on a
/// non-hypercube table).
class UnsupportedIndex : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Training produced a non-finite loss or diverged.
class TrainingFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace conmt
