#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trajforge {

enum class ErrorCode {
  OutOfBounds,
  OutOfRange,
  InvalidCell,
  InvalidArgument,
  MalformedRow,
  MissingColumn,
  Io,
  ParseError,
  MissingEOS,
  EmptySequence,
  InvalidConfig,
  SequenceTooLong,
  TokenOutOfRange,
  ShapeMismatch,
  BadMagic,
  VersionMismatch,
  ChecksumMismatch,
  TruncatedFile,
  EmptyConstraintSet,
  UnresolvableCollision,
  NonFiniteLogits,
  RetriesExhausted,
  Unsatisfiable,
  BinMismatch,
  GridMismatch,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by the CSV reader. `reason` separates arity problems from fields
// that fail numeric conversion; both are reported as MalformedRow.
class MalformedRow : public Error {
 public:
  enum class Reason { FieldCount, NonNumericField, CoordinateRange };

  MalformedRow(std::size_t line, std::string text, Reason reason, std::string detail);

  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] const std::string& text() const noexcept { return text_; }
  [[nodiscard]] Reason reason() const noexcept { return reason_; }

 private:
  std::size_t line_;
  std::string text_;
  Reason reason_;
};

// Grammar violation in a token sequence; `position` is the token index.
class ParseError : public Error {
 public:
  ParseError(std::size_t position, std::string expected, std::string found);

  [[nodiscard]] std::size_t position() const noexcept { return position_; }
  [[nodiscard]] const std::string& expected() const noexcept { return expected_; }
  [[nodiscard]] const std::string& found() const noexcept { return found_; }

 private:
  std::size_t position_;
  std::string expected_;
  std::string found_;
};

class RetriesExhausted : public Error {
 public:
  explicit RetriesExhausted(std::map<std::string, int> reasons);

  [[nodiscard]] const std::map<std::string, int>& reasons() const noexcept { return reasons_; }

 private:
  std::map<std::string, int> reasons_;
};

}  // namespace trajforge
