#include "trajforge/error.hpp"

namespace trajforge {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::InvalidCell: return "InvalidCell";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingEOS: return "MissingEOS";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::SequenceTooLong: return "SequenceTooLong";
    case ErrorCode::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::EmptyConstraintSet: return "EmptyConstraintSet";
    case ErrorCode::UnresolvableCollision: return "UnresolvableCollision";
    case ErrorCode::NonFiniteLogits: return "NonFiniteLogits";
    case ErrorCode::RetriesExhausted: return "RetriesExhausted";
    case ErrorCode::Unsatisfiable: return "Unsatisfiable";
    case ErrorCode::BinMismatch: return "BinMismatch";
    case ErrorCode::GridMismatch: return "GridMismatch";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

MalformedRow::MalformedRow(std::size_t line, std::string text, Reason reason, std::string detail)
    : Error(ErrorCode::MalformedRow, "line " + std::to_string(line) + ": " + detail + " in '" + text + "'"),
      line_(line),
      text_(std::move(text)),
      reason_(reason) {}

ParseError::ParseError(std::size_t position, std::string expected, std::string found)
    : Error(ErrorCode::ParseError,
            "at token " + std::to_string(position) + ": expected " + expected + ", found " + found),
      position_(position),
      expected_(std::move(expected)),
      found_(std::move(found)) {}

namespace {
std::string describe(const std::map<std::string, int>& reasons) {
  std::string out = "generation failed;";
  for (const auto& [k, v] : reasons) out += " " + k + "=" + std::to_string(v);
  return out;
}
}  // namespace

RetriesExhausted::RetriesExhausted(std::map<std::string, int> reasons)
    : Error(ErrorCode::RetriesExhausted, describe(reasons)), reasons_(std::move(reasons)) {}

}  // namespace trajforge
