#pragma once

// Text codec between trajectories and token ids.
//
// Grammar:  <BOS> visit ( => visit )* <EOS>
//   visit:  arrival time is T_k , location is G_m , duration is D_n
//
// Field values are single tokens, so every visit block is exactly
// kVisitBlockLength tokens.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trajforge/core.hpp"
#include "trajforge/rng.hpp"

namespace trajforge {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

enum class TokenClass { Template, Time, Location, Duration };

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kSep = 2;
  static constexpr TokenId kArrival = 3;
  static constexpr TokenId kTime = 4;
  static constexpr TokenId kIs = 5;
  static constexpr TokenId kLocation = 6;
  static constexpr TokenId kDuration = 7;
  static constexpr TokenId kComma = 8;
  static constexpr int kTemplateCount = 9;

  Vocabulary(const GridSpec& grid, const TimeSpec& ts);

  [[nodiscard]] int size() const noexcept { return static_cast<int>(tokens_.size()); }
  [[nodiscard]] const GridSpec& grid() const noexcept { return grid_; }
  [[nodiscard]] const TimeSpec& timespec() const noexcept { return ts_; }

  [[nodiscard]] TokenId time_token(int slot) const;
  [[nodiscard]] TokenId location_token(int cell) const;
  [[nodiscard]] TokenId duration_token(int slots) const;

  [[nodiscard]] bool contains(TokenId id) const noexcept { return id >= 0 && id < size(); }
  [[nodiscard]] TokenClass token_class(TokenId id) const;
  // Slot, cell id or duration carried by a value token.
  [[nodiscard]] int value(TokenId id) const;

  [[nodiscard]] const std::string& token(TokenId id) const;
  [[nodiscard]] TokenId id(std::string_view token) const;  // throws InvalidArgument

  // FNV-1a over the ordered token strings.
  [[nodiscard]] std::uint64_t content_hash() const noexcept;

 private:
  GridSpec grid_;
  TimeSpec ts_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
  TokenId time_base_ = 0;
  TokenId location_base_ = 0;
  TokenId duration_base_ = 0;
};

inline constexpr std::size_t kVisitBlockLength = 12;

Vocabulary build_vocabulary(const GridSpec& grid, const TimeSpec& ts);

// Appends the tokens of one visit block.
void append_visit(TokenSequence& out, const Visit& v, const Vocabulary& vocab);

TokenSequence encode_trajectory(const Trajectory& traj, const Vocabulary& vocab);

// Strict parse. Visits come back in textual order without any reordering or
// validity checks. Running out of tokens inside a visit is a ParseError;
// running out where a separator or <EOS> belongs is MissingEOS.
Trajectory decode_tokens(std::span<const TokenId> tokens, const Vocabulary& vocab);

// Reorders whole visit blocks with a uniform random permutation; tokens inside
// a block keep their order.
TokenSequence permute_visits(std::span<const TokenId> tokens, const Vocabulary& vocab, Rng& rng);

// Whitespace-joined token strings, for debugging dumps.
std::string format_tokens(std::span<const TokenId> tokens, const Vocabulary& vocab);
TokenSequence parse_token_line(std::string_view line, const Vocabulary& vocab);

}  // namespace trajforge
