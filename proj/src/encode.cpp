#include "trajforge/encode.hpp"

#include <array>
#include <sstream>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

constexpr std::array<const char*, Vocabulary::kTemplateCount> kTemplateTokens = {
    "<BOS>", "<EOS>", "=>", "arrival", "time", "is", "location", "duration", ","};

// Position-by-position shape of a visit block. Value slots are marked by
// their class; everything else is a fixed template token.
struct BlockSlot {
  TokenClass cls;
  TokenId fixed;
};
constexpr std::array<BlockSlot, kVisitBlockLength> kBlock = {{
    {TokenClass::Template, Vocabulary::kArrival},
    {TokenClass::Template, Vocabulary::kTime},
    {TokenClass::Template, Vocabulary::kIs},
    {TokenClass::Time, -1},
    {TokenClass::Template, Vocabulary::kComma},
    {TokenClass::Template, Vocabulary::kLocation},
    {TokenClass::Template, Vocabulary::kIs},
    {TokenClass::Location, -1},
    {TokenClass::Template, Vocabulary::kComma},
    {TokenClass::Template, Vocabulary::kDuration},
    {TokenClass::Template, Vocabulary::kIs},
    {TokenClass::Duration, -1},
}};

const char* class_name(TokenClass c) {
  switch (c) {
    case TokenClass::Time: return "time value";
    case TokenClass::Location: return "location value";
    case TokenClass::Duration: return "duration value";
    case TokenClass::Template: break;
  }
  return "template token";
}

std::string describe(const Vocabulary& vocab, TokenId id) {
  return vocab.contains(id) ? "'" + vocab.token(id) + "'" : "<id " + std::to_string(id) + ">";
}

struct Parsed {
  std::vector<Visit> visits;
  std::vector<std::size_t> block_starts;
};

Parsed parse(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "no tokens to decode");
  if (tokens[0] != Vocabulary::kBos) throw ParseError(0, "'<BOS>'", describe(vocab, tokens[0]));

  Parsed out;
  std::size_t pos = 1;
  while (true) {
    out.block_starts.push_back(pos);
    int values[3] = {0, 0, 0};
    int value_idx = 0;
    for (const auto& slot : kBlock) {
      const std::string expected =
          slot.cls == TokenClass::Template ? "'" + vocab.token(slot.fixed) + "'" : class_name(slot.cls);
      if (pos >= tokens.size()) throw ParseError(pos, expected, "end of sequence");
      const TokenId id = tokens[pos];
      if (!vocab.contains(id)) throw ParseError(pos, expected, describe(vocab, id));
      if (slot.cls == TokenClass::Template) {
        if (id != slot.fixed) throw ParseError(pos, expected, describe(vocab, id));
      } else {
        if (vocab.token_class(id) != slot.cls) throw ParseError(pos, expected, describe(vocab, id));
        values[value_idx++] = vocab.value(id);
      }
      ++pos;
    }
    out.visits.push_back({values[0], values[1], values[2]});

    if (pos >= tokens.size()) throw Error(ErrorCode::MissingEOS, "sequence ends after visit " +
                                                                     std::to_string(out.visits.size()));
    const TokenId next = tokens[pos];
    if (next == Vocabulary::kSep) {
      ++pos;
      continue;
    }
    if (next == Vocabulary::kEos) {
      if (pos + 1 != tokens.size()) throw ParseError(pos + 1, "end of sequence", describe(vocab, tokens[pos + 1]));
      return out;
    }
    throw ParseError(pos, "'=>' or '<EOS>'", describe(vocab, next));
  }
}

}  // namespace

Vocabulary::Vocabulary(const GridSpec& grid, const TimeSpec& ts) : grid_(grid), ts_(ts) {
  grid_.validate();
  ts_.validate();
  const int slots = ts_.slots_per_day();
  tokens_.reserve(static_cast<std::size_t>(kTemplateCount + slots + grid_.cell_count() + slots));
  for (const char* t : kTemplateTokens) tokens_.emplace_back(t);
  time_base_ = static_cast<TokenId>(tokens_.size());
  for (int k = 0; k < slots; ++k) tokens_.push_back("T_" + std::to_string(k));
  location_base_ = static_cast<TokenId>(tokens_.size());
  for (int m = 1; m <= grid_.cell_count(); ++m) tokens_.push_back("G_" + std::to_string(m));
  duration_base_ = static_cast<TokenId>(tokens_.size());
  for (int n = 1; n <= slots; ++n) tokens_.push_back("D_" + std::to_string(n));
  for (std::size_t i = 0; i < tokens_.size(); ++i) ids_.emplace(tokens_[i], static_cast<TokenId>(i));
}

TokenId Vocabulary::time_token(int slot) const {
  if (slot < 0 || slot >= ts_.slots_per_day()) throw Error(ErrorCode::OutOfRange, "slot " + std::to_string(slot));
  return time_base_ + slot;
}

TokenId Vocabulary::location_token(int cell) const {
  if (cell < 1 || cell > grid_.cell_count()) throw Error(ErrorCode::InvalidCell, "cell " + std::to_string(cell));
  return location_base_ + cell - 1;
}

TokenId Vocabulary::duration_token(int slots) const {
  if (slots < 1 || slots > ts_.slots_per_day())
    throw Error(ErrorCode::OutOfRange, "duration " + std::to_string(slots));
  return duration_base_ + slots - 1;
}

TokenClass Vocabulary::token_class(TokenId id) const {
  if (!contains(id)) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(id));
  if (id < time_base_) return TokenClass::Template;
  if (id < location_base_) return TokenClass::Time;
  if (id < duration_base_) return TokenClass::Location;
  return TokenClass::Duration;
}

int Vocabulary::value(TokenId id) const {
  switch (token_class(id)) {
    case TokenClass::Time: return id - time_base_;
    case TokenClass::Location: return id - location_base_ + 1;
    case TokenClass::Duration: return id - duration_base_ + 1;
    case TokenClass::Template: break;
  }
  throw Error(ErrorCode::InvalidArgument, "template token " + token(id) + " carries no value");
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!contains(id)) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  if (it == ids_.end()) throw Error(ErrorCode::InvalidArgument, "unknown token '" + std::string(token) + "'");
  return it->second;
}

std::uint64_t Vocabulary::content_hash() const noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens_) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // token separator
    h *= 0x100000001b3ULL;
  }
  return h;
}

Vocabulary build_vocabulary(const GridSpec& grid, const TimeSpec& ts) { return Vocabulary(grid, ts); }

void append_visit(TokenSequence& out, const Visit& v, const Vocabulary& vocab) {
  const TokenId values[3] = {vocab.time_token(v.arrival), vocab.location_token(v.location),
                             vocab.duration_token(v.duration)};
  int value_idx = 0;
  for (const auto& slot : kBlock) out.push_back(slot.cls == TokenClass::Template ? slot.fixed : values[value_idx++]);
}

TokenSequence encode_trajectory(const Trajectory& traj, const Vocabulary& vocab) {
  TokenSequence out;
  out.reserve(2 + traj.visits.size() * (kVisitBlockLength + 1));
  out.push_back(Vocabulary::kBos);
  for (std::size_t i = 0; i < traj.visits.size(); ++i) {
    if (i > 0) out.push_back(Vocabulary::kSep);
    append_visit(out, traj.visits[i], vocab);
  }
  out.push_back(Vocabulary::kEos);
  return out;
}

Trajectory decode_tokens(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  Trajectory t;
  t.visits = parse(tokens, vocab).visits;
  return t;
}

TokenSequence permute_visits(std::span<const TokenId> tokens, const Vocabulary& vocab, Rng& rng) {
  auto starts = parse(tokens, vocab).block_starts;
  shuffle(std::span<std::size_t>(starts), rng);
  TokenSequence out;
  out.reserve(tokens.size());
  out.push_back(Vocabulary::kBos);
  for (std::size_t b = 0; b < starts.size(); ++b) {
    if (b > 0) out.push_back(Vocabulary::kSep);
    const auto block = tokens.subspan(starts[b], kVisitBlockLength);
    out.insert(out.end(), block.begin(), block.end());
  }
  out.push_back(Vocabulary::kEos);
  return out;
}

std::string format_tokens(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += ' ';
    out += vocab.contains(tokens[i]) ? vocab.token(tokens[i]) : "<id " + std::to_string(tokens[i]) + ">";
  }
  return out;
}

TokenSequence parse_token_line(std::string_view line, const Vocabulary& vocab) {
  TokenSequence out;
  std::istringstream in{std::string(line)};
  std::string tok;
  while (in >> tok) out.push_back(vocab.id(tok));
  return out;
}

}  // namespace trajforge
