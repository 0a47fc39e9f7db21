#pragma once

// Checkpoint container, all integers little-endian:
//
//   "GLMA" | u32 version | u64 payload length | payload | u32 CRC-32(payload)
//   payload = u32 header length | header JSON (UTF-8)
//           | u32 tensor count | { u32 name length | name | u32 rows | u32 cols | f32 x rows*cols }*
//
// The header carries the model config, the LoRA config (or null), an echo of
// the training config, and the vocabulary identity (grid, timespec, hash).
// Adapter tensors are stored with a "lora/" name prefix.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "trajforge/encode.hpp"
#include "trajforge/model.hpp"

namespace trajforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::optional<LoraAdapter<float>> adapter;
  GridSpec grid;
  TimeSpec timespec;
  std::uint64_t vocab_hash = 0;
  nlohmann::json train;  // training config echo, may be null
  nlohmann::json extra;  // free-form metadata, may be null

  [[nodiscard]] Vocabulary vocabulary() const;  // throws InvalidConfig on hash mismatch
};

std::string save_checkpoint(const Model<float>& model, const LoraAdapter<float>* adapter, const Vocabulary& vocab,
                            const nlohmann::json& train = nullptr, const nlohmann::json& extra = nullptr);

// Throws BadMagic, VersionMismatch, TruncatedFile or ChecksumMismatch.
Checkpoint load_checkpoint(std::string_view bytes);

void save_checkpoint_file(const std::filesystem::path& path, const Model<float>& model,
                          const LoraAdapter<float>* adapter, const Vocabulary& vocab,
                          const nlohmann::json& train = nullptr, const nlohmann::json& extra = nullptr);
Checkpoint load_checkpoint_file(const std::filesystem::path& path);

}  // namespace trajforge
