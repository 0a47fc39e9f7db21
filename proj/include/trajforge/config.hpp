#pragma once

// Run configuration for the command-line front end. The file format is a
// small TOML subset:
//
//   # comment
//   seed = 7
//   [grid]
//   origin_lat = 39.75
//   [lora]
//   targets = ["wq", "wv"]
//
// Values are numbers, booleans, "strings" or flat arrays of strings. Keys
// outside the known schema are rejected with InvalidConfig.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "trajforge/core.hpp"
#include "trajforge/generate.hpp"
#include "trajforge/ingest.hpp"
#include "trajforge/lora.hpp"
#include "trajforge/metrics.hpp"
#include "trajforge/model.hpp"
#include "trajforge/train.hpp"

namespace trajforge {

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  GridSpec grid{39.75, 116.15, 1.0, 20, 20};
  TimeSpec timespec;
  IngestParams ingest;
  ModelConfig model;  // vocab_size is filled from the vocabulary at train time
  bool use_lora = false;
  LoraConfig lora;
  TrainConfig train;
  GenConfig gen;
  BinningConfig metrics;
  ConstraintSamplingParams constraints;
  struct Paths {
    std::string gps_csv, out_dir, trajectories, checkpoint, generated, constraints, report;
  } paths;

  // Propagates the top-level seed to the stages, then checks every section.
  void finalize();
  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

// Parses key = value text on top of `base`; throws InvalidConfig with the line
// number on syntax errors, unknown sections or unknown keys.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Serializes back into the same text format.
std::string format_run_config(const RunConfig& cfg);

}  // namespace trajforge
