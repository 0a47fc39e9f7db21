#pragma once

// Next-token training over encoded trajectories with an Adam optimizer.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "trajforge/core.hpp"
#include "trajforge/encode.hpp"
#include "trajforge/model.hpp"

namespace trajforge {

enum class PermuteMode { PerEpoch, Once, Off };

std::string_view to_string(PermuteMode m) noexcept;
std::string_view to_string(TrainMode m) noexcept;
PermuteMode parse_permute_mode(std::string_view s);  // "per-epoch" | "once" | "off"
TrainMode parse_train_mode(std::string_view s);      // "full" | "lora-only"

struct TrainConfig {
  int epochs = 20;
  int batch_size = 48;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; 0 disables
  std::uint64_t seed = 0;
  PermuteMode permute = PermuteMode::PerEpoch;
  TrainMode mode = TrainMode::Full;

  void validate() const;  // throws InvalidConfig; epochs = 0 is allowed and trains nothing
  [[nodiscard]] nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1, double beta2, double eps);
  void step(std::span<float> params, std::span<const float> grads);
  [[nodiscard]] long long steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainResult {
  std::vector<double> loss_history;  // mean nats/token per epoch, before each epoch's updates
  long long steps = 0;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

// Encodes every trajectory, then per epoch: permute (per `permute`), shuffle,
// batch, and take one Adam step per batch. Lora-only mode updates the adapter
// and leaves every base weight untouched. Deterministic in tc.seed.
TrainResult train(Model<float>& model, LoraAdapter<float>* adapter, const TrajectoryDataset& dataset,
                  const Vocabulary& vocab, const TrainConfig& tc, const EpochCallback& on_epoch = {});

}  // namespace trajforge
