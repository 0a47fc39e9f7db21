#pragma once

// Low-rank adaptation of a frozen weight W0 [d x k]:
//   h = W0 x + (alpha / r) * B (A x),   A [r x k], B [d x r]
// The update dW = (alpha / r) B A is never materialized on the forward path.

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajforge/tensor.hpp"

namespace trajforge {

struct LoraConfig {
  int rank = 16;
  double alpha = 32.0;
  double dropout = 0.02;
  // Adapted matrices per layer, any of wq wk wv wo w1 w2.
  std::vector<std::string> targets = {"wq", "wv"};

  void validate() const;  // throws InvalidConfig
  [[nodiscard]] double scale() const noexcept { return alpha / rank; }
  [[nodiscard]] nlohmann::json to_json() const;
  static LoraConfig from_json(const nlohmann::json& j);

  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

template <typename T>
std::vector<T> lora_forward(const Matrix<T>& w0, const Matrix<T>& a, const Matrix<T>& b, std::span<const T> x,
                            double alpha, int rank);

// Dense (alpha / r) B A, for inspection and tests.
template <typename T>
Matrix<T> lora_delta(const Matrix<T>& a, const Matrix<T>& b, double alpha, int rank);

}  // namespace trajforge
