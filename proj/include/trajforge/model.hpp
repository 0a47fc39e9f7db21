#pragma once

// A small pre-norm decoder-only transformer with hand-written backward pass.
//
//   x0 = tok_emb[id] + pos_emb[pos]
//   per layer:  x += Wo * attn(LN1(x)) ;  x += W2 * gelu(W1 * LN2(x) + b1) + b2
//   logits = head.w * LN_f(x) + head.b
//
// Layer-norm gains are stored as offsets from 1. Any of wq/wk/wv/wo/w1/w2 can
// carry a LoRA adapter. The code is templated on the scalar: float is the
// production type, double exists for finite-difference checks.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajforge/encode.hpp"
#include "trajforge/lora.hpp"
#include "trajforge/rng.hpp"
#include "trajforge/tensor.hpp"

namespace trajforge {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 256;
  double dropout = 0.0;

  void validate() const;  // throws InvalidConfig
  [[nodiscard]] int ffn_dim() const noexcept { return 4 * d_model; }
  [[nodiscard]] nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class TrainMode { Full, LoraOnly };

template <typename T>
struct Model {
  ModelConfig config;
  TensorStore<T> weights;

  template <typename U>
  [[nodiscard]] Model<U> cast() const {
    return {config, weights.template cast<U>()};
  }
};

template <typename T>
struct LoraAdapter {
  LoraConfig config;
  TensorStore<T> weights;

  template <typename U>
  [[nodiscard]] LoraAdapter<U> cast() const {
    return {config, weights.template cast<U>()};
  }
};

// Scaled-normal weights; deterministic in (config, seed).
template <typename T = float>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed);

// A ~ N(0, 1/in), B = 0, so the adapter starts as an exact no-op.
template <typename T = float>
LoraAdapter<T> init_adapter(const ModelConfig& model, const LoraConfig& lora, std::uint64_t seed);

template <typename T>
class InferenceSession;

template <typename T>
class Transformer {
 public:
  // Both referents must outlive the Transformer.
  explicit Transformer(const Model<T>& model, const LoraAdapter<T>* adapter = nullptr);

  [[nodiscard]] const ModelConfig& config() const noexcept { return model_->config; }

  // [len x vocab] logits; row k depends on tokens[0..k] only.
  [[nodiscard]] Matrix<T> forward_logits(std::span<const TokenId> tokens) const;

  struct Gradients {
    Model<T>* model = nullptr;          // null: base weights frozen
    LoraAdapter<T>* adapter = nullptr;  // null: adapter frozen (or absent)
  };

  // Mean next-token cross entropy (nats) over every predicted position of
  // the batch. Gradients of that mean are accumulated into `grads`. Dropout
  // is active only when `dropout_rng` is given.
  double loss_and_grad(std::span<const TokenSequence> batch, Gradients grads, Rng* dropout_rng = nullptr) const;

  [[nodiscard]] double loss(std::span<const TokenSequence> batch) const;

 private:
  friend class InferenceSession<T>;

  enum Target : std::size_t { kQ, kK, kV, kO, kW1, kW2, kTargetCount };
  struct LoraSlot {
    bool active = false;
    std::size_t a = 0;
    std::size_t b = 0;
  };
  struct LayerIdx {
    std::size_t ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
    std::array<LoraSlot, kTargetCount> lora;
  };
  struct LinCache {
    std::vector<T> xd;    // dropout-masked input seen by A (only when dropout is on)
    std::vector<T> mask;  // scaled keep mask
    std::vector<T> u;     // (alpha/r) * A xd
  };
  struct LayerCache {
    std::vector<T> x_in, xhat1, rstd1, a1, q, k, v, probs, att, proj, proj_mask;
    std::vector<T> x_mid, xhat2, rstd2, a2, hpre, hact, ffn, ffn_mask;
    std::array<LinCache, kTargetCount> lin;
  };
  struct SeqCache {
    std::size_t n = 0;
    std::vector<LayerCache> layers;
    std::vector<T> x_final, xhatf, rstdf, af;
  };

  void check_tokens(std::span<const TokenId> tokens) const;
  void forward(std::span<const TokenId> tokens, SeqCache& cache, Rng* rng) const;
  void linear_forward(const T* x, std::size_t n, std::size_t in, std::size_t w_idx, const T* bias, std::size_t out,
                      const LoraSlot& lora, T* y, LinCache& cache, Rng* rng) const;
  void linear_backward(const T* x, std::size_t n, std::size_t in, std::size_t w_idx, std::size_t b_idx, bool has_bias,
                       std::size_t out, const LoraSlot& lora, const LinCache& cache, const T* dy, T* dx,
                       Gradients grads) const;
  void attention_row(std::size_t i, const T* q, const T* k, const T* v, T* probs_row, T* out) const;

  const Model<T>* model_;
  const LoraAdapter<T>* adapter_;
  std::size_t tok_emb_, pos_emb_, lnf_g_, lnf_b_, head_w_, head_b_;
  std::vector<LayerIdx> layers_;
  T lora_scale_{0};
  T lora_dropout_{0};
};

// Incremental decoding with a key/value cache. Logits returned by push()
// match the corresponding row of forward_logits on the same prefix.
template <typename T>
class InferenceSession {
 public:
  explicit InferenceSession(const Transformer<T>& net);

  // Feeds one token and returns next-token logits.
  std::span<const T> push(TokenId token);
  [[nodiscard]] std::size_t length() const noexcept { return pos_; }
  void reset() noexcept { pos_ = 0; }

 private:
  const Transformer<T>* net_;
  std::size_t pos_ = 0;
  std::vector<std::vector<T>> keys_, values_;
  std::vector<T> logits_;
};

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  std::size_t predicted_tokens = 0;
  std::optional<Model<T>> model_grad;
  std::optional<LoraAdapter<T>> adapter_grad;
};

// Full mode differentiates every base weight (and the adapter when present);
// lora-only mode differentiates the adapter alone.
template <typename T>
LossAndGrad<T> loss_and_grad(const Model<T>& model, const LoraAdapter<T>* adapter,
                             std::span<const TokenSequence> batch, TrainMode mode, Rng* dropout_rng = nullptr);

template <typename T>
Matrix<T> forward_logits(const Model<T>& model, const LoraAdapter<T>* adapter, std::span<const TokenId> tokens);

}  // namespace trajforge
