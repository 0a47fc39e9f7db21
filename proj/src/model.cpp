#include "trajforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kPosInitStd = 0.01;

constexpr std::array<const char*, 6> kTargetNames = {"wq", "wk", "wv", "wo", "w1", "w2"};
constexpr std::array<const char*, 6> kTargetWeights = {"attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"};

std::string layer_name(int l, const char* suffix) { return "layers." + std::to_string(l) + "." + suffix; }

std::size_t require(const auto& store, const std::string& name) {
  const auto idx = store.find(name);
  if (!idx) throw Error(ErrorCode::ShapeMismatch, "missing tensor '" + name + "'");
  return *idx;
}

template <typename T>
void fill_normal(std::span<T> xs, double std, Rng& rng) {
  for (auto& x : xs) x = static_cast<T>(std * standard_normal(rng));
}

// y = (1 + g) * xhat + b, caching xhat and 1/sigma for the backward pass.
template <typename T>
void layernorm_row(const T* x, std::size_t d, const T* g, const T* b, T* xhat, T* rstd, T* y) {
  T mean{0};
  for (std::size_t j = 0; j < d; ++j) mean += x[j];
  mean /= static_cast<T>(d);
  T var{0};
  for (std::size_t j = 0; j < d; ++j) var += (x[j] - mean) * (x[j] - mean);
  var /= static_cast<T>(d);
  const T r = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
  *rstd = r;
  for (std::size_t j = 0; j < d; ++j) {
    xhat[j] = (x[j] - mean) * r;
    y[j] = (T{1} + g[j]) * xhat[j] + b[j];
  }
}

template <typename T>
void layernorm_backward_row(const T* dy, const T* xhat, T rstd, const T* g, std::size_t d, T* dx, T* dg, T* db) {
  T mean_dxhat{0}, mean_dxhat_xhat{0};
  for (std::size_t j = 0; j < d; ++j) {
    const T dxh = dy[j] * (T{1} + g[j]);
    mean_dxhat += dxh;
    mean_dxhat_xhat += dxh * xhat[j];
    if (dg) dg[j] += dy[j] * xhat[j];
    if (db) db[j] += dy[j];
  }
  mean_dxhat /= static_cast<T>(d);
  mean_dxhat_xhat /= static_cast<T>(d);
  for (std::size_t j = 0; j < d; ++j) {
    const T dxh = dy[j] * (T{1} + g[j]);
    dx[j] += rstd * (dxh - mean_dxhat - xhat[j] * mean_dxhat_xhat);
  }
}

template <typename T>
T gelu(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  return T{0.5} * x * (T{1} + std::tanh(c * (x + static_cast<T>(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  const T t = std::tanh(c * (x + k * x * x * x));
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * c * (T{1} + T{3} * k * x * x);
}

template <typename T>
void make_mask(std::vector<T>& mask, std::size_t n, T p, Rng& rng) {
  mask.resize(n);
  const T keep = T{1} / (T{1} - p);
  for (auto& m : mask) m = uniform01(rng) < static_cast<double>(p) ? T{0} : keep;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1) throw Error(ErrorCode::InvalidConfig, "vocab_size must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    throw Error(ErrorCode::InvalidConfig, "d_model must be a positive multiple of n_heads");
  if (n_layers < 1) throw Error(ErrorCode::InvalidConfig, "n_layers must be >= 1");
  if (max_seq_len < 2) throw Error(ErrorCode::InvalidConfig, "max_seq_len must be >= 2");
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::InvalidConfig, "dropout must be in [0, 1)");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},         {"n_layers", n_layers},
          {"n_heads", n_heads},       {"max_seq_len", max_seq_len}, {"dropout", dropout}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.validate();
  return c;
}

template <typename T>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const auto V = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto S = static_cast<std::size_t>(config.max_seq_len);
  const auto F = static_cast<std::size_t>(config.ffn_dim());
  const double resid_std = kInitStd / std::sqrt(2.0 * config.n_layers);

  Model<T> m{config, {}};
  auto& w = m.weights;
  // (index, std) for every randomly initialized tensor, filled after layout
  std::vector<std::pair<std::size_t, double>> random;
  random.emplace_back(w.add("tok_emb", V, d), kInitStd);
  random.emplace_back(w.add("pos_emb", S, d), kPosInitStd);
  for (int l = 0; l < config.n_layers; ++l) {
    w.add(layer_name(l, "ln1.gain"), 1, d);
    w.add(layer_name(l, "ln1.bias"), 1, d);
    random.emplace_back(w.add(layer_name(l, "attn.wq"), d, d), kInitStd);
    random.emplace_back(w.add(layer_name(l, "attn.wk"), d, d), kInitStd);
    random.emplace_back(w.add(layer_name(l, "attn.wv"), d, d), kInitStd);
    random.emplace_back(w.add(layer_name(l, "attn.wo"), d, d), resid_std);
    w.add(layer_name(l, "ln2.gain"), 1, d);
    w.add(layer_name(l, "ln2.bias"), 1, d);
    random.emplace_back(w.add(layer_name(l, "ffn.w1"), F, d), kInitStd);
    w.add(layer_name(l, "ffn.b1"), 1, F);
    random.emplace_back(w.add(layer_name(l, "ffn.w2"), d, F), resid_std);
    w.add(layer_name(l, "ffn.b2"), 1, d);
  }
  w.add("ln_f.gain", 1, d);
  w.add("ln_f.bias", 1, d);
  random.emplace_back(w.add("head.w", V, d), kInitStd);
  w.add("head.b", 1, V);

  Rng rng = make_rng(seed, "init");
  for (const auto& [idx, std] : random) fill_normal(w[idx], std, rng);
  return m;
}

template <typename T>
LoraAdapter<T> init_adapter(const ModelConfig& model, const LoraConfig& lora, std::uint64_t seed) {
  model.validate();
  lora.validate();
  const auto r = static_cast<std::size_t>(lora.rank);
  const auto d = static_cast<std::size_t>(model.d_model);
  const auto F = static_cast<std::size_t>(model.ffn_dim());
  LoraAdapter<T> a{lora, {}};
  Rng rng = make_rng(seed, "lora-init");
  for (int l = 0; l < model.n_layers; ++l) {
    for (std::size_t t = 0; t < kTargetNames.size(); ++t) {
      if (std::find(lora.targets.begin(), lora.targets.end(), kTargetNames[t]) == lora.targets.end()) continue;
      const std::size_t in = t == 5 ? F : d;
      const std::size_t out = t == 4 ? F : d;
      const auto ia = a.weights.add(layer_name(l, kTargetNames[t]) + ".lora_a", r, in);
      a.weights.add(layer_name(l, kTargetNames[t]) + ".lora_b", out, r);
      fill_normal(a.weights[ia], 1.0 / std::sqrt(static_cast<double>(in)), rng);
    }
  }
  return a;
}

template <typename T>
Transformer<T>::Transformer(const Model<T>& model, const LoraAdapter<T>* adapter) : model_(&model), adapter_(adapter) {
  const auto& cfg = model.config;
  cfg.validate();
  const auto& w = model.weights;
  tok_emb_ = require(w, "tok_emb");
  pos_emb_ = require(w, "pos_emb");
  lnf_g_ = require(w, "ln_f.gain");
  lnf_b_ = require(w, "ln_f.bias");
  head_w_ = require(w, "head.w");
  head_b_ = require(w, "head.b");
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  if (w.entry(tok_emb_).rows != V || w.entry(tok_emb_).cols != d || w.entry(head_w_).rows != V ||
      w.entry(pos_emb_).rows != static_cast<std::size_t>(cfg.max_seq_len))
    throw Error(ErrorCode::ShapeMismatch, "weights do not match the model config");

  if (adapter) {
    adapter->config.validate();
    lora_scale_ = static_cast<T>(adapter->config.scale());
    lora_dropout_ = static_cast<T>(adapter->config.dropout);
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerIdx li{};
    li.ln1_g = require(w, layer_name(l, "ln1.gain"));
    li.ln1_b = require(w, layer_name(l, "ln1.bias"));
    li.wq = require(w, layer_name(l, "attn.wq"));
    li.wk = require(w, layer_name(l, "attn.wk"));
    li.wv = require(w, layer_name(l, "attn.wv"));
    li.wo = require(w, layer_name(l, "attn.wo"));
    li.ln2_g = require(w, layer_name(l, "ln2.gain"));
    li.ln2_b = require(w, layer_name(l, "ln2.bias"));
    li.w1 = require(w, layer_name(l, "ffn.w1"));
    li.b1 = require(w, layer_name(l, "ffn.b1"));
    li.w2 = require(w, layer_name(l, "ffn.w2"));
    li.b2 = require(w, layer_name(l, "ffn.b2"));
    if (adapter) {
      const std::size_t base[kTargetCount] = {li.wq, li.wk, li.wv, li.wo, li.w1, li.w2};
      for (std::size_t t = 0; t < kTargetCount; ++t) {
        const auto a = adapter->weights.find(layer_name(l, kTargetNames[t]) + ".lora_a");
        const auto b = adapter->weights.find(layer_name(l, kTargetNames[t]) + ".lora_b");
        if (!a && !b) continue;
        if (!a || !b) throw Error(ErrorCode::ShapeMismatch, "adapter for " + layer_name(l, kTargetWeights[t]) +
                                                                " lacks one factor");
        const auto& ea = adapter->weights.entry(*a);
        const auto& eb = adapter->weights.entry(*b);
        const auto& ew = w.entry(base[t]);
        if (ea.cols != ew.cols || eb.rows != ew.rows || ea.rows != eb.cols ||
            ea.rows != static_cast<std::size_t>(adapter->config.rank))
          throw Error(ErrorCode::ShapeMismatch, "adapter shapes for " + layer_name(l, kTargetWeights[t]));
        li.lora[t] = {true, *a, *b};
      }
    }
    layers_.push_back(li);
  }
}

template <typename T>
void Transformer<T>::check_tokens(std::span<const TokenId> tokens) const {
  const auto& cfg = model_->config;
  if (tokens.empty()) throw Error(ErrorCode::EmptySequence, "no tokens");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len))
    throw Error(ErrorCode::SequenceTooLong, std::to_string(tokens.size()) + " tokens exceed max_seq_len " +
                                                std::to_string(cfg.max_seq_len));
  for (const auto id : tokens)
    if (id < 0 || id >= cfg.vocab_size) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(id));
}

template <typename T>
void Transformer<T>::linear_forward(const T* x, std::size_t n, std::size_t in, std::size_t w_idx, const T* bias,
                                    std::size_t out, const LoraSlot& lora, T* y, LinCache& cache, Rng* rng) const {
  kernels::matmul_nt(x, n, in, model_->weights.ptr(w_idx), out, y, false);
  if (bias)
    for (std::size_t i = 0; i < n; ++i) kernels::axpy(T{1}, bias, y + i * out, out);
  if (!lora.active) return;
  const auto r = static_cast<std::size_t>(adapter_->config.rank);
  const T* xa = x;
  if (rng && lora_dropout_ > T{0}) {
    make_mask(cache.mask, n * in, lora_dropout_, *rng);
    cache.xd.resize(n * in);
    for (std::size_t i = 0; i < n * in; ++i) cache.xd[i] = x[i] * cache.mask[i];
    xa = cache.xd.data();
  } else {
    cache.mask.clear();
    cache.xd.clear();
  }
  cache.u.assign(n * r, T{0});
  kernels::matmul_nt(xa, n, in, adapter_->weights.ptr(lora.a), r, cache.u.data(), false);
  for (auto& v : cache.u) v *= lora_scale_;
  kernels::matmul_nt(cache.u.data(), n, r, adapter_->weights.ptr(lora.b), out, y, true);
}

template <typename T>
void Transformer<T>::linear_backward(const T* x, std::size_t n, std::size_t in, std::size_t w_idx, std::size_t b_idx,
                                     bool has_bias, std::size_t out, const LoraSlot& lora, const LinCache& cache,
                                     const T* dy, T* dx, Gradients grads) const {
  kernels::matmul_nn_acc(dy, n, out, model_->weights.ptr(w_idx), in, dx);
  if (grads.model) {
    kernels::matmul_tn_acc(dy, n, out, x, in, grads.model->weights.ptr(w_idx));
    if (has_bias) {
      T* db = grads.model->weights.ptr(b_idx);
      for (std::size_t i = 0; i < n; ++i) kernels::axpy(T{1}, dy + i * out, db, out);
    }
  }
  if (!lora.active) return;
  const auto r = static_cast<std::size_t>(adapter_->config.rank);
  const T* xa = cache.xd.empty() ? x : cache.xd.data();
  // u = s * A xa ; y += B u
  std::vector<T> du(n * r, T{0});
  kernels::matmul_nn_acc(dy, n, out, adapter_->weights.ptr(lora.b), r, du.data());
  if (grads.adapter) kernels::matmul_tn_acc(dy, n, out, cache.u.data(), r, grads.adapter->weights.ptr(lora.b));
  for (auto& v : du) v *= lora_scale_;
  if (grads.adapter) kernels::matmul_tn_acc(du.data(), n, r, xa, in, grads.adapter->weights.ptr(lora.a));
  if (cache.mask.empty()) {
    kernels::matmul_nn_acc(du.data(), n, r, adapter_->weights.ptr(lora.a), in, dx);
  } else {
    std::vector<T> dxa(n * in, T{0});
    kernels::matmul_nn_acc(du.data(), n, r, adapter_->weights.ptr(lora.a), in, dxa.data());
    for (std::size_t i = 0; i < n * in; ++i) dx[i] += dxa[i] * cache.mask[i];
  }
}

// Causal attention output for query row i over keys/values 0..i, all heads.
// `k` and `v` hold at least i+1 rows of width d_model.
template <typename T>
void Transformer<T>::attention_row(std::size_t i, const T* q, const T* k, const T* v, T* probs_row,
                                   T* out) const {
  const auto& cfg = model_->config;
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto H = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t hd = d / H;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(hd));
  const std::size_t stride = i + 1;  // probs_row holds H rows of i+1 weights
  std::fill(out, out + d, T{0});
  for (std::size_t h = 0; h < H; ++h) {
    T* p = probs_row + h * stride;
    const T* qh = q + h * hd;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j <= i; ++j) {
      p[j] = kernels::dot(qh, k + j * d + h * hd, hd) * inv_sqrt;
      mx = std::max(mx, p[j]);
    }
    T sum{0};
    for (std::size_t j = 0; j <= i; ++j) {
      p[j] = std::exp(p[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j <= i; ++j) {
      p[j] /= sum;
      kernels::axpy(p[j], v + j * d + h * hd, out + h * hd, hd);
    }
  }
}

template <typename T>
void Transformer<T>::forward(std::span<const TokenId> tokens, SeqCache& c, Rng* rng) const {
  const auto& cfg = model_->config;
  const auto& w = model_->weights;
  const std::size_t n = tokens.size();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto F = static_cast<std::size_t>(cfg.ffn_dim());
  const auto H = static_cast<std::size_t>(cfg.n_heads);
  const T p_drop = static_cast<T>(cfg.dropout);
  const bool dropout = rng && p_drop > T{0};
  c.n = n;
  c.layers.resize(layers_.size());

  std::vector<T> x(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const T* te = w.ptr(tok_emb_) + static_cast<std::size_t>(tokens[i]) * d;
    const T* pe = w.ptr(pos_emb_) + i * d;
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = te[j] + pe[j];
  }

  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& li = layers_[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.xhat1.resize(n * d);
    lc.rstd1.resize(n);
    lc.a1.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
      layernorm_row(&x[i * d], d, w.ptr(li.ln1_g), w.ptr(li.ln1_b), &lc.xhat1[i * d], &lc.rstd1[i], &lc.a1[i * d]);

    lc.q.resize(n * d);
    lc.k.resize(n * d);
    lc.v.resize(n * d);
    linear_forward(lc.a1.data(), n, d, li.wq, nullptr, d, li.lora[kQ], lc.q.data(), lc.lin[kQ], rng);
    linear_forward(lc.a1.data(), n, d, li.wk, nullptr, d, li.lora[kK], lc.k.data(), lc.lin[kK], rng);
    linear_forward(lc.a1.data(), n, d, li.wv, nullptr, d, li.lora[kV], lc.v.data(), lc.lin[kV], rng);

    // probs are stored per query row, H x (i+1) weights each, packed
    lc.probs.resize(H * n * (n + 1) / 2);
    lc.att.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
      attention_row(i, &lc.q[i * d], lc.k.data(), lc.v.data(), &lc.probs[H * i * (i + 1) / 2], &lc.att[i * d]);

    lc.proj.resize(n * d);
    linear_forward(lc.att.data(), n, d, li.wo, nullptr, d, li.lora[kO], lc.proj.data(), lc.lin[kO], rng);
    if (dropout) {
      make_mask(lc.proj_mask, n * d, p_drop, *rng);
    } else {
      lc.proj_mask.clear();
    }
    for (std::size_t i = 0; i < n * d; ++i) x[i] += lc.proj_mask.empty() ? lc.proj[i] : lc.proj[i] * lc.proj_mask[i];
    lc.x_mid = x;

    lc.xhat2.resize(n * d);
    lc.rstd2.resize(n);
    lc.a2.resize(n * d);
    for (std::size_t i = 0; i < n; ++i)
      layernorm_row(&x[i * d], d, w.ptr(li.ln2_g), w.ptr(li.ln2_b), &lc.xhat2[i * d], &lc.rstd2[i], &lc.a2[i * d]);
    lc.hpre.resize(n * F);
    linear_forward(lc.a2.data(), n, d, li.w1, w.ptr(li.b1), F, li.lora[kW1], lc.hpre.data(), lc.lin[kW1], rng);
    lc.hact.resize(n * F);
    for (std::size_t i = 0; i < n * F; ++i) lc.hact[i] = gelu(lc.hpre[i]);
    lc.ffn.resize(n * d);
    linear_forward(lc.hact.data(), n, F, li.w2, w.ptr(li.b2), d, li.lora[kW2], lc.ffn.data(), lc.lin[kW2], rng);
    if (dropout) {
      make_mask(lc.ffn_mask, n * d, p_drop, *rng);
    } else {
      lc.ffn_mask.clear();
    }
    for (std::size_t i = 0; i < n * d; ++i) x[i] += lc.ffn_mask.empty() ? lc.ffn[i] : lc.ffn[i] * lc.ffn_mask[i];
  }

  c.x_final = x;
  c.xhatf.resize(n * d);
  c.rstdf.resize(n);
  c.af.resize(n * d);
  for (std::size_t i = 0; i < n; ++i)
    layernorm_row(&x[i * d], d, w.ptr(lnf_g_), w.ptr(lnf_b_), &c.xhatf[i * d], &c.rstdf[i], &c.af[i * d]);
}

template <typename T>
Matrix<T> Transformer<T>::forward_logits(std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  SeqCache c;
  forward(tokens, c, nullptr);
  const auto V = static_cast<std::size_t>(model_->config.vocab_size);
  const auto d = static_cast<std::size_t>(model_->config.d_model);
  Matrix<T> logits(tokens.size(), V);
  kernels::matmul_nt(c.af.data(), tokens.size(), d, model_->weights.ptr(head_w_), V, logits.data.data(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    kernels::axpy(T{1}, model_->weights.ptr(head_b_), logits.data.data() + i * V, V);
  return logits;
}

template <typename T>
double Transformer<T>::loss_and_grad(std::span<const TokenSequence> batch, Gradients grads, Rng* rng) const {
  const auto& cfg = model_->config;
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto F = static_cast<std::size_t>(cfg.ffn_dim());
  const auto H = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t hd = d / H;
  const auto& w = model_->weights;

  std::size_t total = 0;
  for (const auto& seq : batch) {
    if (seq.size() < 2) throw Error(ErrorCode::InvalidArgument, "training sequences need at least two tokens");
    check_tokens(seq);
    total += seq.size() - 1;
  }
  if (total == 0) return 0.0;
  const bool need_grad = grads.model || grads.adapter;
  const T inv_total = T{1} / static_cast<T>(total);
  double loss_sum = 0.0;

  SeqCache c;
  for (const auto& seq : batch) {
    const std::size_t n = seq.size();
    const std::size_t m = n - 1;  // predicted positions
    forward(seq, c, rng);

    std::vector<T> logits(m * V);
    kernels::matmul_nt(c.af.data(), m, d, w.ptr(head_w_), V, logits.data(), false);
    std::vector<T> dlogits(m * V);
    for (std::size_t i = 0; i < m; ++i) {
      T* row = &logits[i * V];
      kernels::axpy(T{1}, w.ptr(head_b_), row, V);
      const T mx = *std::max_element(row, row + V);
      T sum{0};
      for (std::size_t t = 0; t < V; ++t) sum += std::exp(row[t] - mx);
      const auto target = static_cast<std::size_t>(seq[i + 1]);
      loss_sum += static_cast<double>(std::log(sum) + mx - row[target]);
      for (std::size_t t = 0; t < V; ++t) dlogits[i * V + t] = std::exp(row[t] - mx) / sum * inv_total;
      dlogits[i * V + target] -= inv_total;
    }
    if (!need_grad) continue;

    // head
    std::vector<T> daf(n * d, T{0});
    kernels::matmul_nn_acc(dlogits.data(), m, V, w.ptr(head_w_), d, daf.data());
    if (grads.model) {
      kernels::matmul_tn_acc(dlogits.data(), m, V, c.af.data(), d, grads.model->weights.ptr(head_w_));
      T* db = grads.model->weights.ptr(head_b_);
      for (std::size_t i = 0; i < m; ++i) kernels::axpy(T{1}, &dlogits[i * V], db, V);
    }
    std::vector<T> dx(n * d, T{0});
    for (std::size_t i = 0; i < n; ++i)
      layernorm_backward_row(&daf[i * d], &c.xhatf[i * d], c.rstdf[i], w.ptr(lnf_g_), d, &dx[i * d],
                             grads.model ? grads.model->weights.ptr(lnf_g_) : nullptr,
                             grads.model ? grads.model->weights.ptr(lnf_b_) : nullptr);

    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& li = layers_[l];
      const auto& lc = c.layers[l];
      T* gm_ln2g = grads.model ? grads.model->weights.ptr(li.ln2_g) : nullptr;
      T* gm_ln2b = grads.model ? grads.model->weights.ptr(li.ln2_b) : nullptr;
      T* gm_ln1g = grads.model ? grads.model->weights.ptr(li.ln1_g) : nullptr;
      T* gm_ln1b = grads.model ? grads.model->weights.ptr(li.ln1_b) : nullptr;

      // FFN branch: x_out = x_mid + drop(ffn)
      std::vector<T> dffn(dx);
      if (!lc.ffn_mask.empty())
        for (std::size_t i = 0; i < n * d; ++i) dffn[i] *= lc.ffn_mask[i];
      std::vector<T> dhact(n * F, T{0});
      linear_backward(lc.hact.data(), n, F, li.w2, li.b2, true, d, li.lora[kW2], lc.lin[kW2], dffn.data(),
                      dhact.data(), grads);
      for (std::size_t i = 0; i < n * F; ++i) dhact[i] *= gelu_grad(lc.hpre[i]);
      std::vector<T> da2(n * d, T{0});
      linear_backward(lc.a2.data(), n, d, li.w1, li.b1, true, F, li.lora[kW1], lc.lin[kW1], dhact.data(),
                      da2.data(), grads);
      for (std::size_t i = 0; i < n; ++i)
        layernorm_backward_row(&da2[i * d], &lc.xhat2[i * d], lc.rstd2[i], w.ptr(li.ln2_g), d, &dx[i * d], gm_ln2g,
                               gm_ln2b);

      // attention branch: x_mid = x_in + drop(proj)
      std::vector<T> dproj(dx);
      if (!lc.proj_mask.empty())
        for (std::size_t i = 0; i < n * d; ++i) dproj[i] *= lc.proj_mask[i];
      std::vector<T> datt(n * d, T{0});
      linear_backward(lc.att.data(), n, d, li.wo, 0, false, d, li.lora[kO], lc.lin[kO], dproj.data(), datt.data(),
                      grads);

      std::vector<T> dq(n * d, T{0}), dk(n * d, T{0}), dv(n * d, T{0});
      const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(hd));
      std::vector<T> dp(n);
      for (std::size_t i = 0; i < n; ++i) {
        const T* prow = &lc.probs[H * i * (i + 1) / 2];
        for (std::size_t h = 0; h < H; ++h) {
          const T* p = prow + h * (i + 1);
          const T* dout = &datt[i * d + h * hd];
          T weighted{0};
          for (std::size_t j = 0; j <= i; ++j) {
            dp[j] = kernels::dot(dout, &lc.v[j * d + h * hd], hd);
            weighted += p[j] * dp[j];
            kernels::axpy(p[j], dout, &dv[j * d + h * hd], hd);
          }
          for (std::size_t j = 0; j <= i; ++j) {
            const T ds = p[j] * (dp[j] - weighted) * inv_sqrt;
            kernels::axpy(ds, &lc.k[j * d + h * hd], &dq[i * d + h * hd], hd);
            kernels::axpy(ds, &lc.q[i * d + h * hd], &dk[j * d + h * hd], hd);
          }
        }
      }
      std::vector<T> da1(n * d, T{0});
      linear_backward(lc.a1.data(), n, d, li.wq, 0, false, d, li.lora[kQ], lc.lin[kQ], dq.data(), da1.data(), grads);
      linear_backward(lc.a1.data(), n, d, li.wk, 0, false, d, li.lora[kK], lc.lin[kK], dk.data(), da1.data(), grads);
      linear_backward(lc.a1.data(), n, d, li.wv, 0, false, d, li.lora[kV], lc.lin[kV], dv.data(), da1.data(), grads);
      for (std::size_t i = 0; i < n; ++i)
        layernorm_backward_row(&da1[i * d], &lc.xhat1[i * d], lc.rstd1[i], w.ptr(li.ln1_g), d, &dx[i * d], gm_ln1g,
                               gm_ln1b);
    }

    if (grads.model) {
      T* gte = grads.model->weights.ptr(tok_emb_);
      T* gpe = grads.model->weights.ptr(pos_emb_);
      for (std::size_t i = 0; i < n; ++i) {
        kernels::axpy(T{1}, &dx[i * d], gte + static_cast<std::size_t>(seq[i]) * d, d);
        kernels::axpy(T{1}, &dx[i * d], gpe + i * d, d);
      }
    }
  }
  return loss_sum / static_cast<double>(total);
}

template <typename T>
double Transformer<T>::loss(std::span<const TokenSequence> batch) const {
  return loss_and_grad(batch, Gradients{}, nullptr);
}

template <typename T>
InferenceSession<T>::InferenceSession(const Transformer<T>& net)
    : net_(&net),
      keys_(net.layers_.size(), std::vector<T>(static_cast<std::size_t>(net.config().max_seq_len * net.config().d_model))),
      values_(keys_),
      logits_(static_cast<std::size_t>(net.config().vocab_size)) {}

template <typename T>
std::span<const T> InferenceSession<T>::push(TokenId token) {
  const auto& net = *net_;
  const auto& cfg = net.config();
  const auto& w = net.model_->weights;
  if (pos_ >= static_cast<std::size_t>(cfg.max_seq_len))
    throw Error(ErrorCode::SequenceTooLong, "session reached max_seq_len " + std::to_string(cfg.max_seq_len));
  if (token < 0 || token >= cfg.vocab_size) throw Error(ErrorCode::TokenOutOfRange, "token id " + std::to_string(token));
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto F = static_cast<std::size_t>(cfg.ffn_dim());
  const auto H = static_cast<std::size_t>(cfg.n_heads);
  const std::size_t i = pos_;

  std::vector<T> x(d), xhat(d), a(d), q(d), att(d), tmp(d), hpre(F);
  T rstd{};
  const T* te = w.ptr(net.tok_emb_) + static_cast<std::size_t>(token) * d;
  const T* pe = w.ptr(net.pos_emb_) + i * d;
  for (std::size_t j = 0; j < d; ++j) x[j] = te[j] + pe[j];

  std::vector<T> probs(H * (i + 1));
  typename Transformer<T>::LinCache scratch;
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    const auto& li = net.layers_[l];
    T* kc = keys_[l].data();
    T* vc = values_[l].data();
    layernorm_row(x.data(), d, w.ptr(li.ln1_g), w.ptr(li.ln1_b), xhat.data(), &rstd, a.data());
    net.linear_forward(a.data(), 1, d, li.wq, nullptr, d, li.lora[Transformer<T>::kQ], q.data(), scratch, nullptr);
    net.linear_forward(a.data(), 1, d, li.wk, nullptr, d, li.lora[Transformer<T>::kK], kc + i * d, scratch, nullptr);
    net.linear_forward(a.data(), 1, d, li.wv, nullptr, d, li.lora[Transformer<T>::kV], vc + i * d, scratch, nullptr);
    net.attention_row(i, q.data(), kc, vc, probs.data(), att.data());
    net.linear_forward(att.data(), 1, d, li.wo, nullptr, d, li.lora[Transformer<T>::kO], tmp.data(), scratch, nullptr);
    for (std::size_t j = 0; j < d; ++j) x[j] += tmp[j];
    layernorm_row(x.data(), d, w.ptr(li.ln2_g), w.ptr(li.ln2_b), xhat.data(), &rstd, a.data());
    net.linear_forward(a.data(), 1, d, li.w1, w.ptr(li.b1), F, li.lora[Transformer<T>::kW1], hpre.data(), scratch,
                       nullptr);
    for (auto& h : hpre) h = gelu(h);
    net.linear_forward(hpre.data(), 1, F, li.w2, w.ptr(li.b2), d, li.lora[Transformer<T>::kW2], tmp.data(), scratch,
                       nullptr);
    for (std::size_t j = 0; j < d; ++j) x[j] += tmp[j];
  }
  layernorm_row(x.data(), d, w.ptr(net.lnf_g_), w.ptr(net.lnf_b_), xhat.data(), &rstd, a.data());
  const auto V = static_cast<std::size_t>(cfg.vocab_size);
  kernels::matmul_nt(a.data(), 1, d, w.ptr(net.head_w_), V, logits_.data(), false);
  kernels::axpy(T{1}, w.ptr(net.head_b_), logits_.data(), V);
  ++pos_;
  return logits_;
}

template <typename T>
LossAndGrad<T> loss_and_grad(const Model<T>& model, const LoraAdapter<T>* adapter,
                             std::span<const TokenSequence> batch, TrainMode mode, Rng* dropout_rng) {
  if (mode == TrainMode::LoraOnly && !adapter)
    throw Error(ErrorCode::InvalidConfig, "lora-only mode needs an adapter");
  LossAndGrad<T> out;
  if (mode == TrainMode::Full) out.model_grad = Model<T>{model.config, model.weights.zeros_like()};
  if (adapter) out.adapter_grad = LoraAdapter<T>{adapter->config, adapter->weights.zeros_like()};
  const Transformer<T> net(model, adapter);
  typename Transformer<T>::Gradients g;
  g.model = out.model_grad ? &*out.model_grad : nullptr;
  g.adapter = out.adapter_grad ? &*out.adapter_grad : nullptr;
  out.loss = net.loss_and_grad(batch, g, dropout_rng);
  for (const auto& s : batch) out.predicted_tokens += s.size() - 1;
  return out;
}

template <typename T>
Matrix<T> forward_logits(const Model<T>& model, const LoraAdapter<T>* adapter, std::span<const TokenId> tokens) {
  return Transformer<T>(model, adapter).forward_logits(tokens);
}

#define TRAJFORGE_INSTANTIATE(T)                                                                               \
  template Model<T> init_model<T>(const ModelConfig&, std::uint64_t);                                          \
  template LoraAdapter<T> init_adapter<T>(const ModelConfig&, const LoraConfig&, std::uint64_t);               \
  template class Transformer<T>;                                                                               \
  template class InferenceSession<T>;                                                                          \
  template LossAndGrad<T> loss_and_grad<T>(const Model<T>&, const LoraAdapter<T>*, std::span<const TokenSequence>, \
                                           TrainMode, Rng*);                                                   \
  template Matrix<T> forward_logits<T>(const Model<T>&, const LoraAdapter<T>*, std::span<const TokenId>);

TRAJFORGE_INSTANTIATE(float)
TRAJFORGE_INSTANTIATE(double)

#undef TRAJFORGE_INSTANTIATE

}  // namespace trajforge
