#include "trajforge/train.hpp"

#include <cmath>
#include <numeric>

#include "trajforge/error.hpp"

namespace trajforge {

std::string_view to_string(PermuteMode m) noexcept {
  switch (m) {
    case PermuteMode::PerEpoch: return "per-epoch";
    case PermuteMode::Once: return "once";
    case PermuteMode::Off: return "off";
  }
  return "off";
}

std::string_view to_string(TrainMode m) noexcept { return m == TrainMode::Full ? "full" : "lora-only"; }

PermuteMode parse_permute_mode(std::string_view s) {
  if (s == "per-epoch") return PermuteMode::PerEpoch;
  if (s == "once") return PermuteMode::Once;
  if (s == "off") return PermuteMode::Off;
  throw Error(ErrorCode::InvalidConfig, "permute mode must be per-epoch, once or off, got '" + std::string(s) + "'");
}

TrainMode parse_train_mode(std::string_view s) {
  if (s == "full") return TrainMode::Full;
  if (s == "lora-only") return TrainMode::LoraOnly;
  throw Error(ErrorCode::InvalidConfig, "train mode must be full or lora-only, got '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw Error(ErrorCode::InvalidConfig, "epochs must be >= 0");
  if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidConfig, "learning_rate must be > 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || !(eps > 0.0))
    throw Error(ErrorCode::InvalidConfig, "Adam moments must be in [0, 1) with eps > 0");
  if (grad_clip < 0.0) throw Error(ErrorCode::InvalidConfig, "grad_clip must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"grad_clip", grad_clip},
          {"seed", seed},
          {"permute", std::string(to_string(permute))},
          {"mode", std::string(to_string(mode))}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.eps = j.at("eps").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.permute = parse_permute_mode(j.at("permute").get<std::string>());
  c.mode = parse_train_mode(j.at("mode").get<std::string>());
  c.validate();
  return c;
}

Adam::Adam(std::size_t size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<float> params, std::span<const float> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match parameter count");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    const double mhat = m_[i] / c1;
    const double vhat = v_[i] / c2;
    params[i] = static_cast<float>(params[i] - lr_ * mhat / (std::sqrt(vhat) + eps_));
  }
}

namespace {

double squared_norm(std::span<const float> g) {
  double s = 0.0;
  for (float v : g) s += static_cast<double>(v) * v;
  return s;
}

void scale(std::span<float> g, float factor) {
  for (auto& v : g) v *= factor;
}

}  // namespace

TrainResult train(Model<float>& model, LoraAdapter<float>* adapter, const TrajectoryDataset& dataset,
                  const Vocabulary& vocab, const TrainConfig& tc, const EpochCallback& on_epoch) {
  tc.validate();
  if (tc.mode == TrainMode::LoraOnly && !adapter)
    throw Error(ErrorCode::InvalidConfig, "lora-only training needs an adapter");
  if (model.config.vocab_size != vocab.size())
    throw Error(ErrorCode::InvalidConfig, "model vocab_size " + std::to_string(model.config.vocab_size) +
                                              " does not match vocabulary size " + std::to_string(vocab.size()));

  std::vector<TokenSequence> base;
  base.reserve(dataset.trajectories.size());
  for (const auto& t : dataset.trajectories) {
    auto seq = encode_trajectory(t, vocab);
    if (seq.size() > static_cast<std::size_t>(model.config.max_seq_len))
      throw Error(ErrorCode::SequenceTooLong, "trajectory '" + t.id + "' encodes to " + std::to_string(seq.size()) +
                                                  " tokens, max_seq_len is " +
                                                  std::to_string(model.config.max_seq_len));
    base.push_back(std::move(seq));
  }

  TrainResult result;
  if (tc.epochs == 0 || base.empty()) return result;

  Rng permute_rng = make_rng(tc.seed, "train-permute");
  Rng order_rng = make_rng(tc.seed, "train-order");
  Rng dropout_rng = make_rng(tc.seed, "train-dropout");

  const bool train_base = tc.mode == TrainMode::Full;
  std::optional<Model<float>> gmodel;
  std::optional<LoraAdapter<float>> gadapter;
  std::optional<Adam> opt_model, opt_adapter;
  if (train_base) {
    gmodel = Model<float>{model.config, model.weights.zeros_like()};
    opt_model.emplace(model.weights.size(), tc.learning_rate, tc.beta1, tc.beta2, tc.eps);
  }
  if (adapter) {
    gadapter = LoraAdapter<float>{adapter->config, adapter->weights.zeros_like()};
    opt_adapter.emplace(adapter->weights.size(), tc.learning_rate, tc.beta1, tc.beta2, tc.eps);
  }

  std::vector<TokenSequence> epoch_seqs = base;
  if (tc.permute == PermuteMode::Once)
    for (auto& s : epoch_seqs) s = permute_visits(s, vocab, permute_rng);

  std::vector<std::size_t> order(base.size());
  const auto batch_size = static_cast<std::size_t>(tc.batch_size);
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    if (tc.permute == PermuteMode::PerEpoch)
      for (std::size_t i = 0; i < base.size(); ++i) epoch_seqs[i] = permute_visits(base[i], vocab, permute_rng);
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(std::span<std::size_t>(order), order_rng);

    double loss_tokens = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<TokenSequence> batch;
      for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k)
        batch.push_back(epoch_seqs[order[k]]);

      if (gmodel) std::fill(gmodel->weights.flat().begin(), gmodel->weights.flat().end(), 0.0f);
      if (gadapter) std::fill(gadapter->weights.flat().begin(), gadapter->weights.flat().end(), 0.0f);
      const Transformer<float> net(model, adapter);
      const double loss = net.loss_and_grad(batch, {gmodel ? &*gmodel : nullptr, gadapter ? &*gadapter : nullptr},
                                            &dropout_rng);
      std::size_t batch_tokens = 0;
      for (const auto& s : batch) batch_tokens += s.size() - 1;
      loss_tokens += loss * static_cast<double>(batch_tokens);
      tokens += batch_tokens;

      if (tc.grad_clip > 0.0) {
        double sq = 0.0;
        if (gmodel) sq += squared_norm(gmodel->weights.flat());
        if (gadapter) sq += squared_norm(gadapter->weights.flat());
        const double norm = std::sqrt(sq);
        if (norm > tc.grad_clip) {
          const auto f = static_cast<float>(tc.grad_clip / norm);
          if (gmodel) scale(gmodel->weights.flat(), f);
          if (gadapter) scale(gadapter->weights.flat(), f);
        }
      }
      if (opt_model) opt_model->step(model.weights.flat(), gmodel->weights.flat());
      if (opt_adapter) opt_adapter->step(adapter->weights.flat(), gadapter->weights.flat());
      ++result.steps;
    }
    const double epoch_loss = loss_tokens / static_cast<double>(tokens);
    result.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return result;
}

}  // namespace trajforge
