#include "trajforge/lora.hpp"

#include <algorithm>

#include "trajforge/error.hpp"

namespace trajforge {

namespace {
const std::vector<std::string> kAdaptable = {"wq", "wk", "wv", "wo", "w1", "w2"};
}

void LoraConfig::validate() const {
  if (rank < 1) throw Error(ErrorCode::InvalidConfig, "LoRA rank must be >= 1");
  if (!(alpha > 0.0)) throw Error(ErrorCode::InvalidConfig, "LoRA alpha must be > 0");
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::InvalidConfig, "LoRA dropout must be in [0, 1)");
  if (targets.empty()) throw Error(ErrorCode::InvalidConfig, "LoRA needs at least one target matrix");
  for (const auto& t : targets) {
    if (std::find(kAdaptable.begin(), kAdaptable.end(), t) == kAdaptable.end())
      throw Error(ErrorCode::InvalidConfig, "cannot adapt '" + t + "'");
  }
}

nlohmann::json LoraConfig::to_json() const {
  return {{"rank", rank}, {"alpha", alpha}, {"dropout", dropout}, {"targets", targets}};
}

LoraConfig LoraConfig::from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<int>();
  c.alpha = j.at("alpha").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.targets = j.at("targets").get<std::vector<std::string>>();
  c.validate();
  return c;
}

template <typename T>
std::vector<T> lora_forward(const Matrix<T>& w0, const Matrix<T>& a, const Matrix<T>& b, std::span<const T> x,
                            double alpha, int rank) {
  const auto r = static_cast<std::size_t>(rank);
  if (rank < 1 || a.rows != r || b.cols != r || a.cols != w0.cols || b.rows != w0.rows || x.size() != w0.cols)
    throw Error(ErrorCode::ShapeMismatch, "lora_forward operand shapes do not conform");
  std::vector<T> h(w0.rows);
  std::vector<T> u(r);
  kernels::matmul_nt(x.data(), 1, x.size(), w0.data.data(), w0.rows, h.data(), false);
  kernels::matmul_nt(x.data(), 1, x.size(), a.data.data(), r, u.data(), false);
  const auto s = static_cast<T>(alpha / rank);
  for (auto& v : u) v *= s;
  kernels::matmul_nt(u.data(), 1, r, b.data.data(), b.rows, h.data(), true);
  return h;
}

template <typename T>
Matrix<T> lora_delta(const Matrix<T>& a, const Matrix<T>& b, double alpha, int rank) {
  if (rank < 1 || a.rows != static_cast<std::size_t>(rank) || b.cols != a.rows)
    throw Error(ErrorCode::ShapeMismatch, "lora_delta operand shapes do not conform");
  Matrix<T> d(b.rows, a.cols);
  const auto s = static_cast<T>(alpha / rank);
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t q = 0; q < a.rows; ++q) kernels::axpy(s * b(i, q), &a.data[q * a.cols], &d.data[i * a.cols], a.cols);
  return d;
}

template std::vector<float> lora_forward(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                                         std::span<const float>, double, int);
template std::vector<double> lora_forward(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&,
                                          std::span<const double>, double, int);
template Matrix<float> lora_delta(const Matrix<float>&, const Matrix<float>&, double, int);
template Matrix<double> lora_delta(const Matrix<double>&, const Matrix<double>&, double, int);

}  // namespace trajforge
