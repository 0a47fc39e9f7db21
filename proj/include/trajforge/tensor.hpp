#pragma once

// Named row-major tensors in one flat buffer, plus the handful of dense
// kernels the model needs. Weights follow the [out x in] convention, so a
// linear layer computes y = W x.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trajforge {

template <typename T>
class TensorStore {
 public:
  struct Entry {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;
    [[nodiscard]] std::size_t size() const noexcept { return rows * cols; }
  };

  // Returns the entry index. Spans handed out earlier are invalidated.
  std::size_t add(std::string name, std::size_t rows, std::size_t cols) {
    entries_.push_back({std::move(name), rows, cols, data_.size()});
    data_.resize(data_.size() + rows * cols, T{0});
    return entries_.size() - 1;
  }

  [[nodiscard]] std::span<T> operator[](std::size_t idx) {
    const auto& e = entries_[idx];
    return {data_.data() + e.offset, e.size()};
  }
  [[nodiscard]] std::span<const T> operator[](std::size_t idx) const {
    const auto& e = entries_[idx];
    return {data_.data() + e.offset, e.size()};
  }
  [[nodiscard]] T* ptr(std::size_t idx) { return data_.data() + entries_[idx].offset; }
  [[nodiscard]] const T* ptr(std::size_t idx) const { return data_.data() + entries_[idx].offset; }

  [[nodiscard]] const std::vector<Entry>& entries() const noexcept { return entries_; }
  [[nodiscard]] const Entry& entry(std::size_t idx) const { return entries_[idx]; }
  [[nodiscard]] std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return i;
    return std::nullopt;
  }

  [[nodiscard]] std::span<T> flat() noexcept { return data_; }
  [[nodiscard]] std::span<const T> flat() const noexcept { return data_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

  [[nodiscard]] TensorStore zeros_like() const {
    TensorStore out;
    out.entries_ = entries_;
    out.data_.assign(data_.size(), T{0});
    return out;
  }

  template <typename U>
  [[nodiscard]] TensorStore<U> cast() const {
    TensorStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.rows, e.cols);
    auto dst = out.flat();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
    return out;
  }

  friend bool operator==(const TensorStore& a, const TensorStore& b) {
    if (a.entries_.size() != b.entries_.size() || a.data_ != b.data_) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto &x = a.entries_[i], &y = b.entries_[i];
      if (x.name != y.name || x.rows != y.rows || x.cols != y.cols) return false;
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
  std::vector<T> data_;
};

template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{0}) {}

  [[nodiscard]] std::span<T> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  [[nodiscard]] std::span<const T> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

namespace kernels {

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T s{0};
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// Y[n x d] (+)= X[n x k] * W[d x k]^T
template <typename T>
void matmul_nt(const T* x, std::size_t n, std::size_t k, const T* w, std::size_t d, T* y, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * k;
    T* yi = y + i * d;
    for (std::size_t o = 0; o < d; ++o) {
      const T v = dot(xi, w + o * k, k);
      yi[o] = accumulate ? yi[o] + v : v;
    }
  }
}

// dX[n x k] += dY[n x d] * W[d x k]
template <typename T>
void matmul_nn_acc(const T* dy, std::size_t n, std::size_t d, const T* w, std::size_t k, T* dx) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* dyi = dy + i * d;
    T* dxi = dx + i * k;
    for (std::size_t o = 0; o < d; ++o) {
      if (dyi[o] != T{0}) axpy(dyi[o], w + o * k, dxi, k);
    }
  }
}

// dW[d x k] += dY[n x d]^T * X[n x k]
template <typename T>
void matmul_tn_acc(const T* dy, std::size_t n, std::size_t d, const T* x, std::size_t k, T* dw) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* dyi = dy + i * d;
    const T* xi = x + i * k;
    for (std::size_t o = 0; o < d; ++o) {
      if (dyi[o] != T{0}) axpy(dyi[o], xi, dw + o * k, k);
    }
  }
}

}  // namespace kernels
}  // namespace trajforge
