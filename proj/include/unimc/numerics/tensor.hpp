#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "unimc/error.hpp"

namespace unimc::numerics {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array. Graph code treats every tensor as a matrix
/// (rows x cols); a scalar is 1x1 and a vector is 1xn.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_extents();
    values_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), values_(std::move(values)) {
    validate_extents();
    if (values_.size() != shape_size(shape_)) {
      throw ShapeError(detail::concat("tensor: ", values_.size(), " values do not fill shape ",
                                      shape_string(shape_)));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T{0}) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_.front(); }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : size() / shape_.front(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::vector<T>& storage() noexcept { return values_; }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }

  std::span<T> row(std::size_t r) noexcept { return {values_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const noexcept { return {values_.data() + r * cols(), cols()}; }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor&) const = default;

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(values_.begin(), values_.end()));
  }

 private:
  void validate_extents() const {
    for (auto e : shape_) {
      if (e == 0) throw ShapeError("tensor: extents must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> values_;
};

// Kernels. All operate on raw row-major buffers and accumulate into `c`.

/// c[m,n] += a[m,k] * b[k,n]
template <class T>
void gemm_nn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::size_t i = 0;
  // four output rows per pass share each loaded row of b
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + i * n;
    T* c1 = c0 + n;
    T* c2 = c1 + n;
    T* c3 = c2 + n;
    const T* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T x0 = a0[p], x1 = a0[k + p], x2 = a0[2 * k + p], x3 = a0[3 * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T bv = bp[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// c[m,n] += a[k,m]^T * b[k,n]
template <class T>
void gemm_tn_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    const T* b0 = b + p * n;
    const T* b1 = b0 + n;
    const T* b2 = b1 + n;
    const T* b3 = b2 + n;
    const T* a0 = a + p * m;
    for (std::size_t i = 0; i < m; ++i) {
      const T x0 = a0[i], x1 = a0[m + i], x2 = a0[2 * m + i], x3 = a0[3 * m + i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
    }
  }
  for (; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i];
      T* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// c[m,n] += a[m,k] * b[n,k]^T
template <class T>
void gemm_nt_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn_acc(a, bt.data(), c, m, k, n);
}

/// Numerically stable in-place softmax over one row.
template <class T>
void softmax_row(std::span<T> row) {
  T mx = row[0];
  for (T v : row) mx = std::max(mx, v);
  T sum = 0;
  for (T& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : row) v /= sum;
}

template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> out(logits.begin(), logits.end());
  softmax_row(std::span<T>(out));
  return out;
}

template <class T>
T cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError(detail::concat("cosine: length mismatch ", a.size(), " vs ", b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  if (na == 0 || nb == 0) return T{0};
  return static_cast<T>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

}  // namespace unimc::numerics
