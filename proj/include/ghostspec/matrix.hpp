#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ghostspec/error.hpp"

namespace ghostspec {

/// Dense row-major double matrix. Every spectral computation in the library
/// runs on this type regardless of the dtype the weights were stored in.
class WeightMatrix {
 public:
  WeightMatrix() = default;

  WeightMatrix(std::size_t rows, std::size_t cols, std::string source = {})
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0), source_(std::move(source)) {
    if (rows == 0 || cols == 0) {
      throw InputError("matrix dimensions must be positive");
    }
  }

  WeightMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
               std::string source = {})
      : rows_(rows), cols_(cols), data_(std::move(data)), source_(std::move(source)) {
    if (rows == 0 || cols == 0) {
      throw InputError("matrix dimensions must be positive");
    }
    if (data_.size() != rows * cols) {
      throw InputError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
  }

  static WeightMatrix identity(std::size_t n) {
    WeightMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  const std::string& source() const noexcept { return source_; }
  void set_source(std::string s) { source_ = std::move(s); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  WeightMatrix transposed() const {
    WeightMatrix t(cols_, rows_, source_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  /// Index of the first non-finite entry, or size() if all are finite.
  std::size_t first_non_finite() const noexcept {
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i])) return i;
    return data_.size();
  }

  double frobenius_norm() const noexcept {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return std::sqrt(s);
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const WeightMatrix& a, const WeightMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  std::string source_;
};

inline WeightMatrix matmul(const WeightMatrix& a, const WeightMatrix& b) {
  if (a.cols() != b.rows()) {
    throw InputError("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
  WeightMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

/// aᵀ·b without materializing the transpose.
inline WeightMatrix matmul_transpose_a(const WeightMatrix& a, const WeightMatrix& b) {
  if (a.rows() != b.rows()) {
    throw InputError("matmul shape mismatch: (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ")^T * " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
  WeightMatrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < arow.size(); ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      auto dst = out.row(i);
      for (std::size_t j = 0; j < brow.size(); ++j) dst[j] += aki * brow[j];
    }
  }
  return out;
}

inline WeightMatrix scaled(const WeightMatrix& m, double factor) {
  WeightMatrix out = m;
  for (double& v : out.data()) v *= factor;
  return out;
}

inline WeightMatrix subtract(const WeightMatrix& a, const WeightMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw InputError("subtract shape mismatch");
  WeightMatrix out = a;
  auto src = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

}  // namespace ghostspec
