#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ghostspec/error.hpp"
#include "ghostspec/matrix.hpp"

namespace ghostspec {

/// Singular values of one matrix, descending and non-negative.
struct SingularSpectrum {
  std::vector<double> values;
  std::size_t source_rows = 0;
  std::size_t source_cols = 0;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const SingularSpectrum&, const SingularSpectrum&) = default;
};

/// Top-r singular values min-max scaled into [0, 1].
struct ProcessedSpectrum {
  std::vector<double> values;
  std::size_t rank_used = 0;
};

struct JacobiOptions {
  int max_sweeps = 60;
  double tolerance = 1e-12;
};

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) noexcept {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline void rotate(double* a, double* b, std::size_t n, double c, double s) noexcept {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i];
    const double y = b[i];
    a[i] = c * x - s * y;
    b[i] = s * x + c * y;
  }
}

// Householder QR with column pivoting of the len x n matrix whose columns are
// the n rows of `w` (each row stored contiguously). Returns the n x n upper
// triangular factor R, row-major. Singular values are preserved.
inline std::vector<double> pivoted_triangular_factor(std::vector<double> w, std::size_t n,
                                                     std::size_t len) {
  std::vector<double> col_norm(n);
  for (std::size_t j = 0; j < n; ++j) col_norm[j] = dot(&w[j * len], &w[j * len], len);
  std::vector<double> diag_r(n, 0.0);
  std::vector<double> v(len);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t piv = k;
    for (std::size_t j = k + 1; j < n; ++j)
      if (col_norm[j] > col_norm[piv]) piv = j;
    if (piv != k) {
      std::swap_ranges(&w[k * len], &w[k * len] + len, &w[piv * len]);
      std::swap(col_norm[k], col_norm[piv]);
    }
    double* ck = &w[k * len];
    const std::size_t m = len - k;
    const double sigma = std::sqrt(dot(ck + k, ck + k, m));
    double diag = 0.0;
    if (sigma > 0.0) {
      diag = ck[k] > 0.0 ? -sigma : sigma;
      for (std::size_t i = 0; i < m; ++i) v[i] = ck[k + i];
      v[0] -= diag;
      const double vv = dot(v.data(), v.data(), m);
      if (vv > 0.0) {
        for (std::size_t j = k + 1; j < n; ++j) {
          double* cj = &w[j * len];
          const double f = 2.0 * dot(v.data(), cj + k, m) / vv;
          for (std::size_t i = 0; i < m; ++i) cj[k + i] -= f * v[i];
        }
      }
    }
    diag_r[k] = diag;
    for (std::size_t j = k + 1; j < n; ++j) {
      const double rkj = w[j * len + k];
      col_norm[j] = std::max(0.0, col_norm[j] - rkj * rkj);
    }
    // Guard against cancellation in the downdated norms.
    for (std::size_t j = k + 1; j < n; ++j) {
      if (col_norm[j] < 1e-8 * dot(&w[j * len] + k + 1, &w[j * len] + k + 1, m - 1)) {
        col_norm[j] = dot(&w[j * len] + k + 1, &w[j * len] + k + 1, m - 1);
      }
    }
  }
  // Entries above the diagonal travel with their column through later swaps,
  // so R is read off only once the reduction is complete.
  std::vector<double> r(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    r[i * n + i] = diag_r[i];
    for (std::size_t j = i + 1; j < n; ++j) r[i * n + j] = w[j * len + i];
  }
  return r;
}

}  // namespace detail

/// Singular values by one-sided (Hestenes) Jacobi. The rows of the
/// min(rows, cols)-side are rotated until mutually orthogonal; their norms
/// are then the singular values. Only values are produced.
inline SingularSpectrum singular_values(const WeightMatrix& m, const JacobiOptions& opts = {}) {
  if (const std::size_t bad = m.first_non_finite(); bad != m.size()) {
    throw InputError("singular_values: non-finite entry at flat index " + std::to_string(bad));
  }
  const bool use_rows = m.rows() <= m.cols();
  const std::size_t n = use_rows ? m.rows() : m.cols();
  const std::size_t len = use_rows ? m.cols() : m.rows();
  auto at = [&](std::size_t i, std::size_t k) { return use_rows ? m(i, k) : m(k, i); };

  // Visit the long axis in lexicographic order of its slices. Singular values
  // ignore that order, and fixing it makes the result bitwise identical for
  // inputs that differ only by a permutation along the long axis.
  std::vector<std::size_t> order(len);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t i = 0; i < n; ++i) {
      const double x = at(i, a), y = at(i, b);
      if (x != y) return x < y;
    }
    return false;
  });
  std::vector<double> w(n * len);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < len; ++k) w[i * len + k] = at(i, order[k]);

  // Pivoted QR first: the triangular factor has the same singular values and
  // graded rows, which cuts the Jacobi sweep count several-fold.
  w = detail::pivoted_triangular_factor(std::move(w), n, len);
  w = detail::pivoted_triangular_factor(std::move(w), n, n);

  std::vector<double> norms(n);
  auto refresh_norms = [&] {
    for (std::size_t i = 0; i < n; ++i) norms[i] = detail::dot(&w[i * n], &w[i * n], n);
  };
  refresh_norms();

  const double max_norm_sq = n ? *std::max_element(norms.begin(), norms.end()) : 0.0;
  const double noise_floor = max_norm_sq * 1e-30;

  bool converged = n < 2;
  double residual = 0.0;
  for (int sweep = 0; sweep < opts.max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    residual = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      double* wp = &w[p * n];
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = norms[p];
        const double beta = norms[q];
        if (std::min(alpha, beta) <= noise_floor) continue;
        double* wq = &w[q * n];
        const double gamma = detail::dot(wp, wq, n);
        const double scale = std::sqrt(alpha) * std::sqrt(beta);
        const double rel = std::abs(gamma) / scale;
        residual = std::max(residual, rel);
        if (rel <= opts.tolerance) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        detail::rotate(wp, wq, n, c, s);
        norms[p] = std::max(0.0, alpha - t * gamma);
        norms[q] = std::max(0.0, beta + t * gamma);
      }
    }
    refresh_norms();
    converged = !rotated;
  }
  if (!converged) {
    throw NumericalError("singular_values: Jacobi did not converge in " +
                         std::to_string(opts.max_sweeps) + " sweeps (residual " +
                         std::to_string(residual) + ")");
  }

  SingularSpectrum out;
  out.source_rows = m.rows();
  out.source_cols = m.cols();
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = std::sqrt(norms[i]);
  std::sort(out.values.begin(), out.values.end(), std::greater<>());
  return out;
}

/// exp of the Shannon entropy of the sum-normalized singular values.
inline double effective_rank(const SingularSpectrum& s) {
  double total = 0.0;
  for (double v : s.values) {
    if (v < 0.0 || !std::isfinite(v)) throw InputError("effective_rank: invalid singular value");
    total += v;
  }
  if (!(total > 0.0)) throw NumericalError("effective_rank: null spectrum");
  double entropy = 0.0;
  for (double v : s.values) {
    if (v == 0.0) continue;
    const double p = v / total;
    entropy -= p * std::log(p);
  }
  return std::clamp(std::exp(entropy), 1.0, static_cast<double>(s.values.size()));
}

/// Integer truncation depth from a real effective rank: floor, at least 1.
inline std::size_t rank_from_effective(double eff_rank) noexcept {
  const double f = std::floor(eff_rank);
  return f < 1.0 ? std::size_t{1} : static_cast<std::size_t>(f);
}

/// Keep the top r values and rescale so max -> 1, min -> 0. Constant vectors
/// map to all zeros.
inline ProcessedSpectrum truncate_normalize(const SingularSpectrum& s, std::size_t r) {
  if (r == 0 || r > s.values.size()) {
    throw InputError("truncate_normalize: r=" + std::to_string(r) + " outside [1, " +
                     std::to_string(s.values.size()) + "]");
  }
  ProcessedSpectrum out;
  out.rank_used = r;
  out.values.assign(s.values.begin(), s.values.begin() + static_cast<std::ptrdiff_t>(r));
  const auto [lo_it, hi_it] = std::minmax_element(out.values.begin(), out.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  const double span = hi - lo;
  for (double& v : out.values) v = (v - lo) / span;
  return out;
}

inline double spectral_mse(const ProcessedSpectrum& a, const ProcessedSpectrum& b) {
  if (a.rank_used != b.rank_used || a.values.size() != b.values.size()) {
    throw InputError("spectral_mse: rank mismatch (" + std::to_string(a.rank_used) + " vs " +
                     std::to_string(b.rank_used) + ")");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < a.values.size(); ++j) {
    const double d = a.values[j] - b.values[j];
    sum += d * d;
  }
  return sum / static_cast<double>(a.rank_used);
}

/// Distance between two raw spectra: truncate both to the floor of their
/// smaller effective rank, min-max normalize, then mean squared error.
inline double spectrum_distance(const SingularSpectrum& a, double eff_a,
                                const SingularSpectrum& b, double eff_b) {
  std::size_t r = rank_from_effective(std::min(eff_a, eff_b));
  r = std::min({r, a.size(), b.size()});
  return spectral_mse(truncate_normalize(a, r), truncate_normalize(b, r));
}

}  // namespace ghostspec
