#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ghostspec/error.hpp"
#include "ghostspec/fingerprint.hpp"

namespace ghostspec {

inline constexpr double kDefaultGapPenalty = 0.002;

/// N x M non-negative layer-pair distances, row-major.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  DistanceMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), d_(rows * cols, 0.0) {}
  DistanceMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
      : rows_(rows), cols_(cols), d_(std::move(entries)) {
    if (d_.size() != rows * cols) throw InputError("distance matrix entry count mismatch");
  }
  DistanceMatrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    for (const auto& row : init) {
      if (row.size() != cols_) throw InputError("ragged distance matrix");
      d_.insert(d_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return d_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return d_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return d_[i * cols_ + j]; }
  const std::vector<double>& entries() const noexcept { return d_; }

  DistanceMatrix transposed() const {
    DistanceMatrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  void validate() const {
    if (d_.empty()) throw InputError("empty distance matrix");
    for (double v : d_) {
      if (!std::isfinite(v) || v < 0.0) throw InputError("distance matrix entries must be finite and >= 0");
    }
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> d_;
};

struct AlignmentPath {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  double gap_cost = 0.0;    // rho x columns skipped between consecutive matches
  double total_cost = 0.0;  // sum of matched distances + gap_cost
  double path_mean = 0.0;   // mean matched distance
};

enum class AlignmentMode { posa, front_truncate, back_truncate, proportional_subsample };

inline std::string_view alignment_mode_name(AlignmentMode m) noexcept {
  switch (m) {
    case AlignmentMode::posa: return "posa";
    case AlignmentMode::front_truncate: return "front_truncate";
    case AlignmentMode::back_truncate: return "back_truncate";
    case AlignmentMode::proportional_subsample: return "proportional_subsample";
  }
  return "?";
}

inline AlignmentMode parse_alignment_mode(std::string_view s) {
  for (auto m : {AlignmentMode::posa, AlignmentMode::front_truncate, AlignmentMode::back_truncate,
                 AlignmentMode::proportional_subsample}) {
    if (s == alignment_mode_name(m)) return m;
  }
  throw InputError("unknown alignment mode '" + std::string(s) + "'");
}

namespace detail {

inline void finish_path(const DistanceMatrix& d, AlignmentPath& path, double rho) {
  double sum = 0.0;
  std::size_t skipped = 0;
  for (std::size_t t = 0; t < path.pairs.size(); ++t) {
    sum += d(path.pairs[t].first, path.pairs[t].second);
    if (t) skipped += path.pairs[t].second - path.pairs[t - 1].second - 1;
  }
  path.gap_cost = rho * static_cast<double>(skipped);
  path.path_mean = sum / static_cast<double>(path.pairs.size());
}

}  // namespace detail

/// Penalty-based optimal spectral alignment. Every row i is matched to one
/// column j_i with j strictly increasing; each column skipped between two
/// consecutive matches costs rho. Leading and trailing skips are free. Ties
/// in the predecessor choice go to the smallest column index.
inline AlignmentPath posa_align(const DistanceMatrix& d, double rho = kDefaultGapPenalty) {
  d.validate();
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw InputError("gap penalty must be finite and >= 0");
  const std::size_t n = d.rows();
  const std::size_t m = d.cols();
  if (n > m) {
    throw InputError("posa_align requires rows <= cols (got " + std::to_string(n) + "x" +
                     std::to_string(m) + "); transpose first");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(n * m, kInf);
  std::vector<std::size_t> back(n * m, 0);
  for (std::size_t j = 0; j < m; ++j) cost[j] = d(0, j);
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      double best = kInf;
      std::size_t best_k = i - 1;
      for (std::size_t k = i - 1; k < j; ++k) {
        const double c = cost[(i - 1) * m + k] + static_cast<double>(j - k - 1) * rho;
        if (c < best) {
          best = c;
          best_k = k;
        }
      }
      cost[i * m + j] = best + d(i, j);
      back[i * m + j] = best_k;
    }
  }
  std::size_t j_end = n - 1;
  for (std::size_t k = n; k < m; ++k) {
    if (cost[(n - 1) * m + k] < cost[(n - 1) * m + j_end]) j_end = k;
  }

  AlignmentPath path;
  path.pairs.resize(n);
  std::size_t j = j_end;
  for (std::size_t i = n; i-- > 0;) {
    path.pairs[i] = {i, j};
    if (i) j = back[i * m + j];
  }
  path.total_cost = cost[(n - 1) * m + j_end];
  detail::finish_path(d, path, rho);
  return path;
}

/// Fixed-correspondence alignments used as ablation baselines.
inline AlignmentPath align_baseline(const DistanceMatrix& d, AlignmentMode mode) {
  d.validate();
  const std::size_t n = d.rows();
  const std::size_t m = d.cols();
  if (n > m) throw InputError("align_baseline requires rows <= cols");
  AlignmentPath path;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i;
    switch (mode) {
      case AlignmentMode::front_truncate: j = i; break;
      case AlignmentMode::back_truncate: j = m - n + i; break;
      case AlignmentMode::proportional_subsample:
        // round(i (M-1) / (N-1)), halves rounded up, in exact integer arithmetic.
        j = n == 1 ? 0 : (2 * i * (m - 1) + (n - 1)) / (2 * (n - 1));
        break;
      case AlignmentMode::posa:
        throw InputError("align_baseline does not handle posa; call posa_align");
    }
    path.pairs.emplace_back(i, j);
  }
  detail::finish_path(d, path, 0.0);
  path.gap_cost = 0.0;
  path.total_cost = path.path_mean * static_cast<double>(n);
  return path;
}

inline AlignmentPath align(const DistanceMatrix& d, AlignmentMode mode, double rho) {
  return mode == AlignmentMode::posa ? posa_align(d, rho) : align_baseline(d, mode);
}

/// Align with the shorter side as rows. Pairs are reported in the original
/// (row, col) orientation of `d`.
inline AlignmentPath align_oriented(const DistanceMatrix& d, AlignmentMode mode, double rho) {
  if (d.rows() <= d.cols()) return align(d, mode, rho);
  AlignmentPath path = align(d.transposed(), mode, rho);
  for (auto& [i, j] : path.pairs) std::swap(i, j);
  return path;
}

struct AlignedTrends {
  std::vector<std::array<double, 2>> a;  // (qk mean, vo mean) per matched layer
  std::vector<std::array<double, 2>> b;
  AlignmentPath path;                    // pairs are (layer in a, layer in b)
};

/// Layer-pair trend distance: mean absolute difference of the two components.
inline DistanceMatrix trend_distance_matrix(const TrendSequences& a, const TrendSequences& b) {
  if (a.size() == 0 || b.size() == 0) throw InputError("empty trend sequence");
  DistanceMatrix d(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      d(i, j) = 0.5 * (std::abs(a.qk_means[i] - b.qk_means[j]) +
                       std::abs(a.vo_means[i] - b.vo_means[j]));
  return d;
}

inline AlignedTrends align_trend_sequences(const TrendSequences& a, const TrendSequences& b,
                                           double rho = kDefaultGapPenalty,
                                           AlignmentMode mode = AlignmentMode::posa) {
  AlignedTrends out;
  out.path = align_oriented(trend_distance_matrix(a, b), mode, rho);
  for (const auto& [i, j] : out.path.pairs) {
    out.a.push_back({a.qk_means[i], a.vo_means[i]});
    out.b.push_back({b.qk_means[j], b.vo_means[j]});
  }
  return out;
}

}  // namespace ghostspec
