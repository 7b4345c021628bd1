#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ghostspec/alignment.hpp"
#include "ghostspec/error.hpp"
#include "ghostspec/fingerprint.hpp"
#include "ghostspec/spectral.hpp"

namespace ghostspec {

inline constexpr double kDefaultSigmoidMidpoint = 0.00371;
inline constexpr double kDefaultSteepness = 1000.0;
inline constexpr double kDefaultMseThreshold = 0.85;
inline constexpr double kDefaultCorrThreshold = 0.61;
inline constexpr int kReportSchemaVersion = 1;

enum class ProductComponents { both, qk_only, vo_only };

inline std::string_view components_name(ProductComponents c) noexcept {
  switch (c) {
    case ProductComponents::both: return "both";
    case ProductComponents::qk_only: return "qk_only";
    case ProductComponents::vo_only: return "vo_only";
  }
  return "?";
}

inline ProductComponents parse_components(std::string_view s) {
  if (s == "both") return ProductComponents::both;
  if (s == "qk_only" || s == "qk") return ProductComponents::qk_only;
  if (s == "vo_only" || s == "vo") return ProductComponents::vo_only;
  throw InputError("unknown components '" + std::string(s) + "' (both|qk_only|vo_only)");
}

struct SimilarityParams {
  double tau = kDefaultSigmoidMidpoint;
  double steepness_k = kDefaultSteepness;
  double rho = kDefaultGapPenalty;
  ProductComponents components = ProductComponents::both;
  AlignmentMode alignment = AlignmentMode::posa;
  double threshold_mse = kDefaultMseThreshold;
  double threshold_corr = kDefaultCorrThreshold;

  void validate() const {
    if (!(steepness_k > 0.0) || !std::isfinite(steepness_k)) throw InputError("steepness k must be > 0");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("tau must be > 0");
    if (!(rho >= 0.0) || !std::isfinite(rho)) throw InputError("rho must be >= 0");
    for (double t : {threshold_mse, threshold_corr}) {
      if (!(t >= 0.0 && t <= 1.0)) throw InputError("classification thresholds must lie in [0, 1]");
    }
  }
};

/// Inverted logistic: 1 at small distances, 0.5 at d = tau, -> 0 beyond.
inline double sigmoid_score(double d_path, double tau, double k) {
  return 1.0 - 1.0 / (1.0 + std::exp(-k * (d_path - tau)));
}

/// Score of a zero-distance pair, the largest value the mse score can take.
inline double sigmoid_ceiling(double tau, double k) { return sigmoid_score(0.0, tau, k); }

/// "related" iff the score strictly exceeds the threshold.
inline bool classify(double score, double threshold) noexcept { return score > threshold; }

namespace detail {

inline std::vector<std::size_t> selected_components(const ModelFingerprint& fp, ProductComponents c) {
  if (fp.variant == FingerprintVariant::mlp) {
    if (c != ProductComponents::both) throw InputError("qk_only/vo_only apply to attention fingerprints only");
    return {0, 1};
  }
  switch (c) {
    case ProductComponents::both: return {0, 1};
    case ProductComponents::qk_only: return {0};
    case ProductComponents::vo_only: return {1};
  }
  return {};
}

}  // namespace detail

/// Entry (i, j): mean over the selected components of the truncated,
/// normalized spectral MSE between layer i of `a` and layer j of `b`.
inline DistanceMatrix layer_distance_matrix(const ModelFingerprint& a, const ModelFingerprint& b,
                                            ProductComponents components = ProductComponents::both) {
  if (a.variant != b.variant) throw InputError("fingerprint variant mismatch");
  if (a.variant == FingerprintVariant::attention_naive) {
    throw InputError("layer_distance_matrix takes attention_invariant or mlp fingerprints");
  }
  if (a.layers.empty() || b.layers.empty()) throw InputError("empty fingerprint");
  const auto comps = detail::selected_components(a, components);
  DistanceMatrix d(a.layers.size(), b.layers.size());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& la = a.layers[i];
    for (std::size_t j = 0; j < b.layers.size(); ++j) {
      const auto& lb = b.layers[j];
      double sum = 0.0;
      for (std::size_t c : comps) {
        sum += spectrum_distance(la.spectra.at(c), la.eff_ranks.at(c), lb.spectra.at(c),
                                 lb.eff_ranks.at(c));
      }
      d(i, j) = sum / static_cast<double>(comps.size());
    }
  }
  return d;
}

struct MseResult {
  double score = 0.0;
  double d_path = 0.0;
  AlignmentPath path;  // pairs are (layer of a, layer of b)
};

inline MseResult ghostspec_mse(const ModelFingerprint& a, const ModelFingerprint& b,
                               const SimilarityParams& params = {}) {
  params.validate();
  MseResult r;
  r.path = align_oriented(layer_distance_matrix(a, b, params.components), params.alignment, params.rho);
  r.d_path = r.path.path_mean;
  r.score = sigmoid_score(r.d_path, params.tau, params.steepness_k);
  return r;
}

/// Empirical distance correlation of paired samples (rows of x and y).
/// Samples may be multi-dimensional; dimensions of x and y may differ.
template <typename Sample>
double distance_correlation(const std::vector<Sample>& x, const std::vector<Sample>& y) {
  const std::size_t n = x.size();
  if (n != y.size()) throw InputError("distance_correlation: sample count mismatch");
  if (n < 2) throw InputError("distance_correlation needs at least 2 samples");

  auto centered = [n](const std::vector<Sample>& s) {
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double sq = 0.0;
        auto it = std::begin(s[j]);
        for (double v : s[i]) {
          const double diff = v - *it++;
          sq += diff * diff;
        }
        a[i * n + j] = a[j * n + i] = std::sqrt(sq);
      }
    }
    std::vector<double> row_mean(n, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) row_mean[i] += a[i * n + j];
      grand += row_mean[i];
      row_mean[i] /= static_cast<double>(n);
    }
    grand /= static_cast<double>(n * n);
    // Symmetric, so column means equal row means.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] += grand - row_mean[i] - row_mean[j];
    return a;
  };

  const auto A = centered(x);
  const auto B = centered(y);
  double cov = 0.0, var_x = 0.0, var_y = 0.0;
  for (std::size_t t = 0; t < n * n; ++t) {
    cov += A[t] * B[t];
    var_x += A[t] * A[t];
    var_y += B[t] * B[t];
  }
  const double nn = static_cast<double>(n * n);
  cov /= nn;
  var_x /= nn;
  var_y /= nn;
  if (var_x <= 0.0 || var_y <= 0.0) return 0.0;
  const double r2 = std::max(0.0, cov) / std::sqrt(var_x * var_y);
  return std::clamp(std::sqrt(r2), 0.0, 1.0);
}

inline double distance_correlation(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<std::array<double, 1>> xs, ys;
  for (double v : x) xs.push_back({v});
  for (double v : y) ys.push_back({v});
  return distance_correlation(xs, ys);
}

struct CorrResult {
  double score = 0.0;
  AlignmentPath path;
};

/// Distance correlation of the aligned per-layer (qk, vo) trend samples.
inline CorrResult ghostspec_corr(const ModelFingerprint& a, const ModelFingerprint& b,
                                 const SimilarityParams& params = {}) {
  params.validate();
  const auto aligned =
      align_trend_sequences(trend_sequences(a), trend_sequences(b), params.rho, params.alignment);
  return {distance_correlation(aligned.a, aligned.b), aligned.path};
}

/// Unaligned per-projection baseline over raw q/k/v/o spectra: the average of
/// the truncated normalized MSE over all layers and the four projections.
inline double naive_projection_distance(const ModelFingerprint& a, const ModelFingerprint& b) {
  if (a.variant != FingerprintVariant::attention_naive ||
      b.variant != FingerprintVariant::attention_naive) {
    throw InputError("naive_projection_distance requires attention_naive fingerprints");
  }
  if (a.layers.size() != b.layers.size() || a.layers.empty()) {
    throw InputError("naive_projection_distance requires equal, non-zero depth");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    for (std::size_t p = 0; p < 4; ++p) {
      sum += spectrum_distance(a.layers[i].spectra.at(p), a.layers[i].eff_ranks.at(p),
                               b.layers[i].spectra.at(p), b.layers[i].eff_ranks.at(p));
    }
  }
  return sum / (4.0 * static_cast<double>(a.layers.size()));
}

struct SimilarityReport {
  std::string model_a;
  std::string model_b;
  std::optional<MseResult> mse;
  std::optional<CorrResult> corr;
  SimilarityParams params;

  bool verdict_mse() const { return mse && classify(mse->score, params.threshold_mse); }
  bool verdict_corr() const { return corr && classify(corr->score, params.threshold_corr); }
};

struct MetricSelection {
  bool mse = true;
  bool corr = true;
};

inline SimilarityReport compare(const ModelFingerprint& a, const ModelFingerprint& b,
                                const SimilarityParams& params = {}, MetricSelection which = {}) {
  SimilarityReport rep;
  rep.model_a = a.model_id;
  rep.model_b = b.model_id;
  rep.params = params;
  if (which.mse) rep.mse = ghostspec_mse(a, b, params);
  if (which.corr) rep.corr = ghostspec_corr(a, b, params);
  return rep;
}

inline nlohmann::json path_to_json(const AlignmentPath& p) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [i, j] : p.pairs) pairs.push_back({i, j});
  return {{"pairs", pairs}, {"gap_cost", p.gap_cost}, {"total_cost", p.total_cost},
          {"path_mean", p.path_mean}};
}

inline nlohmann::json report_to_json(const SimilarityReport& r) {
  nlohmann::json j;
  j["schema_version"] = kReportSchemaVersion;
  j["model_a"] = r.model_a;
  j["model_b"] = r.model_b;
  j["params"] = {{"tau", r.params.tau},
                 {"k", r.params.steepness_k},
                 {"rho", r.params.rho},
                 {"components", components_name(r.params.components)},
                 {"alignment", alignment_mode_name(r.params.alignment)}};
  if (r.mse) {
    j["mse"] = {{"score", r.mse->score},
                {"d_path", r.mse->d_path},
                {"threshold", r.params.threshold_mse},
                {"verdict", r.verdict_mse() ? "related" : "unrelated"},
                {"alignment", path_to_json(r.mse->path)}};
  }
  if (r.corr) {
    j["corr"] = {{"score", r.corr->score},
                 {"threshold", r.params.threshold_corr},
                 {"verdict", r.verdict_corr() ? "related" : "unrelated"},
                 {"alignment", path_to_json(r.corr->path)}};
  }
  return j;
}

}  // namespace ghostspec
