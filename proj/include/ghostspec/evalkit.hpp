#pragma once

// Corpus-level evaluation: pairwise score matrices, F1-optimal thresholds,
// the related/unrelated gap and gap-penalty sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ghostspec/alignment.hpp"
#include "ghostspec/error.hpp"
#include "ghostspec/fingerprint.hpp"
#include "ghostspec/similarity.hpp"

namespace ghostspec {

enum class Label { related, unrelated };

inline std::string_view label_name(Label l) noexcept { return l == Label::related ? "related" : "unrelated"; }

inline Label parse_label(std::string_view s) {
  if (s == "related") return Label::related;
  if (s == "unrelated") return Label::unrelated;
  throw InputError("label must be 'related' or 'unrelated', got '" + std::string(s) + "'");
}

struct LabeledPair {
  std::string model_a;
  std::string model_b;
  Label label = Label::unrelated;
};

struct LabeledScore {
  double score = 0.0;
  Label label = Label::unrelated;
};

enum class Metric { mse, corr };

inline std::string_view metric_name(Metric m) noexcept { return m == Metric::mse ? "mse" : "corr"; }

inline Metric parse_metric(std::string_view s) {
  if (s == "mse") return Metric::mse;
  if (s == "corr") return Metric::corr;
  throw InputError("unknown metric '" + std::string(s) + "' (mse|corr)");
}

inline double pair_score(const ModelFingerprint& a, const ModelFingerprint& b, Metric metric,
                         const SimilarityParams& params) {
  return metric == Metric::mse ? ghostspec_mse(a, b, params).score : ghostspec_corr(a, b, params).score;
}

struct ScoreMatrix {
  std::vector<std::string> ids;
  std::vector<double> scores;  // row-major n x n

  std::size_t size() const noexcept { return ids.size(); }
  double score(std::size_t i, std::size_t j) const { return scores[i * ids.size() + j]; }
  double distance(std::size_t i, std::size_t j) const { return 1.0 - score(i, j); }
};

/// Symmetric n x n similarity matrix. Each unordered pair is scored once and
/// mirrored, so S(i, j) and S(j, i) are the same double.
inline ScoreMatrix pairwise_matrix(const std::vector<ModelFingerprint>& fps, Metric metric,
                                   const SimilarityParams& params = {}, unsigned threads = 1) {
  if (fps.size() < 2) throw InputError("pairwise_matrix needs at least 2 fingerprints");
  params.validate();
  const std::size_t n = fps.size();
  ScoreMatrix out;
  for (const auto& fp : fps) out.ids.push_back(fp.model_id);
  out.scores.assign(n * n, 0.0);

  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) jobs.emplace_back(i, j);
  std::vector<std::exception_ptr> errors(jobs.size());
  auto work = [&](std::size_t t) {
    try {
      const auto [i, j] = jobs[t];
      const double s = pair_score(fps[i], fps[j], metric, params);
      out.scores[i * n + j] = s;
      out.scores[j * n + i] = s;
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(jobs.size())));
  if (threads == 1) {
    for (std::size_t t = 0; t < jobs.size(); ++t) work(t);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < jobs.size(); k = next++) work(k);
      });
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---------------------------------------------------------------------------
// Threshold selection

struct SweepPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct SweepResult {
  double best_threshold = 0.0;
  double best_f1 = 0.0;
  std::vector<SweepPoint> curve;  // ascending threshold
};

namespace detail {

inline void require_both_classes(const std::vector<LabeledScore>& scores, const char* what) {
  bool pos = false, neg = false;
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) throw InputError(std::string(what) + ": non-finite score");
    (s.label == Label::related ? pos : neg) = true;
  }
  if (!pos || !neg) throw InputError(std::string(what) + " needs both related and unrelated pairs");
}

}  // namespace detail

/// Precision, recall and F1 of "related iff score > threshold", related as the
/// positive class. Precision is 0 when nothing is predicted related.
inline SweepPoint evaluate_threshold(const std::vector<LabeledScore>& scores, double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& s : scores) {
    const bool predicted = classify(s.score, threshold);
    const bool actual = s.label == Label::related;
    if (predicted && actual) ++tp;
    if (predicted && !actual) ++fp;
    if (!predicted && actual) ++fn;
  }
  SweepPoint p;
  p.threshold = threshold;
  p.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  p.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  p.f1 = tp ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
  return p;
}

/// Candidate thresholds: 0 (or min - 1 when some score is <= 0), the midpoint
/// of each adjacent pair of distinct scores, and 1 (or max + 1 when some score
/// is >= 1). Since F1 only changes when the threshold crosses a score, these
/// cover every reachable F1 value.
inline std::vector<double> candidate_thresholds(const std::vector<LabeledScore>& scores) {
  std::vector<double> u;
  for (const auto& s : scores) u.push_back(s.score);
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> t;
  t.push_back(u.front() > 0.0 ? 0.0 : u.front() - 1.0);
  for (std::size_t i = 0; i + 1 < u.size(); ++i) t.push_back(u[i] + (u[i + 1] - u[i]) / 2.0);
  t.push_back(u.back() < 1.0 ? 1.0 : u.back() + 1.0);
  return t;
}

/// F1-maximizing threshold. Ties in F1 go to the threshold farthest from its
/// nearest score, then to the smaller threshold.
inline SweepResult optimal_threshold(const std::vector<LabeledScore>& scores) {
  detail::require_both_classes(scores, "optimal_threshold");
  SweepResult r;
  double best_margin = -1.0;
  for (double t : candidate_thresholds(scores)) {
    const SweepPoint p = evaluate_threshold(scores, t);
    r.curve.push_back(p);
    double margin = std::numeric_limits<double>::infinity();
    for (const auto& s : scores) margin = std::min(margin, std::abs(s.score - t));
    if (r.curve.size() == 1 || p.f1 > r.best_f1 || (p.f1 == r.best_f1 && margin > best_margin)) {
      r.best_f1 = p.f1;
      r.best_threshold = t;
      best_margin = margin;
    }
  }
  return r;
}

/// Mean related score minus mean unrelated score.
inline double discriminative_gap(const std::vector<LabeledScore>& scores) {
  detail::require_both_classes(scores, "discriminative_gap");
  double sum_r = 0.0, sum_u = 0.0;
  std::size_t n_r = 0, n_u = 0;
  for (const auto& s : scores) {
    if (s.label == Label::related) {
      sum_r += s.score;
      ++n_r;
    } else {
      sum_u += s.score;
      ++n_u;
    }
  }
  return sum_r / static_cast<double>(n_r) - sum_u / static_cast<double>(n_u);
}

// ---------------------------------------------------------------------------
// Labeled corpora

struct Corpus {
  std::map<std::string, ModelFingerprint> fingerprints;  // keyed by model_id
  std::vector<LabeledPair> pairs;

  const ModelFingerprint& at(const std::string& id) const {
    auto it = fingerprints.find(id);
    if (it == fingerprints.end()) throw InputError("labels reference unknown model '" + id + "'");
    return it->second;
  }

  void add(ModelFingerprint fp) {
    std::string id = fp.model_id;
    if (!fingerprints.emplace(id, std::move(fp)).second) {
      throw InputError("duplicate model id '" + id + "' in corpus");
    }
  }

  void validate() const {
    if (pairs.empty()) throw InputError("corpus has no labeled pairs");
    for (const auto& p : pairs) {
      at(p.model_a);
      at(p.model_b);
    }
  }
};

inline std::vector<LabeledScore> score_pairs(const Corpus& corpus, Metric metric,
                                             const SimilarityParams& params = {}) {
  corpus.validate();
  std::vector<LabeledScore> out;
  for (const auto& p : corpus.pairs) {
    out.push_back({pair_score(corpus.at(p.model_a), corpus.at(p.model_b), metric, params), p.label});
  }
  return out;
}

struct GapRow {
  double rho = 0.0;
  AlignmentMode mode = AlignmentMode::posa;
  double delta_mse = 0.0;
  double delta_corr = 0.0;
};

/// One row of (rho, gap under mse, gap under corr) per requested rho.
inline std::vector<GapRow> posa_sensitivity_sweep(const Corpus& corpus, const std::vector<double>& rhos,
                                                  SimilarityParams params = {}) {
  if (rhos.empty()) throw InputError("posa_sensitivity_sweep needs at least one rho value");
  std::vector<GapRow> rows;
  params.alignment = AlignmentMode::posa;
  for (double rho : rhos) {
    params.rho = rho;
    params.validate();
    rows.push_back({rho, AlignmentMode::posa, discriminative_gap(score_pairs(corpus, Metric::mse, params)),
                    discriminative_gap(score_pairs(corpus, Metric::corr, params))});
  }
  return rows;
}

/// Gap per alignment strategy, at the configured rho.
inline std::vector<GapRow> alignment_ablation(const Corpus& corpus, SimilarityParams params = {}) {
  std::vector<GapRow> rows;
  for (auto mode : {AlignmentMode::posa, AlignmentMode::front_truncate, AlignmentMode::back_truncate,
                    AlignmentMode::proportional_subsample}) {
    params.alignment = mode;
    rows.push_back({params.rho, mode, discriminative_gap(score_pairs(corpus, Metric::mse, params)),
                    discriminative_gap(score_pairs(corpus, Metric::corr, params))});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Text formats

inline std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// Header row and column of model ids; entries with 6 decimals. With
/// `distances` the entries are 1 - S.
inline std::string matrix_to_csv(const ScoreMatrix& m, bool distances = false) {
  std::string out = "model";
  for (const auto& id : m.ids) out += "," + id;
  out += "\n";
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += m.ids[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      out += "," + format_fixed6(distances ? m.distance(i, j) : m.score(i, j));
    }
    out += "\n";
  }
  return out;
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

/// Lines of `model_a,model_b,related|unrelated`. Blank lines and lines
/// starting with '#' are skipped, as is a leading header row.
inline std::vector<LabeledPair> parse_labels_csv(std::string_view text) {
  std::vector<LabeledPair> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto comma = t.find(',', start);
      fields.push_back(detail::trim(std::string_view(t).substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (out.empty() && fields.size() == 3 && fields[2] == "label") continue;
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw InputError("labels line " + std::to_string(lineno) + ": expected model_a,model_b,label");
    }
    try {
      out.push_back({fields[0], fields[1], parse_label(fields[2])});
    } catch (const InputError& e) {
      throw InputError("labels line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw InputError("labels file contains no pairs");
  return out;
}

inline std::vector<LabeledPair> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open labels file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_labels_csv(ss.str());
}

inline std::string sweep_to_csv(const SweepResult& r) {
  std::string out = "threshold,precision,recall,f1\n";
  for (const auto& p : r.curve) {
    out += format_fixed6(p.threshold) + "," + format_fixed6(p.precision) + "," + format_fixed6(p.recall) +
           "," + format_fixed6(p.f1) + "\n";
  }
  return out;
}

inline std::string gap_rows_to_csv(const std::vector<GapRow>& rows) {
  std::string out = "rho,alignment,delta_mse,delta_corr\n";
  for (const auto& r : rows) {
    out += format_fixed6(r.rho) + "," + std::string(alignment_mode_name(r.mode)) + "," +
           format_fixed6(r.delta_mse) + "," + format_fixed6(r.delta_corr) + "\n";
  }
  return out;
}

}  // namespace ghostspec
