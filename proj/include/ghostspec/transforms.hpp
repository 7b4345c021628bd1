#pragma once

// Functionality-preserving reparameterizations of attention and MLP weights,
// plus small synthetic model families to exercise the full pipeline.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ghostspec/checkpoint.hpp"
#include "ghostspec/error.hpp"
#include "ghostspec/layout.hpp"
#include "ghostspec/matrix.hpp"

namespace ghostspec {

enum class AttackKind { qk_perhead, vo_blockdiag, mlp_permute, scale_uniform };

inline std::string_view attack_name(AttackKind k) noexcept {
  switch (k) {
    case AttackKind::qk_perhead: return "qk_perhead";
    case AttackKind::vo_blockdiag: return "vo_blockdiag";
    case AttackKind::mlp_permute: return "mlp_permute";
    case AttackKind::scale_uniform: return "scale_uniform";
  }
  return "?";
}

inline AttackKind parse_attack(std::string_view s) {
  for (auto k : {AttackKind::qk_perhead, AttackKind::vo_blockdiag, AttackKind::mlp_permute,
                 AttackKind::scale_uniform}) {
    if (s == attack_name(k)) return k;
  }
  throw InputError("unknown attack '" + std::string(s) +
                   "' (qk_perhead|vo_blockdiag|mlp_permute|scale_uniform)");
}

struct AttackSpec {
  AttackKind kind = AttackKind::qk_perhead;
  std::uint64_t seed = 0;
  double scale_low = 0.5;
  double scale_high = 2.0;
  std::size_t head_dim = 0;

  void validate() const {
    if (!(scale_low > 0.0) || !(scale_high >= scale_low) || !std::isfinite(scale_high)) {
      throw InputError("attack scale range must satisfy 0 < low <= high");
    }
    if ((kind == AttackKind::qk_perhead || kind == AttackKind::vo_blockdiag) && head_dim == 0) {
      throw InputError("attack head_dim must be positive");
    }
  }
};

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

inline WeightMatrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                    double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  WeightMatrix m(rows, cols);
  for (double& v : m.data()) v = normal(rng);
  return m;
}

/// n x k matrix with orthonormal columns (k <= n), by twice-applied modified
/// Gram-Schmidt on a Gaussian draw. Sign of the determinant is not fixed.
inline WeightMatrix random_orthonormal_columns(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  if (k > n) throw InputError("random_orthonormal_columns: k > n");
  WeightMatrix g = gaussian_matrix(k, n, rng);  // rows become the columns
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < k; ++i) {
      auto ri = g.row(i);
      for (std::size_t j = 0; j < i; ++j) {
        auto rj = g.row(j);
        double d = 0.0;
        for (std::size_t t = 0; t < n; ++t) d += ri[t] * rj[t];
        for (std::size_t t = 0; t < n; ++t) ri[t] -= d * rj[t];
      }
      double norm = 0.0;
      for (double v : ri) norm += v * v;
      norm = std::sqrt(norm);
      if (norm < 1e-12) throw NumericalError("degenerate Gaussian draw in orthogonalization");
      for (double& v : ri) v /= norm;
    }
  }
  return g.transposed();
}

inline WeightMatrix random_orthogonal(std::size_t n, std::mt19937_64& rng) {
  return random_orthonormal_columns(n, n, rng);
}

/// Gauss-Jordan inverse with partial pivoting; throws on (near-)singular input.
inline WeightMatrix invert(const WeightMatrix& m) {
  if (m.rows() != m.cols()) throw InputError("invert: matrix is not square");
  const std::size_t n = m.rows();
  WeightMatrix a = m;
  WeightMatrix inv = WeightMatrix::identity(n);
  const double scale = std::max(m.max_abs(), std::numeric_limits<double>::min());
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (std::abs(a(piv, c)) <= 1e-13 * scale) {
      throw InputError("transform block is singular and cannot be inverted");
    }
    if (piv != c) {
      for (std::size_t t = 0; t < n; ++t) {
        std::swap(a(c, t), a(piv, t));
        std::swap(inv(c, t), inv(piv, t));
      }
    }
    const double p = a(c, c);
    for (std::size_t t = 0; t < n; ++t) {
      a(c, t) /= p;
      inv(c, t) /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a(r, c);
      if (f == 0.0) continue;
      for (std::size_t t = 0; t < n; ++t) {
        a(r, t) -= f * a(c, t);
        inv(r, t) -= f * inv(c, t);
      }
    }
  }
  return inv;
}

namespace detail {

inline std::size_t head_count(const WeightMatrix& w, std::size_t head_dim, const char* what) {
  if (head_dim == 0 || w.rows() % head_dim != 0) {
    throw InputError(std::string(what) + " rows " + std::to_string(w.rows()) +
                     " not divisible by head_dim " + std::to_string(head_dim));
  }
  return w.rows() / head_dim;
}

// out[block h rows] = blocks[h] * w[block h rows]
inline WeightMatrix left_multiply_blocks(const WeightMatrix& w, const std::vector<WeightMatrix>& blocks,
                                         std::size_t head_dim) {
  WeightMatrix out(w.rows(), w.cols(), w.source());
  for (std::size_t h = 0; h < blocks.size(); ++h) {
    const auto& b = blocks[h];
    for (std::size_t r = 0; r < head_dim; ++r) {
      auto dst = out.row(h * head_dim + r);
      for (std::size_t k = 0; k < head_dim; ++k) {
        const double f = b(r, k);
        auto src = w.row(h * head_dim + k);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += f * src[c];
      }
    }
  }
  return out;
}

// out[:, block h cols] = w[:, block h cols] * blocks[h / group]
inline WeightMatrix right_multiply_blocks(const WeightMatrix& w, const std::vector<WeightMatrix>& blocks,
                                          std::size_t head_dim, std::size_t group) {
  WeightMatrix out(w.rows(), w.cols(), w.source());
  const std::size_t heads = w.cols() / head_dim;
  for (std::size_t r = 0; r < w.rows(); ++r) {
    auto src = w.row(r);
    auto dst = out.row(r);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto& b = blocks[h / group];
      for (std::size_t c = 0; c < head_dim; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < head_dim; ++k) s += src[h * head_dim + k] * b(k, c);
        dst[h * head_dim + c] = s;
      }
    }
  }
  return out;
}

inline std::vector<WeightMatrix> expand_blocks(const std::vector<WeightMatrix>& blocks, std::size_t group) {
  std::vector<WeightMatrix> out;
  for (const auto& b : blocks)
    for (std::size_t g = 0; g < group; ++g) out.push_back(b);
  return out;
}

inline double draw_scale(const AttackSpec& spec, std::mt19937_64& rng) {
  if (spec.scale_low == spec.scale_high) return spec.scale_low;
  std::uniform_real_distribution<double> u(spec.scale_low, spec.scale_high);
  return u(rng);
}

// Orthogonal times positive diagonal, the per-head query/key transform.
inline WeightMatrix rotation_scaling_block(std::size_t n, const AttackSpec& spec, std::mt19937_64& rng) {
  WeightMatrix r = random_orthogonal(n, rng);
  for (std::size_t c = 0; c < n; ++c) {
    const double s = draw_scale(spec, rng);
    for (std::size_t row = 0; row < n; ++row) r(row, c) *= s;
  }
  return r;
}

// Orthogonal * positive diagonal * orthogonal: a generic well-conditioned invertible block.
inline WeightMatrix invertible_block(std::size_t n, const AttackSpec& spec, std::mt19937_64& rng) {
  WeightMatrix left = rotation_scaling_block(n, spec, rng);
  return matmul(left, random_orthogonal(n, rng));
}

}  // namespace detail

/// Per-kv-head blocks P_h: wq' = P wq, wk' = (Pᵀ)⁻¹ wk. Query heads sharing a
/// kv head share its block, so the transform also holds for grouped queries.
inline std::pair<WeightMatrix, WeightMatrix> apply_qk_blocks(const WeightMatrix& wq, const WeightMatrix& wk,
                                                             const std::vector<WeightMatrix>& blocks,
                                                             std::size_t head_dim) {
  const std::size_t q_heads = detail::head_count(wq, head_dim, "query projection");
  const std::size_t kv_heads = detail::head_count(wk, head_dim, "key projection");
  if (wq.cols() != wk.cols()) throw InputError("query/key projections disagree on d_model");
  if (q_heads % kv_heads != 0) throw InputError("query heads not a multiple of key heads");
  if (blocks.size() != kv_heads) throw InputError("need one transform block per key head");
  std::vector<WeightMatrix> inv_t;
  for (const auto& b : blocks) {
    if (b.rows() != head_dim || b.cols() != head_dim) throw InputError("transform block has wrong size");
    inv_t.push_back(invert(b).transposed());
  }
  return {detail::left_multiply_blocks(wq, detail::expand_blocks(blocks, q_heads / kv_heads), head_dim),
          detail::left_multiply_blocks(wk, inv_t, head_dim)};
}

/// Per-kv-head blocks C_h: wv' = C wv, wo' = wo C⁻¹ (applied to every query
/// head's column block of wo).
inline std::pair<WeightMatrix, WeightMatrix> apply_vo_blocks(const WeightMatrix& wv, const WeightMatrix& wo,
                                                             const std::vector<WeightMatrix>& blocks,
                                                             std::size_t head_dim) {
  const std::size_t kv_heads = detail::head_count(wv, head_dim, "value projection");
  if (wo.cols() % head_dim != 0) throw InputError("output projection columns not divisible by head_dim");
  const std::size_t q_heads = wo.cols() / head_dim;
  if (q_heads % kv_heads != 0) throw InputError("output heads not a multiple of value heads");
  if (wo.rows() != wv.cols()) throw InputError("value/output projections disagree on d_model");
  if (blocks.size() != kv_heads) throw InputError("need one transform block per value head");
  std::vector<WeightMatrix> inv;
  for (const auto& b : blocks) {
    if (b.rows() != head_dim || b.cols() != head_dim) throw InputError("transform block has wrong size");
    inv.push_back(invert(b));
  }
  return {detail::left_multiply_blocks(wv, blocks, head_dim),
          detail::right_multiply_blocks(wo, inv, head_dim, q_heads / kv_heads)};
}

inline std::pair<WeightMatrix, WeightMatrix> apply_qk_attack(const WeightMatrix& wq, const WeightMatrix& wk,
                                                             const AttackSpec& spec) {
  spec.validate();
  if (spec.kind != AttackKind::qk_perhead && spec.kind != AttackKind::scale_uniform) {
    throw InputError("apply_qk_attack needs kind qk_perhead or scale_uniform");
  }
  const std::size_t head_dim = spec.kind == AttackKind::scale_uniform ? wk.rows() : spec.head_dim;
  const std::size_t kv_heads = detail::head_count(wk, head_dim, "key projection");
  auto rng = seeded_rng(spec.seed, 1);
  std::vector<WeightMatrix> blocks;
  if (spec.kind == AttackKind::scale_uniform) {
    const double s = detail::draw_scale(spec, rng);
    return {scaled(wq, s), scaled(wk, 1.0 / s)};
  }
  for (std::size_t h = 0; h < kv_heads; ++h) blocks.push_back(detail::rotation_scaling_block(head_dim, spec, rng));
  return apply_qk_blocks(wq, wk, blocks, head_dim);
}

inline std::pair<WeightMatrix, WeightMatrix> apply_vo_attack(const WeightMatrix& wv, const WeightMatrix& wo,
                                                             const AttackSpec& spec) {
  spec.validate();
  if (spec.kind != AttackKind::vo_blockdiag && spec.kind != AttackKind::scale_uniform) {
    throw InputError("apply_vo_attack needs kind vo_blockdiag or scale_uniform");
  }
  auto rng = seeded_rng(spec.seed, 2);
  if (spec.kind == AttackKind::scale_uniform) {
    const double s = detail::draw_scale(spec, rng);
    return {scaled(wv, s), scaled(wo, 1.0 / s)};
  }
  const std::size_t kv_heads = detail::head_count(wv, spec.head_dim, "value projection");
  std::vector<WeightMatrix> blocks;
  for (std::size_t h = 0; h < kv_heads; ++h) blocks.push_back(detail::invertible_block(spec.head_dim, spec, rng));
  return apply_vo_blocks(wv, wo, blocks, spec.head_dim);
}

inline std::vector<std::size_t> random_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = seeded_rng(seed, 3);
  // Fisher-Yates with an explicit draw so the result does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  return perm;
}

/// Rows of `w` reordered: out.row(i) = w.row(perm[i]).
inline WeightMatrix permute_rows(const WeightMatrix& w, const std::vector<std::size_t>& perm) {
  if (perm.size() != w.rows()) throw InputError("permutation length does not match rows");
  WeightMatrix out(w.rows(), w.cols(), w.source());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto src = w.row(perm[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline WeightMatrix permute_cols(const WeightMatrix& w, const std::vector<std::size_t>& perm) {
  if (perm.size() != w.cols()) throw InputError("permutation length does not match columns");
  WeightMatrix out(w.rows(), w.cols(), w.source());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t i = 0; i < perm.size(); ++i) out(r, i) = w(r, perm[i]);
  return out;
}

/// Same hidden-unit permutation on the up-projection rows and the
/// down-projection columns; the composed MLP map is unchanged.
inline std::pair<WeightMatrix, WeightMatrix> apply_mlp_permutation(const WeightMatrix& w_up,
                                                                   const WeightMatrix& w_down,
                                                                   std::uint64_t seed) {
  if (w_up.rows() != w_down.cols()) {
    throw InputError("MLP hidden dimension mismatch: up has " + std::to_string(w_up.rows()) +
                     " rows, down has " + std::to_string(w_down.cols()) + " columns");
  }
  const auto perm = random_permutation(w_up.rows(), seed);
  return {permute_rows(w_up, perm), permute_cols(w_down, perm)};
}

// ---------------------------------------------------------------------------
// Synthetic models

struct LayerWeights {
  WeightMatrix wq, wk, wv, wo;  // [q_out,d] [kv_out,d] [kv_out,d] [d,q_out]
  WeightMatrix up, down;        // [ff,d] [d,ff]
};

struct SyntheticModel {
  std::string id;
  std::size_t d_model = 0;
  std::size_t head_dim = 0;
  std::size_t num_heads = 0;
  std::size_t num_kv_heads = 0;
  std::vector<LayerWeights> layers;

  ModelLayout layout() const {
    ModelLayout l;
    l.num_layers = layers.size();
    l.hidden_dim = d_model;
    l.head_dim = head_dim;
    l.num_q_heads = num_heads;
    l.num_kv_heads = num_kv_heads;
    l.name_template = kKnownAttentionTemplates[0];
    l.mlp_template = kDefaultMlpTemplate;
    return l;
  }

  ModelConfig config() const {
    ModelConfig c;
    c.num_layers = layers.size();
    c.hidden_size = d_model;
    c.num_attention_heads = num_heads;
    c.num_key_value_heads = num_kv_heads;
    c.head_dim = head_dim;
    return c;
  }

  /// Named access using the default tensor naming.
  WeightMatrix load_matrix(const std::string& name) const {
    const ModelLayout l = layout();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& lw = layers[i];
      const std::pair<const char*, const WeightMatrix*> table[] = {
          {"q", &lw.wq}, {"k", &lw.wk}, {"v", &lw.wv}, {"o", &lw.wo}, {"up", &lw.up}, {"down", &lw.down}};
      for (const auto& [proj, m] : table) {
        if (l.tensor_name(i, proj) == name) return *m;
      }
    }
    throw InputError("unknown tensor '" + name + "'");
  }

  /// Writes `<dir>/model.safetensors` and `<dir>/config.json`.
  void write(const std::filesystem::path& dir, DType dtype = DType::F32) const {
    const ModelLayout l = layout();
    CheckpointWriter w;
    w.set_metadata("model_id", id);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& lw = layers[i];
      w.add(l.tensor_name(i, "q"), dtype, lw.wq);
      w.add(l.tensor_name(i, "k"), dtype, lw.wk);
      w.add(l.tensor_name(i, "v"), dtype, lw.wv);
      w.add(l.tensor_name(i, "o"), dtype, lw.wo);
      w.add(l.tensor_name(i, "up"), dtype, lw.up);
      w.add(l.tensor_name(i, "down"), dtype, lw.down);
    }
    std::filesystem::create_directories(dir);
    w.write(dir / "model.safetensors");
    std::ofstream cfg(dir / "config.json", std::ios::trunc);
    cfg << config().to_json().dump(2) << "\n";
  }
};

enum class Perturbation { none, low_rank_update, layer_prune, layer_duplicate };

inline Perturbation parse_perturbation(std::string_view s) {
  if (s == "none") return Perturbation::none;
  if (s == "low_rank_update") return Perturbation::low_rank_update;
  if (s == "layer_prune") return Perturbation::layer_prune;
  if (s == "layer_duplicate") return Perturbation::layer_duplicate;
  throw InputError("unknown perturbation '" + std::string(s) + "'");
}

struct SyntheticFamilySpec {
  std::size_t d_model = 64;
  std::size_t num_layers = 8;
  std::size_t num_heads = 4;
  std::size_t head_dim = 16;
  std::size_t num_kv_heads = 0;  // 0: same as num_heads
  std::size_t mlp_dim = 0;       // 0: 2 * d_model
  Perturbation perturbation = Perturbation::none;
  double magnitude = 0.0;           // low_rank_update: relative Frobenius size of the update
  std::size_t affected_layers = 0;  // layer_prune / layer_duplicate: how many layers
  std::uint64_t seed = 0;

  void validate() const {
    if (d_model == 0 || num_layers == 0 || num_heads == 0 || head_dim == 0) {
      throw InputError("family dimensions must be positive");
    }
    if (d_model != num_heads * head_dim) throw InputError("d_model must equal num_heads x head_dim");
    const std::size_t kv = num_kv_heads ? num_kv_heads : num_heads;
    if (num_heads % kv != 0) throw InputError("num_heads must be a multiple of num_kv_heads");
    if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) throw InputError("magnitude must be >= 0");
    if (perturbation == Perturbation::layer_prune && affected_layers >= num_layers) {
      throw InputError("cannot prune every layer");
    }
  }
};

namespace detail {

// U diag(s) Vᵀ with Haar-random U, V and a layer-specific decaying profile
// s_j = exp(-a (j/n)^g). Independent draws of plain Gaussian matrices share one
// limiting spectrum; the random profile gives each layer its own shape.
inline WeightMatrix structured_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const std::size_t n = std::min(rows, cols);
  std::uniform_real_distribution<double> decay(1.0, 6.0);
  std::uniform_real_distribution<double> shape(0.5, 2.0);
  const double a = decay(rng);
  const double g = shape(rng);
  std::vector<double> s(n);
  double sq = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    s[j] = std::exp(-a * std::pow(static_cast<double>(j) / static_cast<double>(n), g));
    sq += s[j] * s[j];
  }
  // Frobenius norm of a Gaussian matrix with entry variance 1/cols.
  const double norm = std::sqrt(static_cast<double>(rows) / std::max<double>(sq, 1e-300));
  const WeightMatrix u = random_orthonormal_columns(rows, n, rng);
  const WeightMatrix v = random_orthonormal_columns(cols, n, rng);
  WeightMatrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += u(r, j) * s[j] * v(c, j);
      out(r, c) = acc * norm;
    }
  return out;
}

inline void add_rank_one(WeightMatrix& w, double magnitude, std::mt19937_64& rng) {
  if (magnitude == 0.0) return;
  auto unit = [&rng](std::size_t n) {
    std::normal_distribution<double> normal;
    std::vector<double> v(n);
    double s = 0.0;
    for (double& x : v) {
      x = normal(rng);
      s += x * x;
    }
    s = std::sqrt(s);
    for (double& x : v) x /= s;
    return v;
  };
  const auto u = unit(w.rows());
  const auto v = unit(w.cols());
  const double amp = magnitude * w.frobenius_norm();
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) w(r, c) += amp * u[r] * v[c];
}

inline std::vector<std::size_t> pick_layers(std::size_t count, std::size_t total, std::uint64_t seed) {
  auto perm = random_permutation(total, seed ^ 0x9E3779B97F4A7C15ull);
  perm.resize(std::min(count, total));
  std::sort(perm.begin(), perm.end());
  return perm;
}

}  // namespace detail

/// Base model: every projection drawn with a random orthogonal basis and a
/// layer-specific spectral profile, scaled like 1/sqrt(d) Gaussian init.
inline SyntheticModel generate_base(const SyntheticFamilySpec& spec, std::string id = {}) {
  spec.validate();
  SyntheticModel m;
  m.id = id.empty() ? "synthetic-" + std::to_string(spec.seed) : std::move(id);
  m.d_model = spec.d_model;
  m.head_dim = spec.head_dim;
  m.num_heads = spec.num_heads;
  m.num_kv_heads = spec.num_kv_heads ? spec.num_kv_heads : spec.num_heads;
  const std::size_t q_out = m.num_heads * m.head_dim;
  const std::size_t kv_out = m.num_kv_heads * m.head_dim;
  const std::size_t ff = spec.mlp_dim ? spec.mlp_dim : 2 * spec.d_model;
  for (std::size_t i = 0; i < spec.num_layers; ++i) {
    auto rng = seeded_rng(spec.seed, 1000 + i);
    LayerWeights lw;
    lw.wq = detail::structured_matrix(q_out, spec.d_model, rng);
    lw.wk = detail::structured_matrix(kv_out, spec.d_model, rng);
    lw.wv = detail::structured_matrix(kv_out, spec.d_model, rng);
    lw.wo = detail::structured_matrix(spec.d_model, q_out, rng);
    lw.up = detail::structured_matrix(ff, spec.d_model, rng);
    lw.down = detail::structured_matrix(spec.d_model, ff, rng);
    m.layers.push_back(std::move(lw));
  }
  return m;
}

/// Adds a rank-one update of Frobenius size magnitude * |W| to every projection.
inline SyntheticModel perturb_low_rank(const SyntheticModel& base, double magnitude, std::uint64_t seed) {
  SyntheticModel m = base;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto rng = seeded_rng(seed, 5000 + i);
    auto& lw = m.layers[i];
    for (WeightMatrix* w : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.up, &lw.down}) {
      detail::add_rank_one(*w, magnitude, rng);
    }
  }
  return m;
}

inline SyntheticModel prune_layers(const SyntheticModel& base, const std::vector<std::size_t>& drop) {
  SyntheticModel m = base;
  m.layers.clear();
  for (std::size_t i = 0; i < base.layers.size(); ++i) {
    if (std::find(drop.begin(), drop.end(), i) == drop.end()) m.layers.push_back(base.layers[i]);
  }
  if (m.layers.empty()) throw InputError("pruning would remove every layer");
  return m;
}

/// Inserts a copy of each listed layer directly after the original.
inline SyntheticModel duplicate_layers(const SyntheticModel& base, const std::vector<std::size_t>& dup) {
  SyntheticModel m = base;
  m.layers.clear();
  for (std::size_t i = 0; i < base.layers.size(); ++i) {
    m.layers.push_back(base.layers[i]);
    if (std::find(dup.begin(), dup.end(), i) != dup.end()) m.layers.push_back(base.layers[i]);
  }
  return m;
}

struct SyntheticFamily {
  SyntheticModel base;
  SyntheticModel derivative;
};

inline SyntheticFamily generate_family(const SyntheticFamilySpec& spec) {
  SyntheticFamily fam;
  fam.base = generate_base(spec);
  switch (spec.perturbation) {
    case Perturbation::none:
      fam.derivative = fam.base;
      break;
    case Perturbation::low_rank_update:
      fam.derivative = perturb_low_rank(fam.base, spec.magnitude, spec.seed);
      break;
    case Perturbation::layer_prune:
      fam.derivative = prune_layers(fam.base, detail::pick_layers(spec.affected_layers, spec.num_layers, spec.seed));
      break;
    case Perturbation::layer_duplicate:
      fam.derivative =
          duplicate_layers(fam.base, detail::pick_layers(spec.affected_layers, spec.num_layers, spec.seed));
      break;
  }
  fam.derivative.id = fam.base.id + "-derived";
  return fam;
}

/// Applies one attack to every layer; per-layer randomness derives from the seed.
inline SyntheticModel apply_attack(const SyntheticModel& model, AttackSpec spec) {
  SyntheticModel m = model;
  if (spec.head_dim == 0) spec.head_dim = model.head_dim;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    AttackSpec layer_spec = spec;
    layer_spec.seed = spec.seed * 1000003ull + i;
    auto& lw = m.layers[i];
    switch (spec.kind) {
      case AttackKind::qk_perhead:
        std::tie(lw.wq, lw.wk) = apply_qk_attack(lw.wq, lw.wk, layer_spec);
        break;
      case AttackKind::vo_blockdiag:
        std::tie(lw.wv, lw.wo) = apply_vo_attack(lw.wv, lw.wo, layer_spec);
        break;
      case AttackKind::scale_uniform:
        std::tie(lw.wq, lw.wk) = apply_qk_attack(lw.wq, lw.wk, layer_spec);
        std::tie(lw.wv, lw.wo) = apply_vo_attack(lw.wv, lw.wo, layer_spec);
        break;
      case AttackKind::mlp_permute:
        std::tie(lw.up, lw.down) = apply_mlp_permutation(lw.up, lw.down, layer_spec.seed);
        break;
    }
  }
  return m;
}

/// Reads every tensor of a checkpoint, applies the attacks layer by layer and
/// writes a new single-file checkpoint. Untouched tensors are copied byte for
/// byte; transformed ones are re-encoded in their stored dtype.
inline void attack_checkpoint(const Checkpoint& ckpt, const ModelLayout& layout,
                              const std::vector<AttackSpec>& attacks, const std::filesystem::path& out) {
  std::map<std::string, WeightMatrix> changed;
  auto current = [&](const std::string& name) {
    auto it = changed.find(name);
    return it != changed.end() ? it->second : ckpt.load_matrix(name);
  };
  for (std::size_t i = 0; i < layout.num_layers; ++i) {
    for (AttackSpec spec : attacks) {
      if (spec.head_dim == 0) spec.head_dim = layout.head_dim;
      spec.seed = spec.seed * 1000003ull + i;
      const auto q = layout.tensor_name(i, "q"), k = layout.tensor_name(i, "k");
      const auto v = layout.tensor_name(i, "v"), o = layout.tensor_name(i, "o");
      switch (spec.kind) {
        case AttackKind::qk_perhead: {
          auto [a, b] = apply_qk_attack(current(q), current(k), spec);
          changed[q] = std::move(a);
          changed[k] = std::move(b);
          break;
        }
        case AttackKind::vo_blockdiag: {
          auto [a, b] = apply_vo_attack(current(v), current(o), spec);
          changed[v] = std::move(a);
          changed[o] = std::move(b);
          break;
        }
        case AttackKind::scale_uniform: {
          auto [a, b] = apply_qk_attack(current(q), current(k), spec);
          changed[q] = std::move(a);
          changed[k] = std::move(b);
          auto [c, d] = apply_vo_attack(current(v), current(o), spec);
          changed[v] = std::move(c);
          changed[o] = std::move(d);
          break;
        }
        case AttackKind::mlp_permute: {
          const auto up = layout.tensor_name(i, "up"), down = layout.tensor_name(i, "down");
          const auto gate = layout.tensor_name(i, "gate");
          if (!ckpt.contains(up) || !ckpt.contains(down)) {
            throw InputError("mlp_permute: layer " + std::to_string(i) + " has no up/down projection");
          }
          const WeightMatrix w_up = current(up);
          const auto perm = random_permutation(w_up.rows(), spec.seed);
          changed[up] = permute_rows(w_up, perm);
          changed[down] = permute_cols(current(down), perm);
          if (ckpt.contains(gate)) changed[gate] = permute_rows(current(gate), perm);
          break;
        }
      }
    }
  }
  CheckpointWriter w;
  for (const auto& [k, v] : ckpt.metadata()) w.set_metadata(k, v);
  for (const auto& rec : ckpt.records()) {
    auto it = changed.find(rec.name);
    if (it == changed.end()) {
      w.add_raw(rec.name, rec.dtype, rec.shape, ckpt.read_bytes(rec.name));
    } else {
      w.add(rec.name, rec.dtype, rec.shape, it->second.data());
    }
  }
  w.write(out);
}

// ---------------------------------------------------------------------------
// Minimal forward pass used to confirm that attacks preserve the model
// function: per layer x += attention(x), then x += down(relu(up(x))). No
// positional encoding, no normalization.

inline WeightMatrix attention_forward(const LayerWeights& lw, const WeightMatrix& x, std::size_t head_dim) {
  const WeightMatrix q = matmul(x, lw.wq.transposed());
  const WeightMatrix k = matmul(x, lw.wk.transposed());
  const WeightMatrix v = matmul(x, lw.wv.transposed());
  const std::size_t tokens = x.rows();
  const std::size_t q_heads = lw.wq.rows() / head_dim;
  const std::size_t kv_heads = lw.wk.rows() / head_dim;
  const std::size_t group = q_heads / kv_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  WeightMatrix ctx(tokens, lw.wq.rows());
  std::vector<double> w(tokens);
  for (std::size_t h = 0; h < q_heads; ++h) {
    const std::size_t kvh = h / group;
    for (std::size_t t = 0; t < tokens; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < tokens; ++s) {
        double dot = 0.0;
        for (std::size_t e = 0; e < head_dim; ++e) dot += q(t, h * head_dim + e) * k(s, kvh * head_dim + e);
        w[s] = dot * inv_sqrt;
        mx = std::max(mx, w[s]);
      }
      double z = 0.0;
      for (double& ws : w) {
        ws = std::exp(ws - mx);
        z += ws;
      }
      for (std::size_t e = 0; e < head_dim; ++e) {
        double acc = 0.0;
        for (std::size_t s = 0; s < tokens; ++s) acc += w[s] * v(s, kvh * head_dim + e);
        ctx(t, h * head_dim + e) = acc / z;
      }
    }
  }
  return matmul(ctx, lw.wo.transposed());
}

inline WeightMatrix model_forward(const SyntheticModel& m, WeightMatrix x) {
  for (const auto& lw : m.layers) {
    const WeightMatrix attn = attention_forward(lw, x, m.head_dim);
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += attn.data()[i];
    WeightMatrix hidden = matmul(x, lw.up.transposed());
    for (double& h : hidden.data()) h = std::max(0.0, h);
    const WeightMatrix mlp = matmul(hidden, lw.down.transposed());
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += mlp.data()[i];
  }
  return x;
}

}  // namespace ghostspec
