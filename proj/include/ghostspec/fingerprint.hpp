#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <concepts>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"

#include "ghostspec/error.hpp"
#include "ghostspec/layout.hpp"
#include "ghostspec/matrix.hpp"
#include "ghostspec/spectral.hpp"

namespace ghostspec {

inline constexpr int kFingerprintFormatVersion = 1;

enum class FingerprintVariant { attention_invariant, attention_naive, mlp };

inline std::string_view variant_name(FingerprintVariant v) noexcept {
  switch (v) {
    case FingerprintVariant::attention_invariant: return "attention_invariant";
    case FingerprintVariant::attention_naive: return "attention_naive";
    case FingerprintVariant::mlp: return "mlp";
  }
  return "?";
}

inline FingerprintVariant parse_variant(std::string_view s) {
  if (s == "attention_invariant" || s == "invariant") return FingerprintVariant::attention_invariant;
  if (s == "attention_naive" || s == "naive") return FingerprintVariant::attention_naive;
  if (s == "mlp") return FingerprintVariant::mlp;
  throw InputError("unknown fingerprint variant '" + std::string(s) + "'");
}

/// Per-layer spectrum names, in storage order.
inline std::vector<std::string> component_names(FingerprintVariant v) {
  switch (v) {
    case FingerprintVariant::attention_invariant: return {"qk", "vo"};
    case FingerprintVariant::attention_naive: return {"q", "k", "v", "o"};
    case FingerprintVariant::mlp: return {"up", "down"};
  }
  return {};
}

struct LayerFingerprint {
  std::size_t layer_index = 0;
  std::vector<SingularSpectrum> spectra;  // ordered as component_names(variant)
  std::vector<double> eff_ranks;

  const SingularSpectrum& qk() const { return spectra.at(0); }
  const SingularSpectrum& vo() const { return spectra.at(1); }

  friend bool operator==(const LayerFingerprint&, const LayerFingerprint&) = default;
};

struct ModelFingerprint {
  std::string model_id;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  FingerprintVariant variant = FingerprintVariant::attention_invariant;
  int format_version = kFingerprintFormatVersion;
  std::vector<LayerFingerprint> layers;

  friend bool operator==(const ModelFingerprint&, const ModelFingerprint&) = default;
};

/// Mean of the top-K min-max normalized singular values per layer.
struct TrendSequences {
  std::vector<double> qk_means;
  std::vector<double> vo_means;

  std::size_t size() const noexcept { return qk_means.size(); }
};

struct InvariantProducts {
  WeightMatrix qk;  // Wqᵀ·Wk, d_model x d_model
  WeightMatrix vo;  // Wo·Wv, d_model x d_model
};

/// Repeat each head_dim-row block of a k/v projection `group` times, matching
/// how grouped-query attention shares kv heads at runtime.
inline WeightMatrix expand_kv_heads(const WeightMatrix& w, std::size_t head_dim, std::size_t group) {
  if (group <= 1) return w;
  if (head_dim == 0 || w.rows() % head_dim != 0) {
    throw InputError("kv projection rows " + std::to_string(w.rows()) +
                     " not divisible by head_dim " + std::to_string(head_dim));
  }
  const std::size_t heads = w.rows() / head_dim;
  WeightMatrix out(w.rows() * group, w.cols(), w.source());
  std::size_t dst_row = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t g = 0; g < group; ++g) {
      for (std::size_t r = 0; r < head_dim; ++r) {
        auto src = w.row(h * head_dim + r);
        std::copy(src.begin(), src.end(), out.row(dst_row++).begin());
      }
    }
  }
  return out;
}

/// Stored shapes: wq [q_out, d], wk/wv [kv_out, d], wo [d, q_out].
inline InvariantProducts invariant_products(const WeightMatrix& wq, const WeightMatrix& wk,
                                            const WeightMatrix& wv, const WeightMatrix& wo,
                                            const ModelLayout& layout) {
  const std::size_t d = wq.cols();
  if (wk.cols() != d || wv.cols() != d || wo.rows() != d) {
    throw InputError("invariant_products: d_model inconsistency among projections");
  }
  if (layout.hidden_dim != 0 && layout.hidden_dim != d) {
    throw InputError("invariant_products: projections have d_model " + std::to_string(d) +
                     " but layout says " + std::to_string(layout.hidden_dim));
  }
  if (wk.rows() != wv.rows()) throw InputError("invariant_products: k and v widths differ");
  if (wk.rows() == 0 || wq.rows() % wk.rows() != 0) {
    throw InputError("invariant_products: q width " + std::to_string(wq.rows()) +
                     " is not a multiple of kv width " + std::to_string(wk.rows()));
  }
  const std::size_t group = wq.rows() / wk.rows();
  const std::size_t head_dim = layout.head_dim ? layout.head_dim : wk.rows();
  const WeightMatrix wk_x = expand_kv_heads(wk, head_dim, group);
  const WeightMatrix wv_x = expand_kv_heads(wv, head_dim, group);
  if (wk_x.rows() != wq.rows() || wo.cols() != wq.rows()) {
    throw InputError("invariant_products: dimension mismatch after kv expansion");
  }
  return {matmul_transpose_a(wq, wk_x), matmul(wo, wv_x)};
}

inline void add_spectrum(LayerFingerprint& lf, const WeightMatrix& m) {
  lf.spectra.push_back(singular_values(m));
  lf.eff_ranks.push_back(effective_rank(lf.spectra.back()));
}

/// Any type exposing `WeightMatrix load_matrix(const std::string&) const`.
template <typename Source>
concept WeightSource = requires(const Source& s, const std::string& name) {
  { s.load_matrix(name) } -> std::convertible_to<WeightMatrix>;
};

template <WeightSource Source>
LayerFingerprint fingerprint_layer(const Source& src, const ModelLayout& layout, std::size_t layer,
                                   FingerprintVariant variant) {
  LayerFingerprint lf;
  lf.layer_index = layer;
  auto load = [&](std::string_view proj) { return src.load_matrix(layout.tensor_name(layer, proj)); };
  switch (variant) {
    case FingerprintVariant::attention_invariant: {
      const auto products = invariant_products(load("q"), load("k"), load("v"), load("o"), layout);
      add_spectrum(lf, products.qk);
      add_spectrum(lf, products.vo);
      break;
    }
    case FingerprintVariant::attention_naive:
      for (const char* p : kAttentionProjections) add_spectrum(lf, load(p));
      break;
    case FingerprintVariant::mlp:
      add_spectrum(lf, load("up"));
      add_spectrum(lf, load("down"));
      break;
  }
  return lf;
}

struct ExtractOptions {
  unsigned threads = 1;
};

/// Fingerprint every layer of a model. Layers are independent; with several
/// threads they are computed out of order and assembled by index, so the
/// result never depends on scheduling.
template <WeightSource Source>
ModelFingerprint extract_fingerprint(const Source& src, const ModelLayout& layout,
                                     FingerprintVariant variant, std::string model_id,
                                     const ExtractOptions& opts = {}) {
  ModelFingerprint fp;
  fp.model_id = std::move(model_id);
  fp.num_layers = layout.num_layers;
  fp.hidden_dim = layout.hidden_dim;
  fp.variant = variant;
  fp.layers.resize(layout.num_layers);

  std::vector<std::exception_ptr> errors(layout.num_layers);
  auto work = [&](std::size_t i) {
    try {
      fp.layers[i] = fingerprint_layer(src, layout, i, variant);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, layout.num_layers));
  if (threads == 1) {
    for (std::size_t i = 0; i < layout.num_layers; ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < layout.num_layers; i = next++) work(i);
      });
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    const std::string where = "layer " + std::to_string(i) + ": ";
    try {
      std::rethrow_exception(errors[i]);
    } catch (const NumericalError& e) {
      throw NumericalError(where + e.what());
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
  }
  return fp;
}

inline TrendSequences trend_sequences(const ModelFingerprint& fp) {
  if (fp.variant != FingerprintVariant::attention_invariant) {
    throw InputError("trend_sequences requires an attention_invariant fingerprint");
  }
  auto top_k_mean = [](const SingularSpectrum& s, double eff) {
    const ProcessedSpectrum full = truncate_normalize(s, s.size());
    const std::size_t k = std::min(rank_from_effective(eff), s.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += full.values[j];
    return sum / static_cast<double>(k);
  };
  TrendSequences t;
  for (const auto& layer : fp.layers) {
    t.qk_means.push_back(top_k_mean(layer.spectra.at(0), layer.eff_ranks.at(0)));
    t.vo_means.push_back(top_k_mean(layer.spectra.at(1), layer.eff_ranks.at(1)));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Fingerprint file: a JSON document, doubles printed with 17 significant
// digits so reading and re-writing reproduces the same bytes.

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void append_array(std::string& out, const std::vector<double>& values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += format_double(values[i]);
  }
  out += ']';
}

}  // namespace detail

inline std::string serialize_fingerprint(const ModelFingerprint& fp) {
  const auto names = component_names(fp.variant);
  std::string out;
  out += "{\n";
  out += "  \"format_version\": " + std::to_string(fp.format_version) + ",\n";
  out += "  \"model_id\": " + nlohmann::json(fp.model_id).dump() + ",\n";
  out += "  \"variant\": \"" + std::string(variant_name(fp.variant)) + "\",\n";
  out += "  \"num_layers\": " + std::to_string(fp.num_layers) + ",\n";
  out += "  \"hidden_dim\": " + std::to_string(fp.hidden_dim) + ",\n";
  out += "  \"layers\": [";
  for (std::size_t l = 0; l < fp.layers.size(); ++l) {
    const auto& layer = fp.layers[l];
    if (layer.spectra.size() != names.size() || layer.eff_ranks.size() != names.size()) {
      throw InputError("layer " + std::to_string(layer.layer_index) +
                       " has the wrong number of spectra for its variant");
    }
    out += l ? ",\n    {\n" : "\n    {\n";
    out += "      \"layer_index\": " + std::to_string(layer.layer_index);
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto& s = layer.spectra[c];
      out += ",\n      \"" + names[c] + "_shape\": [" + std::to_string(s.source_rows) + ", " +
             std::to_string(s.source_cols) + "]";
      out += ",\n      \"" + names[c] + "_sv\": ";
      detail::append_array(out, s.values);
      out += ",\n      \"" + names[c] + "_eff_rank\": " + detail::format_double(layer.eff_ranks[c]);
    }
    out += "\n    }";
  }
  out += fp.layers.empty() ? "]\n" : "\n  ]\n";
  out += "}\n";
  return out;
}

inline ModelFingerprint parse_fingerprint(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed fingerprint: parse error at byte " + std::to_string(e.byte) +
                     ": " + e.what());
  }
  auto fail = [](const std::string& what) -> InputError {
    return InputError("malformed fingerprint: " + what);
  };
  if (!doc.is_object()) throw fail("top level is not an object");
  ModelFingerprint fp;
  try {
    fp.format_version = doc.at("format_version").get<int>();
    if (fp.format_version > kFingerprintFormatVersion || fp.format_version < 1) {
      throw InputError("unsupported version " + std::to_string(fp.format_version) +
                       " (this build reads version " + std::to_string(kFingerprintFormatVersion) +
                       ")");
    }
    fp.model_id = doc.at("model_id").get<std::string>();
    fp.variant = parse_variant(doc.at("variant").get<std::string>());
    fp.num_layers = doc.at("num_layers").get<std::size_t>();
    fp.hidden_dim = doc.at("hidden_dim").get<std::size_t>();
    const auto names = component_names(fp.variant);
    for (const auto& jl : doc.at("layers")) {
      LayerFingerprint layer;
      layer.layer_index = jl.at("layer_index").get<std::size_t>();
      for (const auto& name : names) {
        SingularSpectrum s;
        const auto shape = jl.at(name + "_shape").get<std::vector<std::size_t>>();
        if (shape.size() != 2) throw fail(name + "_shape must have two entries");
        s.source_rows = shape[0];
        s.source_cols = shape[1];
        s.values = jl.at(name + "_sv").get<std::vector<double>>();
        if (s.values.empty()) throw fail(name + "_sv is empty");
        for (std::size_t j = 0; j < s.values.size(); ++j) {
          if (!(s.values[j] >= 0.0) || (j && s.values[j] > s.values[j - 1])) {
            throw fail(name + "_sv of layer " + std::to_string(layer.layer_index) +
                       " is not descending and non-negative");
          }
        }
        layer.eff_ranks.push_back(jl.at(name + "_eff_rank").get<double>());
        layer.spectra.push_back(std::move(s));
      }
      fp.layers.push_back(std::move(layer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(e.what());
  }
  if (fp.layers.size() != fp.num_layers) {
    throw fail("num_layers " + std::to_string(fp.num_layers) + " but " +
               std::to_string(fp.layers.size()) + " layer records");
  }
  for (std::size_t i = 0; i < fp.layers.size(); ++i) {
    if (fp.layers[i].layer_index != i) throw fail("layers are not contiguous from 0");
  }
  return fp;
}

inline void write_fingerprint(const ModelFingerprint& fp, const std::filesystem::path& path) {
  const std::string text = serialize_fingerprint(fp);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write fingerprint " + path.string());
  out << text;
}

inline ModelFingerprint read_fingerprint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open fingerprint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_fingerprint(ss.str());
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

}  // namespace ghostspec
