#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ghostspec/checkpoint.hpp"
#include "ghostspec/error.hpp"

namespace ghostspec {

inline constexpr std::size_t kDefaultHeadDim = 128;

/// Fields read from a model-config sidecar (HF-style config.json).
struct ModelConfig {
  std::optional<std::size_t> num_layers;
  std::optional<std::size_t> hidden_size;
  std::optional<std::size_t> num_attention_heads;
  std::optional<std::size_t> num_key_value_heads;
  std::optional<std::size_t> head_dim;

  static ModelConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open model config " + path.string());
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("model config " + path.string() + " is not valid JSON: " + e.what());
    }
    auto get = [&](std::initializer_list<const char*> keys) -> std::optional<std::size_t> {
      for (const char* k : keys) {
        if (doc.contains(k) && doc[k].is_number_integer() && doc[k].get<long long>() > 0) {
          return doc[k].get<std::size_t>();
        }
      }
      return std::nullopt;
    };
    ModelConfig cfg;
    cfg.num_layers = get({"num_layers", "num_hidden_layers"});
    cfg.hidden_size = get({"hidden_size"});
    cfg.num_attention_heads = get({"num_attention_heads"});
    cfg.num_key_value_heads = get({"num_key_value_heads"});
    cfg.head_dim = get({"head_dim"});
    return cfg;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    if (num_layers) j["num_layers"] = *num_layers;
    if (hidden_size) j["hidden_size"] = *hidden_size;
    if (num_attention_heads) j["num_attention_heads"] = *num_attention_heads;
    if (num_key_value_heads) j["num_key_value_heads"] = *num_key_value_heads;
    if (head_dim) j["head_dim"] = *head_dim;
    return j;
  }
};

/// `config.json` next to the checkpoint, if there is one.
inline std::optional<std::filesystem::path> find_config_sidecar(
    const std::filesystem::path& checkpoint_path) {
  auto candidate = checkpoint_path.parent_path() / "config.json";
  if (candidate != checkpoint_path && std::filesystem::exists(candidate)) return candidate;
  return std::nullopt;
}

struct LayoutOverrides {
  std::optional<std::string> name_template;  // must contain {i} and {p}
  std::optional<std::string> mlp_template;
  std::optional<std::size_t> head_dim;
  std::optional<std::size_t> num_q_heads;
  std::optional<std::size_t> num_kv_heads;
  std::optional<ModelConfig> config;
};

struct ModelLayout {
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::size_t head_dim = 0;
  std::size_t num_q_heads = 0;
  std::size_t num_kv_heads = 0;
  std::string name_template;
  std::string mlp_template;
  std::vector<std::string> warnings;

  std::size_t group_size() const noexcept { return num_kv_heads ? num_q_heads / num_kv_heads : 0; }

  /// Tensor name for `proj` ("q", "k", "v", "o", "up", "down", ...) in layer `layer`.
  std::string tensor_name(std::size_t layer, std::string_view proj) const {
    const bool is_mlp = proj == "up" || proj == "down" || proj == "gate";
    return expand_template(is_mlp ? mlp_template : name_template, layer, proj);
  }

  static std::string expand_template(std::string_view tmpl, std::size_t layer,
                                     std::string_view proj) {
    std::string out;
    out.reserve(tmpl.size() + 8);
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      if (tmpl.substr(i, 3) == "{i}") {
        out += std::to_string(layer);
        i += 2;
      } else if (tmpl.substr(i, 3) == "{p}") {
        out += proj;
        i += 2;
      } else {
        out.push_back(tmpl[i]);
      }
    }
    return out;
  }
};

inline const std::array<const char*, 2> kKnownAttentionTemplates = {
    "model.layers.{i}.self_attn.{p}_proj.weight",
    "layers.{i}.attention.w{p}.weight",
};
inline constexpr const char* kDefaultMlpTemplate = "model.layers.{i}.mlp.{p}_proj.weight";
inline constexpr std::array<const char*, 4> kAttentionProjections = {"q", "k", "v", "o"};

namespace detail {

inline std::size_t count_complete_layers(const Checkpoint& ckpt, const std::string& tmpl) {
  std::size_t layer = 0;
  for (;; ++layer) {
    for (const char* p : kAttentionProjections) {
      if (!ckpt.contains(ModelLayout::expand_template(tmpl, layer, p))) return layer;
    }
  }
}

}  // namespace detail

/// Resolve layer count, hidden size and head structure. Depends only on
/// name lookups, never on the order tensors appear in the file.
inline ModelLayout discover_layout(const Checkpoint& ckpt, const LayoutOverrides& overrides = {}) {
  ModelLayout layout;
  layout.mlp_template = overrides.mlp_template.value_or(kDefaultMlpTemplate);
  if (overrides.name_template) {
    const auto& t = *overrides.name_template;
    if (t.find("{i}") == std::string::npos || t.find("{p}") == std::string::npos) {
      throw InputError("name template '" + t + "' must contain {i} and {p}");
    }
    layout.name_template = t;
    layout.num_layers = detail::count_complete_layers(ckpt, t);
  } else {
    for (const char* t : kKnownAttentionTemplates) {
      const std::size_t n = detail::count_complete_layers(ckpt, t);
      if (n > 0) {
        layout.name_template = t;
        layout.num_layers = n;
        break;
      }
    }
    if (layout.name_template.empty()) layout.name_template = kKnownAttentionTemplates[0];
  }
  if (layout.num_layers == 0) {
    throw InputError("no attention layers found using template '" + layout.name_template + "'");
  }

  // Report a partially present layer where the consecutive prefix stopped.
  {
    const std::size_t stop = layout.num_layers;
    std::vector<std::string> missing;
    bool any_present = false;
    for (const char* p : kAttentionProjections) {
      if (ckpt.contains(layout.tensor_name(stop, p))) {
        any_present = true;
      } else {
        missing.push_back(p);
      }
    }
    if (!any_present && ckpt.contains(layout.tensor_name(stop + 1, "q"))) any_present = true;
    if (any_present) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ",") + m;
      layout.warnings.push_back("layer " + std::to_string(stop) + " is incomplete (missing " +
                                list + "); using the first " + std::to_string(stop) + " layers");
    }
  }

  const auto& q0 = ckpt.record(layout.tensor_name(0, "q"));
  const auto& k0 = ckpt.record(layout.tensor_name(0, "k"));
  if (q0.shape.size() != 2 || k0.shape.size() != 2) {
    throw InputError("attention projections must be 2-D");
  }
  layout.hidden_dim = q0.shape[1];
  const std::size_t q_out = q0.shape[0];
  const std::size_t kv_out = k0.shape[0];

  for (std::size_t i = 0; i < layout.num_layers; ++i) {
    const auto& q = ckpt.record(layout.tensor_name(i, "q"));
    const auto& k = ckpt.record(layout.tensor_name(i, "k"));
    const auto& v = ckpt.record(layout.tensor_name(i, "v"));
    const auto& o = ckpt.record(layout.tensor_name(i, "o"));
    for (const auto* r : {&q, &k, &v, &o}) {
      if (r->shape.size() != 2) throw InputError("tensor '" + r->name + "' is non-2-D");
    }
    if (q.shape[1] != layout.hidden_dim || k.shape[1] != layout.hidden_dim ||
        v.shape[1] != layout.hidden_dim || o.shape[0] != layout.hidden_dim) {
      throw InputError("inconsistent hidden_dim at layer " + std::to_string(i) + " (expected " +
                       std::to_string(layout.hidden_dim) + ")");
    }
    if (q.shape[0] != q_out || k.shape[0] != kv_out || v.shape[0] != kv_out ||
        o.shape[1] != q_out) {
      throw InputError("inconsistent projection widths at layer " + std::to_string(i));
    }
  }

  const ModelConfig cfg = overrides.config.value_or(ModelConfig{});
  if (cfg.hidden_size && *cfg.hidden_size != layout.hidden_dim) {
    throw InputError("config hidden_size " + std::to_string(*cfg.hidden_size) +
                     " disagrees with q-projection width " + std::to_string(layout.hidden_dim));
  }
  if (cfg.num_layers && *cfg.num_layers != layout.num_layers) {
    throw InputError("config num_layers " + std::to_string(*cfg.num_layers) + " but " +
                     std::to_string(layout.num_layers) + " complete layers were found");
  }

  std::optional<std::size_t> nq = overrides.num_q_heads ? overrides.num_q_heads
                                                        : cfg.num_attention_heads;
  std::optional<std::size_t> nkv = overrides.num_kv_heads ? overrides.num_kv_heads
                                                          : cfg.num_key_value_heads;
  std::optional<std::size_t> hd = overrides.head_dim ? overrides.head_dim : cfg.head_dim;

  if (nq) {
    if (*nq == 0 || q_out % *nq != 0) {
      throw InputError("q-projection rows " + std::to_string(q_out) +
                       " not divisible by num_q_heads " + std::to_string(*nq));
    }
    if (!hd) hd = q_out / *nq;
  }
  if (!hd) hd = kDefaultHeadDim;
  if (*hd == 0) throw InputError("head_dim must be positive");

  if (q_out % *hd != 0 || kv_out % *hd != 0) {
    if (!nq && !nkv && q_out == kv_out) {
      // Plain multi-head attention with unknown head size: one head spanning the
      // projection is enough, since products never need head boundaries there.
      layout.warnings.push_back("projection width " + std::to_string(q_out) +
                                " not divisible by head_dim " + std::to_string(*hd) +
                                "; treating attention as a single head");
      hd = q_out;
    } else {
      throw InputError("cannot infer head structure: projection widths " + std::to_string(q_out) +
                       "/" + std::to_string(kv_out) + " vs head_dim " + std::to_string(*hd) +
                       "; supply head_dim or a model config");
    }
  }
  layout.head_dim = *hd;
  layout.num_q_heads = nq.value_or(q_out / *hd);
  layout.num_kv_heads = nkv.value_or(kv_out / *hd);

  if (layout.num_q_heads * layout.head_dim != q_out) {
    throw InputError("num_q_heads x head_dim does not match q-projection rows");
  }
  if (layout.num_kv_heads == 0 || layout.num_kv_heads * layout.head_dim != kv_out) {
    throw InputError("num_kv_heads x head_dim does not match k/v-projection rows");
  }
  if (layout.num_q_heads % layout.num_kv_heads != 0) {
    throw InputError("num_q_heads " + std::to_string(layout.num_q_heads) +
                     " is not a multiple of num_kv_heads " + std::to_string(layout.num_kv_heads));
  }
  return layout;
}

}  // namespace ghostspec
