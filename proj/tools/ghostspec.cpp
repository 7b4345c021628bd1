// ghostspec command-line tool: extract, compare, matrix, classify, transform,
// family and eval.
//
// Exit codes: 0 success, 2 bad input (files, flags, formats), 3 numerical
// failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ghostspec/ghostspec.hpp"

namespace fs = std::filesystem;
using namespace ghostspec;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct GlobalOptions {
  SimilarityParams params;
  unsigned threads = 1;
  std::string metric = "both";
  std::string components = "both";
  std::string alignment = "posa";
};

// Settings file: a JSON object whose keys mirror the long flag names. Flags
// given on the command line win.
void load_defaults(const fs::path& path, GlobalOptions& g) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open defaults file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("defaults file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InputError("defaults file must hold a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "tau") g.params.tau = value.get<double>();
      else if (key == "k") g.params.steepness_k = value.get<double>();
      else if (key == "rho") g.params.rho = value.get<double>();
      else if (key == "threshold-mse") g.params.threshold_mse = value.get<double>();
      else if (key == "threshold-corr") g.params.threshold_corr = value.get<double>();
      else if (key == "components") g.components = value.get<std::string>();
      else if (key == "alignment") g.alignment = value.get<std::string>();
      else if (key == "metric") g.metric = value.get<std::string>();
      else if (key == "threads") g.threads = value.get<unsigned>();
      else throw InputError("defaults file: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("defaults file: wrong value type: " + std::string(e.what()));
  }
}

std::optional<fs::path> defaults_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--defaults" && i + 1 < argc) return fs::path(argv[i + 1]);
    if (a.rfind("--defaults=", 0) == 0) return fs::path(a.substr(11));
  }
  if (const char* env = std::getenv("GHOSTSPEC_DEFAULTS"); env && *env) return fs::path(env);
  return std::nullopt;
}

void finalize(GlobalOptions& g) {
  g.params.components = parse_components(g.components);
  g.params.alignment = parse_alignment_mode(g.alignment);
  g.params.validate();
  if (g.threads == 0) throw InputError("--threads must be >= 1");
}

void add_similarity_flags(CLI::App* cmd, GlobalOptions& g) {
  cmd->add_option("--tau", g.params.tau, "Sigmoid midpoint")->capture_default_str();
  cmd->add_option("--k", g.params.steepness_k, "Sigmoid steepness")->capture_default_str();
  cmd->add_option("--rho", g.params.rho, "Gap penalty per skipped layer")->capture_default_str();
  cmd->add_option("--components", g.components, "both|qk_only|vo_only")->capture_default_str();
  cmd->add_option("--alignment", g.alignment,
                  "posa|front_truncate|back_truncate|proportional_subsample")
      ->capture_default_str();
  cmd->add_option("--threshold-mse", g.params.threshold_mse)->capture_default_str();
  cmd->add_option("--threshold-corr", g.params.threshold_corr)->capture_default_str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("write failed for " + path.string());
}

std::string default_model_id(const fs::path& ckpt) {
  const std::string stem = ckpt.stem().string();
  if ((stem == "model" || stem.rfind("model.safetensors", 0) == 0) && ckpt.has_parent_path()) {
    const std::string parent = fs::absolute(ckpt).parent_path().filename().string();
    if (!parent.empty()) return parent;
  }
  return stem;
}

std::vector<ModelFingerprint> load_fingerprint_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no fingerprint files (*.json) in " + dir.string());
  std::vector<ModelFingerprint> fps;
  for (const auto& f : files) {
    try {
      fps.push_back(read_fingerprint(f));
    } catch (const InputError& e) {
      throw InputError(f.string() + ": " + e.what());
    }
  }
  return fps;
}

std::string fixed6(double v) { return format_fixed6(v); }

// ---------------------------------------------------------------------------

struct ExtractArgs {
  std::string checkpoint, out, variant = "attention_invariant", config, name_template, model_id;
  std::size_t head_dim = 0, num_heads = 0, num_kv_heads = 0;
};

int run_extract(const ExtractArgs& a, const GlobalOptions& g) {
  const auto variant = parse_variant(a.variant);
  const Checkpoint ckpt = Checkpoint::open(a.checkpoint);
  LayoutOverrides ov;
  if (!a.name_template.empty()) ov.name_template = a.name_template;
  if (a.head_dim) ov.head_dim = a.head_dim;
  if (a.num_heads) ov.num_q_heads = a.num_heads;
  if (a.num_kv_heads) ov.num_kv_heads = a.num_kv_heads;
  if (!a.config.empty()) {
    ov.config = ModelConfig::load(a.config);
  } else if (auto sidecar = find_config_sidecar(a.checkpoint)) {
    ov.config = ModelConfig::load(*sidecar);
  }
  const ModelLayout layout = discover_layout(ckpt, ov);
  for (const auto& w : layout.warnings) std::cerr << "warning: " << w << "\n";
  const std::string id = a.model_id.empty() ? default_model_id(a.checkpoint) : a.model_id;
  const auto fp = extract_fingerprint(ckpt, layout, variant, id, {g.threads});
  if (a.out.empty()) {
    std::cout << serialize_fingerprint(fp);
  } else {
    write_fingerprint(fp, a.out);
    std::cerr << "wrote " << a.out << " (" << fp.num_layers << " layers, " << variant_name(variant) << ")\n";
  }
  return 0;
}

MetricSelection selection(const std::string& metric) {
  if (metric == "both") return {true, true};
  if (metric == "mse") return {true, false};
  if (metric == "corr") return {false, true};
  throw InputError("--metric must be both|mse|corr");
}

struct CompareArgs {
  std::string a, b;
  bool json = false;
};

int run_compare(const CompareArgs& c, const GlobalOptions& g) {
  const auto fa = read_fingerprint(c.a);
  const auto fb = read_fingerprint(c.b);
  const auto rep = compare(fa, fb, g.params, selection(g.metric));
  if (c.json) {
    std::cout << report_to_json(rep).dump(2) << "\n";
    return 0;
  }
  std::cout << rep.model_a << " vs " << rep.model_b << "\n";
  if (rep.mse) {
    std::cout << "  mse  " << fixed6(rep.mse->score) << "  d_path " << fixed6(rep.mse->d_path)
              << "  threshold " << fixed6(g.params.threshold_mse) << "  "
              << (rep.verdict_mse() ? "related" : "unrelated") << "\n";
  }
  if (rep.corr) {
    std::cout << "  corr " << fixed6(rep.corr->score) << "  threshold " << fixed6(g.params.threshold_corr)
              << "  " << (rep.verdict_corr() ? "related" : "unrelated") << "\n";
  }
  return 0;
}

int run_classify(const CompareArgs& c, const GlobalOptions& g) {
  const auto rep = compare(read_fingerprint(c.a), read_fingerprint(c.b), g.params, selection(g.metric));
  if (rep.mse) std::cout << "mse " << (rep.verdict_mse() ? "related" : "unrelated") << "\n";
  if (rep.corr) std::cout << "corr " << (rep.verdict_corr() ? "related" : "unrelated") << "\n";
  return 0;
}

struct MatrixArgs {
  std::string dir, out_scores, out_distances;
};

int run_matrix(const MatrixArgs& m, const GlobalOptions& g) {
  const std::string metric = g.metric == "both" ? "mse" : g.metric;
  const auto fps = load_fingerprint_dir(m.dir);
  const auto mat = pairwise_matrix(fps, parse_metric(metric), g.params, g.threads);
  const std::string scores = matrix_to_csv(mat);
  if (m.out_scores.empty()) {
    std::cout << scores;
  } else {
    write_text(m.out_scores, scores);
  }
  if (!m.out_distances.empty()) write_text(m.out_distances, matrix_to_csv(mat, true));
  return 0;
}

struct TransformArgs {
  std::string checkpoint, out, name_template, config;
  std::vector<std::string> attacks;
  std::uint64_t seed = 0;
  double scale_low = 0.5, scale_high = 2.0;
  std::size_t head_dim = 0, num_heads = 0, num_kv_heads = 0;
};

int run_transform(const TransformArgs& t) {
  std::vector<AttackSpec> specs;
  for (const auto& name : t.attacks) {
    AttackSpec s;
    s.kind = parse_attack(name);
    s.seed = t.seed;
    s.scale_low = t.scale_low;
    s.scale_high = t.scale_high;
    s.head_dim = t.head_dim;
    specs.push_back(s);
  }
  const Checkpoint ckpt = Checkpoint::open(t.checkpoint);
  LayoutOverrides ov;
  if (!t.name_template.empty()) ov.name_template = t.name_template;
  if (t.head_dim) ov.head_dim = t.head_dim;
  if (t.num_heads) ov.num_q_heads = t.num_heads;
  if (t.num_kv_heads) ov.num_kv_heads = t.num_kv_heads;
  std::optional<fs::path> cfg_path;
  if (!t.config.empty()) {
    cfg_path = t.config;
  } else {
    cfg_path = find_config_sidecar(t.checkpoint);
  }
  if (cfg_path) ov.config = ModelConfig::load(*cfg_path);
  const ModelLayout layout = discover_layout(ckpt, ov);
  for (auto& s : specs) {
    if (s.head_dim == 0) s.head_dim = layout.head_dim;
    s.validate();
  }
  const fs::path out(t.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  attack_checkpoint(ckpt, layout, specs, out);
  // Keep the config next to the new checkpoint so later extraction sees the
  // same head structure.
  if (cfg_path && out.has_parent_path() && !fs::exists(out.parent_path() / "config.json")) {
    fs::copy_file(*cfg_path, out.parent_path() / "config.json");
  }
  std::cerr << "wrote " << t.out << "\n";
  return 0;
}

struct FamilyArgs {
  SyntheticFamilySpec spec;
  std::string out, perturbation = "none", dtype = "F32";
};

int run_family(FamilyArgs& f) {
  f.spec.perturbation = parse_perturbation(f.perturbation);
  const DType dtype = parse_dtype(f.dtype);
  const auto fam = generate_family(f.spec);
  const fs::path out(f.out);
  fam.base.write(out / "base", dtype);
  fam.derivative.write(out / "derived", dtype);
  std::cerr << "wrote " << (out / "base").string() << " (" << fam.base.layers.size() << " layers) and "
            << (out / "derived").string() << " (" << fam.derivative.layers.size() << " layers)\n";
  return 0;
}

struct EvalArgs {
  std::string labels, dir, report;
  std::vector<double> sweep_rho;
};

int run_eval(const EvalArgs& e, const GlobalOptions& g) {
  Corpus corpus;
  for (auto& fp : load_fingerprint_dir(e.dir)) corpus.add(std::move(fp));
  corpus.pairs = read_labels_csv(e.labels);
  corpus.validate();

  nlohmann::json summary;
  summary["schema_version"] = kReportSchemaVersion;
  summary["pairs"] = corpus.pairs.size();
  summary["params"] = {{"tau", g.params.tau}, {"k", g.params.steepness_k}, {"rho", g.params.rho},
                       {"components", components_name(g.params.components)},
                       {"alignment", alignment_mode_name(g.params.alignment)}};
  std::vector<std::pair<std::string, std::string>> files;

  nlohmann::json pair_rows = nlohmann::json::array();
  const auto mse_scores = score_pairs(corpus, Metric::mse, g.params);
  const auto corr_scores = score_pairs(corpus, Metric::corr, g.params);
  std::string scores_csv = "model_a,model_b,label,mse,corr\n";
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    const auto& p = corpus.pairs[i];
    scores_csv += p.model_a + "," + p.model_b + "," + std::string(label_name(p.label)) + "," +
                  fixed6(mse_scores[i].score) + "," + fixed6(corr_scores[i].score) + "\n";
  }
  files.emplace_back("scores.csv", scores_csv);

  for (const auto& [name, scores] : {std::pair{"mse", mse_scores}, std::pair{"corr", corr_scores}}) {
    const auto sweep = optimal_threshold(scores);
    summary[name] = {{"best_threshold", sweep.best_threshold},
                     {"best_f1", sweep.best_f1},
                     {"delta", discriminative_gap(scores)}};
    files.emplace_back(std::string("sweep_") + name + ".csv", sweep_to_csv(sweep));
    std::cout << name << ": best F1 " << fixed6(sweep.best_f1) << " at threshold "
              << fixed6(sweep.best_threshold) << ", gap " << fixed6(discriminative_gap(scores)) << "\n";
  }

  const auto ablation = alignment_ablation(corpus, g.params);
  files.emplace_back("alignment_ablation.csv", gap_rows_to_csv(ablation));
  std::cout << "alignment ablation\n" << gap_rows_to_csv(ablation);

  if (!e.sweep_rho.empty()) {
    const auto rows = posa_sensitivity_sweep(corpus, e.sweep_rho, g.params);
    files.emplace_back("rho_sweep.csv", gap_rows_to_csv(rows));
    std::cout << "rho sweep\n" << gap_rows_to_csv(rows);
  }

  if (!e.report.empty()) {
    const fs::path dir(e.report);
    fs::create_directories(dir);
    for (const auto& [name, text] : files) write_text(dir / name, text);
    write_text(dir / "summary.json", summary.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  GlobalOptions g;
  CLI::App app{"ghostspec: spectral fingerprints of transformer weights"};
  app.require_subcommand(1);
  std::string defaults_file;
  app.add_option("--defaults", defaults_file,
                 "JSON file of default flag values (also GHOSTSPEC_DEFAULTS)");
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str();

  try {
    if (auto p = defaults_path(argc, argv)) load_defaults(*p, g);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }

  ExtractArgs ex;
  auto* extract = app.add_subcommand("extract", "Fingerprint a checkpoint");
  extract->add_option("checkpoint", ex.checkpoint, "Checkpoint file or shard index")->required();
  extract->add_option("--out,-o", ex.out, "Fingerprint file (stdout if omitted)");
  extract->add_option("--variant", ex.variant, "attention_invariant|attention_naive|mlp")->capture_default_str();
  extract->add_option("--head-dim", ex.head_dim);
  extract->add_option("--num-heads", ex.num_heads);
  extract->add_option("--num-kv-heads", ex.num_kv_heads);
  extract->add_option("--config", ex.config, "Model config JSON (default: config.json beside the checkpoint)");
  extract->add_option("--template", ex.name_template, "Attention tensor name template with {i} and {p}");
  extract->add_option("--model-id", ex.model_id);

  CompareArgs cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Score two fingerprints");
  compare_cmd->add_option("a", cmp.a)->required();
  compare_cmd->add_option("b", cmp.b)->required();
  compare_cmd->add_option("--metric", g.metric, "both|mse|corr")->capture_default_str();
  compare_cmd->add_flag("--json", cmp.json, "Machine-readable report");
  add_similarity_flags(compare_cmd, g);

  CompareArgs cls;
  auto* classify_cmd = app.add_subcommand("classify", "Print related/unrelated verdicts");
  classify_cmd->add_option("a", cls.a)->required();
  classify_cmd->add_option("b", cls.b)->required();
  classify_cmd->add_option("--metric", g.metric, "both|mse|corr")->capture_default_str();
  add_similarity_flags(classify_cmd, g);

  MatrixArgs mx;
  auto* matrix = app.add_subcommand("matrix", "Pairwise score matrix over a directory of fingerprints");
  matrix->add_option("dir", mx.dir)->required();
  matrix->add_option("--metric", g.metric, "mse|corr")->capture_default_str();
  matrix->add_option("--out-scores", mx.out_scores);
  matrix->add_option("--out-distances", mx.out_distances);
  add_similarity_flags(matrix, g);

  TransformArgs tr;
  auto* transform = app.add_subcommand("transform", "Apply function-preserving weight attacks");
  transform->add_option("checkpoint", tr.checkpoint)->required();
  transform->add_option("--attack", tr.attacks, "qk_perhead|vo_blockdiag|mlp_permute|scale_uniform (repeatable)")
      ->required();
  transform->add_option("--seed", tr.seed)->capture_default_str();
  transform->add_option("--scale-low", tr.scale_low)->capture_default_str();
  transform->add_option("--scale-high", tr.scale_high)->capture_default_str();
  transform->add_option("--head-dim", tr.head_dim);
  transform->add_option("--num-heads", tr.num_heads);
  transform->add_option("--num-kv-heads", tr.num_kv_heads);
  transform->add_option("--config", tr.config);
  transform->add_option("--template", tr.name_template);
  transform->add_option("--out,-o", tr.out)->required();

  FamilyArgs fa;
  auto* family = app.add_subcommand("family", "Generate a synthetic base model and a derivative");
  family->add_option("--out,-o", fa.out)->required();
  family->add_option("--d-model", fa.spec.d_model)->capture_default_str();
  family->add_option("--layers", fa.spec.num_layers)->capture_default_str();
  family->add_option("--heads", fa.spec.num_heads)->capture_default_str();
  family->add_option("--head-dim", fa.spec.head_dim)->capture_default_str();
  family->add_option("--kv-heads", fa.spec.num_kv_heads, "0: same as --heads")->capture_default_str();
  family->add_option("--mlp-dim", fa.spec.mlp_dim, "0: 2 x d-model")->capture_default_str();
  family->add_option("--perturbation", fa.perturbation, "none|low_rank_update|layer_prune|layer_duplicate")
      ->capture_default_str();
  family->add_option("--magnitude", fa.spec.magnitude)->capture_default_str();
  family->add_option("--affected-layers", fa.spec.affected_layers)->capture_default_str();
  family->add_option("--seed", fa.spec.seed)->capture_default_str();
  family->add_option("--dtype", fa.dtype, "F64|F32|F16|BF16")->capture_default_str();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Evaluate a labeled corpus of fingerprints");
  eval->add_option("--labels", ev.labels, "CSV of model_a,model_b,related|unrelated")->required();
  eval->add_option("--fingerprints", ev.dir, "Directory of fingerprint files")->required();
  eval->add_option("--sweep-rho", ev.sweep_rho, "Comma-separated gap penalties")->delimiter(',');
  eval->add_option("--report", ev.report, "Directory for report files");
  add_similarity_flags(eval, g);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    finalize(g);
    if (*extract) return run_extract(ex, g);
    if (*compare_cmd) return run_compare(cmp, g);
    if (*classify_cmd) return run_classify(cls, g);
    if (*matrix) return run_matrix(mx, g);
    if (*transform) return run_transform(tr);
    if (*family) return run_family(fa);
    if (*eval) return run_eval(ev, g);
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
