#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ghostspec/similarity.hpp"
#include "ghostspec/transforms.hpp"
#include "oracles/dcor_reference.hpp"

using namespace ghostspec;

namespace {

SingularSpectrum spectrum(std::vector<double> v) {
  SingularSpectrum s;
  s.values = std::move(v);
  s.source_rows = s.source_cols = s.values.size();
  return s;
}

// One layer per entry of `qk`, each with the shared vo spectrum.
ModelFingerprint hand_fingerprint(const std::vector<std::vector<double>>& qk, const std::vector<double>& vo) {
  ModelFingerprint fp;
  fp.model_id = "hand";
  fp.num_layers = qk.size();
  fp.hidden_dim = vo.size();
  for (std::size_t i = 0; i < qk.size(); ++i) {
    LayerFingerprint l;
    l.layer_index = i;
    l.spectra = {spectrum(qk[i]), spectrum(vo)};
    l.eff_ranks = {effective_rank(l.spectra[0]), effective_rank(l.spectra[1])};
    fp.layers.push_back(l);
  }
  return fp;
}

ModelFingerprint synthetic(std::size_t layers, std::uint64_t seed, const std::string& id = "m") {
  SyntheticFamilySpec s;
  s.d_model = 32;
  s.num_heads = 4;
  s.head_dim = 8;
  s.num_layers = layers;
  s.seed = seed;
  const auto m = generate_base(s, id);
  return extract_fingerprint(m, m.layout(), FingerprintVariant::attention_invariant, id);
}

oracle::Samples as_samples(const std::vector<std::array<double, 2>>& v) {
  oracle::Samples s;
  for (const auto& x : v) s.push_back({x[0], x[1]});
  return s;
}

const double kCeiling = 1.0 - 1.0 / (1.0 + std::exp(3.71));

}  // namespace

TEST(Sigmoid, MidpointIsHalf) { EXPECT_DOUBLE_EQ(sigmoid_score(0.00371, 0.00371, 1000.0), 0.5); }

TEST(Sigmoid, CeilingMatchesClosedForm) {
  EXPECT_DOUBLE_EQ(sigmoid_ceiling(kDefaultSigmoidMidpoint, kDefaultSteepness), kCeiling);
  EXPECT_NEAR(kCeiling, 0.9761, 5e-5);  // the ceiling reported throughout the evaluation tables
}

TEST(Sigmoid, FarDistanceIsNearZero) {
  const double expected = std::exp(-6.29) / (1.0 + std::exp(-6.29));
  EXPECT_NEAR(sigmoid_score(0.01, kDefaultSigmoidMidpoint, kDefaultSteepness), expected, 1e-15);
  EXPECT_NEAR(expected, 0.00185, 1e-5);
}

// Strictly decreasing until the tail underflows, then flat at 0.
TEST(Sigmoid, MonotoneDecreasingAndInUnitInterval) {
  double prev = 2.0;
  for (double d = 0.0; d < 0.05; d += 0.0005) {
    const double s = sigmoid_score(d, kDefaultSigmoidMidpoint, kDefaultSteepness);
    if (d < 0.02) {
      EXPECT_LT(s, prev);
    } else {
      EXPECT_LE(s, prev);
    }
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    prev = s;
  }
}

TEST(Classify, StrictInequality) {
  EXPECT_TRUE(classify(0.9761, 0.85));
  EXPECT_FALSE(classify(0.85, 0.85));
  EXPECT_FALSE(classify(0.0, 0.61));
}

TEST(LayerDistance, ZeroDiagonalForSelf) {
  const auto fp = synthetic(4, 1);
  const auto d = layer_distance_matrix(fp, fp);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(d(i, i), 0.0);
}

TEST(LayerDistance, HandComputedEntries) {
  // (3,2,1) vs (3,1,1): both effective ranks lie in (2,3), so r = 2 and the
  // normalized top pairs are both (1, 0).
  EXPECT_EQ(layer_distance_matrix(hand_fingerprint({{3, 2, 1}}, {2, 1, 1}),
                                  hand_fingerprint({{3, 1, 1}}, {2, 1, 1}))(0, 0),
            0.0);
  // (4,3,2,1) vs (4,1,1,1): effective ranks about 3.6 and 3.2, so r = 3;
  // (1, 0.5, 0) vs (1, 0, 0) gives 0.25 / 3, averaged with a zero vo term.
  const auto d = layer_distance_matrix(hand_fingerprint({{4, 3, 2, 1}}, {2, 1, 1, 1}),
                                       hand_fingerprint({{4, 1, 1, 1}}, {2, 1, 1, 1}));
  EXPECT_NEAR(d(0, 0), 0.25 / 3 / 2, 1e-15);
}

TEST(LayerDistance, QkOnlyEqualsBothWhenVoIdentical) {
  const auto a = hand_fingerprint({{4, 3, 2, 1}, {5, 1, 1, 0.5}}, {2, 1, 1, 1});
  const auto b = hand_fingerprint({{4, 1, 1, 1}, {3, 3, 1, 1}, {2, 2, 2, 1}}, {2, 1, 1, 1});
  const auto both = layer_distance_matrix(a, b, ProductComponents::both);
  const auto qk = layer_distance_matrix(a, b, ProductComponents::qk_only);
  const auto vo = layer_distance_matrix(a, b, ProductComponents::vo_only);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(both(i, j), qk(i, j) / 2, 1e-16);
      EXPECT_EQ(vo(i, j), 0.0);
    }
}

TEST(LayerDistance, VariantMismatchIsError) {
  auto a = synthetic(2, 1);
  auto b = a;
  b.variant = FingerprintVariant::mlp;
  EXPECT_THROW(layer_distance_matrix(a, b), InputError);
  ModelFingerprint empty = a;
  empty.layers.clear();
  EXPECT_THROW(layer_distance_matrix(a, empty), InputError);
}

TEST(Mse, SelfSimilarityIsExactlyTheCeiling) {
  const auto fp = synthetic(6, 3);
  const auto r = ghostspec_mse(fp, fp);
  EXPECT_EQ(r.d_path, 0.0);
  EXPECT_EQ(r.score, sigmoid_ceiling(kDefaultSigmoidMidpoint, kDefaultSteepness));
}

TEST(Mse, SymmetricInArguments) {
  const auto a = synthetic(6, 1), b = synthetic(9, 2);
  EXPECT_EQ(ghostspec_mse(a, b).score, ghostspec_mse(b, a).score);
  EXPECT_EQ(ghostspec_corr(a, b).score, ghostspec_corr(b, a).score);
  SimilarityParams p;
  p.alignment = AlignmentMode::proportional_subsample;
  EXPECT_EQ(ghostspec_mse(a, b, p).score, ghostspec_mse(b, a, p).score);
}

TEST(Mse, RejectsInvalidParams) {
  const auto fp = synthetic(2, 1);
  SimilarityParams p;
  p.steepness_k = 0.0;
  EXPECT_THROW(ghostspec_mse(fp, fp, p), InputError);
  p = {};
  p.rho = -0.1;
  EXPECT_THROW(ghostspec_mse(fp, fp, p), InputError);
}

// A duplicated layer lets POSA skip the copy, so the verdict stays related.
TEST(Mse, DuplicatedLayerKeepsRelatedVerdict) {
  SyntheticFamilySpec s;
  s.d_model = 32;
  s.num_heads = 4;
  s.head_dim = 8;
  s.num_layers = 12;
  s.seed = 5;
  const auto base = generate_base(s, "b");
  const auto fa = extract_fingerprint(base, base.layout(), FingerprintVariant::attention_invariant, "b");
  for (std::size_t dup : {0u, 5u, 11u}) {
    const auto d = duplicate_layers(base, {dup});
    const auto fb = extract_fingerprint(d, d.layout(), FingerprintVariant::attention_invariant, "d");
    const auto r = ghostspec_mse(fa, fb);
    EXPECT_EQ(r.d_path, 0.0) << dup;
    EXPECT_TRUE(classify(r.score, kDefaultMseThreshold));
  }
}

TEST(DistanceCorrelation, IdentityAndAffineMaps) {
  const std::vector<double> x{0.3, 1.2, -0.7, 2.5, 0.0, 1.1};
  std::vector<double> y;
  for (double v : x) y.push_back(3 * v + 7);
  EXPECT_NEAR(distance_correlation(x, x), 1.0, 1e-12);
  EXPECT_NEAR(distance_correlation(x, y), 1.0, 1e-12);
}

TEST(DistanceCorrelation, MatchesThreeSumReference) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<std::array<double, 2>> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = {g(rng), g(rng)};
      y[i] = {x[i][0] * 0.5 + g(rng), g(rng)};
    }
    EXPECT_NEAR(distance_correlation(x, y), oracle::distance_correlation(as_samples(x), as_samples(y)), 1e-12);
  }
}

TEST(DistanceCorrelation, EightSamplePairAgainstReference) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> x(8), y(8);
  oracle::Samples sx, sy;
  for (std::size_t i = 0; i < 8; ++i) {
    x[i] = u(rng);
    y[i] = u(rng);
    sx.push_back({x[i]});
    sy.push_back({y[i]});
  }
  EXPECT_NEAR(distance_correlation(x, y), oracle::distance_correlation(sx, sy), 1e-12);
}

TEST(DistanceCorrelation, DegenerateAndInvalidInputs) {
  EXPECT_EQ(distance_correlation(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), 0.0);
  EXPECT_THROW(distance_correlation(std::vector<double>{1}, std::vector<double>{1}), InputError);
  EXPECT_THROW(distance_correlation(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), InputError);
}

TEST(Corr, SelfIsOne) {
  const auto fp = synthetic(8, 4);
  EXPECT_NEAR(ghostspec_corr(fp, fp).score, 1.0, 1e-12);
}

TEST(Corr, InvariantToAffineRescaledTrends) {
  const auto fp = synthetic(10, 6);
  const auto t = trend_sequences(fp);
  // Equal lengths align on the diagonal, so the samples pair up index-wise.
  const auto aligned = align_trend_sequences(t, t);
  std::vector<std::array<double, 2>> rescaled;
  for (const auto& s : aligned.b) rescaled.push_back({2.5 * s[0] + 0.1, 2.5 * s[1] + 0.1});
  EXPECT_NEAR(distance_correlation(aligned.a, rescaled), 1.0, 1e-12);
}

TEST(Scores, AlwaysInUnitInterval) {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto a = synthetic(4 + seed, seed), b = synthetic(10, seed + 100);
    const auto r = compare(a, b);
    EXPECT_GE(r.mse->score, 0.0);
    EXPECT_LE(r.mse->score, 1.0);
    EXPECT_GE(r.corr->score, 0.0);
    EXPECT_LE(r.corr->score, 1.0);
  }
}

TEST(Naive, SelfDistanceZeroAndHandValue) {
  ModelFingerprint a;
  a.variant = FingerprintVariant::attention_naive;
  a.num_layers = 1;
  LayerFingerprint l;
  for (int p = 0; p < 4; ++p) l.spectra.push_back(spectrum({4, 3, 2, 1}));
  for (const auto& s : l.spectra) l.eff_ranks.push_back(effective_rank(s));
  a.layers = {l};
  EXPECT_EQ(naive_projection_distance(a, a), 0.0);
  auto b = a;
  b.layers[0].spectra[2] = spectrum({4, 1, 1, 1});
  b.layers[0].eff_ranks[2] = effective_rank(b.layers[0].spectra[2]);
  // One projection differs by 0.25 / 3; average over 4 projections and 1 layer.
  EXPECT_NEAR(naive_projection_distance(a, b), 0.25 / 3 / 4, 1e-15);
  auto deeper = a;
  deeper.layers.push_back(l);
  deeper.num_layers = 2;
  EXPECT_THROW(naive_projection_distance(a, deeper), InputError);
}

TEST(Naive, AttackMovesNaiveDistanceButNotInvariantOne) {
  SyntheticFamilySpec s;
  s.d_model = 32;
  s.num_heads = 4;
  s.head_dim = 8;
  s.num_layers = 4;
  s.seed = 21;
  const auto m = generate_base(s);
  AttackSpec qk;
  qk.kind = AttackKind::qk_perhead;
  qk.seed = 2;
  AttackSpec vo = qk;
  vo.kind = AttackKind::vo_blockdiag;
  const auto attacked = apply_attack(apply_attack(m, qk), vo);
  const auto na = extract_fingerprint(m, m.layout(), FingerprintVariant::attention_naive, "a");
  const auto nb = extract_fingerprint(attacked, m.layout(), FingerprintVariant::attention_naive, "b");
  EXPECT_GT(naive_projection_distance(na, nb), 1e-4);
  const auto ia = extract_fingerprint(m, m.layout(), FingerprintVariant::attention_invariant, "a");
  const auto ib = extract_fingerprint(attacked, m.layout(), FingerprintVariant::attention_invariant, "b");
  EXPECT_LT(ghostspec_mse(ia, ib).d_path, 1e-9);
}

TEST(Report, JsonCarriesRecomputableFields) {
  const auto a = synthetic(5, 1, "a"), b = synthetic(7, 2, "b");
  const auto rep = compare(a, b);
  const auto j = report_to_json(rep);
  EXPECT_EQ(j["schema_version"], 1);
  EXPECT_EQ(j["model_a"], "a");
  const double d = j["mse"]["d_path"];
  EXPECT_EQ(j["mse"]["score"].get<double>(), sigmoid_score(d, j["params"]["tau"], j["params"]["k"]));
  EXPECT_EQ(j["mse"]["verdict"] == "related", j["mse"]["score"].get<double>() > 0.85);
  EXPECT_EQ(j["corr"]["verdict"] == "related", j["corr"]["score"].get<double>() > 0.61);
  EXPECT_EQ(j["mse"]["alignment"]["pairs"].size(), 5u);
}

TEST(Report, MetricSelectionOmitsOtherMetric) {
  const auto a = synthetic(3, 1);
  const auto j = report_to_json(compare(a, a, {}, {true, false}));
  EXPECT_TRUE(j.contains("mse"));
  EXPECT_FALSE(j.contains("corr"));
}
