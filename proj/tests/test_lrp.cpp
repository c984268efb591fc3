#include <gtest/gtest.h>

#include "support.hpp"

using namespace relprop;
using namespace relprop::testing;

namespace {

const RuleConfig kEps0 = RuleConfig::make_epsilon(0.0);

Model single_dense(Tensor w, Tensor b = {}) {
  const std::size_t n = w.shape()[0], m = w.shape()[1];
  if (b.empty()) b = Tensor({m});
  Model model{{n}, {DenseLayer{std::move(w), std::move(b)}}, class_list(m)};
  model.validate();
  return model;
}

RelevanceMap explain(const Model& m, const Tensor& x, std::size_t cls, const RuleConfig& rule) {
  return lrp_explain(m, forward(m, x), cls, rule);
}

std::vector<std::vector<double>> rows(const Tensor& w) {
  std::vector<std::vector<double>> out(w.shape()[0], std::vector<double>(w.shape()[1]));
  for (std::size_t j = 0; j < w.shape()[0]; ++j) {
    for (std::size_t k = 0; k < w.shape()[1]; ++k) out[j][k] = w.at({j, k});
  }
  return out;
}

void expect_conserved(const RelevanceMap& map, double tol = 1e-9) {
  ASSERT_TRUE(map.conservation);
  const double f = map.conservation->f_value;
  for (double s : map.conservation->layer_sums) EXPECT_LE(std::abs(s - f), tol * std::abs(f)) << s << " vs " << f;
  EXPECT_LE(std::abs(map.values.sum() - f), tol * std::abs(f));
}

}  // namespace

TEST(EpsilonLayer, HandExample) {
  const Tensor x = Tensor::vector({1, 2}), w = Tensor::matrix({{1}, {1}}), b = Tensor::vector({0});
  const auto r0 = lrp_epsilon_layer(x, w, b, Tensor::vector({3}), 0.0);
  EXPECT_EQ(r0.relevance, Tensor::vector({1, 2}));
  EXPECT_EQ(r0.relevance.sum(), 3.0);
  EXPECT_EQ(r0.epsilon_leaked, 0.0);

  const auto r1 = lrp_epsilon_layer(x, w, b, Tensor::vector({3}), 0.1);
  EXPECT_NEAR(r1.relevance[0], 3.0 / 3.1, 1e-15);
  EXPECT_NEAR(r1.relevance[1], 6.0 / 3.1, 1e-15);
  EXPECT_NEAR(r1.relevance[0], 0.9677, 5e-5);
  EXPECT_NEAR(r1.relevance[1], 1.9355, 5e-5);
  EXPECT_NEAR(r1.relevance.sum(), 2.9032, 5e-5);
  EXPECT_NEAR(r1.epsilon_leaked, 0.0968, 5e-5);
  EXPECT_NEAR(r1.epsilon_leaked, 0.3 / 3.1, 1e-15);
}

TEST(EpsilonLayer, ZeroActivationGetsZero) {
  const auto r = lrp_epsilon_layer(Tensor::vector({0, 1}), Tensor::matrix({{100, -7}, {1, 2}}), Tensor::vector({0.5, 0}),
                                   Tensor::vector({1, 1}), 0.01);
  EXPECT_EQ(r.relevance[0], 0.0);
}

TEST(EpsilonLayer, StabilizerFollowsSignAndZeroIsPositive) {
  // z = -1: denominator -1 - eps
  auto r = lrp_epsilon_layer(Tensor::vector({1}), Tensor::matrix({{-1}}), Tensor::vector({0}), Tensor::vector({1}), 0.5);
  EXPECT_DOUBLE_EQ(r.relevance[0], -1.0 / -1.5);
  // z = 0 exactly: sign(0) = +1, finite output, everything leaked
  r = lrp_epsilon_layer(Tensor::vector({1, 1}), Tensor::matrix({{1}, {-1}}), Tensor::vector({0}), Tensor::vector({2}), 0.5);
  EXPECT_DOUBLE_EQ(r.relevance[0], 4.0);
  EXPECT_DOUBLE_EQ(r.relevance[1], -4.0);
  EXPECT_DOUBLE_EQ(r.epsilon_leaked, 2.0);
  // eps = 0 and z = 0: the term is dropped and counted as leaked
  r = lrp_epsilon_layer(Tensor::vector({1, 1}), Tensor::matrix({{1}, {-1}}), Tensor::vector({0}), Tensor::vector({2}), 0.0);
  EXPECT_EQ(r.relevance, Tensor::vector({0, 0}));
  EXPECT_EQ(r.epsilon_leaked, 2.0);
}

TEST(EpsilonLayer, MatchesOracleWithBiasAndStabilizer) {
  Xoshiro256 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(12), m = 1 + rng.below(12);
    const Tensor x = random_tensor(rng, {n}), w = random_tensor(rng, {n, m}), b = random_tensor(rng, {m}, -0.5, 0.5);
    const Tensor r_out = random_tensor(rng, {m});
    const double eps = trial % 3 == 0 ? 0.0 : rng.uniform(0.0, 0.5);
    double leak = 0.0;
    const auto want = oracle_epsilon(x.vec(), rows(w), b.vec(), r_out.vec(), eps, &leak);
    const auto got = lrp_epsilon_layer(x, w, b, r_out, eps);
    double scale = 0.0;
    for (double v : want) scale = std::max(scale, std::abs(v));
    for (std::size_t j = 0; j < n; ++j) EXPECT_LE(std::abs(got.relevance[j] - want[j]), 1e-9 * std::max(1.0, scale));
    EXPECT_LE(std::abs(got.epsilon_leaked - leak), 1e-9 * std::max(1.0, std::abs(leak)));
    // bookkeeping closes: inputs + bias share + stabilizer share = relevance in
    EXPECT_NEAR(got.relevance.sum() + got.bias_absorbed + got.epsilon_leaked, r_out.sum(), 1e-9 * std::max(1.0, scale * n));
  }
}

TEST(AlphaBetaLayer, HandExamples) {
  const Tensor x = Tensor::vector({1, 1}), w = Tensor::matrix({{2}, {-1}}), b = Tensor::vector({0});
  const auto r10 = lrp_alphabeta_layer(x, w, b, Tensor::vector({1}), 1, 0);
  EXPECT_EQ(r10.relevance, Tensor::vector({1, 0}));
  EXPECT_EQ(r10.relevance.sum(), 1.0);
  const auto r21 = lrp_alphabeta_layer(x, w, b, Tensor::vector({1}), 2, 1);
  EXPECT_EQ(r21.relevance, Tensor::vector({2, -1}));
  EXPECT_EQ(r21.relevance.sum(), 1.0);
}

TEST(AlphaBetaLayer, ConstraintEnforced) {
  const Tensor x = Tensor::vector({1}), w = Tensor::matrix({{1}}), b = Tensor::vector({0}), r = Tensor::vector({1});
  EXPECT_THROW(lrp_alphabeta_layer(x, w, b, r, 2, 0), Error);
  EXPECT_THROW(lrp_alphabeta_layer(x, w, b, r, 0.5, -0.5), Error);
  EXPECT_THROW(RuleConfig::make_alpha_beta(1.5, 0.25), Error);
  EXPECT_THROW(RuleConfig::make_epsilon(-1e-3), Error);
  EXPECT_NO_THROW(RuleConfig::make_alpha_beta(3, 2));
}

TEST(AlphaBetaLayer, AllPositiveEqualsEpsilonZero) {
  Xoshiro256 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(10), m = 1 + rng.below(10);
    const Tensor x = random_tensor(rng, {n}, 0.0, 1.0), w = random_tensor(rng, {n, m}, 0.0, 1.0);
    const Tensor r_out = random_tensor(rng, {m});
    const auto ab = lrp_alphabeta_layer(x, w, Tensor({m}), r_out, 1, 0);
    const auto eps = lrp_epsilon_layer(x, w, Tensor({m}), r_out, 0.0);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(ab.relevance[j], eps.relevance[j], 1e-12);
  }
}

TEST(AlphaBetaLayer, BiasJoinsDenominatorsAndIsAbsorbed) {
  // contributions +2, -1; bias +2 joins the positive side: zp = 4, zn = -1
  const auto r = lrp_alphabeta_layer(Tensor::vector({1, 1}), Tensor::matrix({{2}, {-1}}), Tensor::vector({2}),
                                     Tensor::vector({1}), 2, 1);
  EXPECT_DOUBLE_EQ(r.relevance[0], 2.0 * 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(r.relevance[1], -1.0);
  EXPECT_DOUBLE_EQ(r.bias_absorbed, 2.0 * 2.0 / 4.0);
  EXPECT_DOUBLE_EQ(r.relevance.sum() + r.bias_absorbed + r.epsilon_leaked, 1.0);
}

TEST(AlphaBetaLayer, MissingSideIsDroppedAndReported) {
  // no negative contribution: the beta term disappears
  const auto r = lrp_alphabeta_layer(Tensor::vector({1, 1}), Tensor::matrix({{2}, {1}}), Tensor::vector({0}),
                                     Tensor::vector({1}), 2, 1);
  EXPECT_DOUBLE_EQ(r.relevance.sum(), 2.0);
  EXPECT_DOUBLE_EQ(r.epsilon_leaked, -1.0);
}

TEST(Explain, LinearModel) {
  // f(x) = x1 + 2 x2 + 3 x3 (second class column is all zero)
  const Model m = single_dense(Tensor::matrix({{1, 0}, {2, 0}, {3, 0}}));
  const auto map = explain(m, Tensor::vector({1, 1, 1}), 0, kEps0);
  EXPECT_EQ(map.values, Tensor::vector({1, 2, 3}));
  EXPECT_EQ(map.values.sum(), 6.0);
  EXPECT_EQ(map.conservation->f_value, 6.0);
  EXPECT_EQ(map.method(), "lrp-eps");
}

TEST(Explain, ReluIsTransparent) {
  Model m{{2}, {DenseLayer{Tensor::matrix({{2, 0}, {-1, 0}}), Tensor({2})}, ReluLayer{}}, {"a", "b"}};
  const auto map = explain(m, Tensor::vector({1, 1}), 0, RuleConfig::make_alpha_beta(1, 0));
  EXPECT_EQ(map.values, Tensor::vector({1, 0}));
  EXPECT_EQ(map.method(), "lrp-ab");
}

TEST(Explain, ZeroWeightsGiveZeroRelevance) {
  Xoshiro256 rng(2);
  Model m = random_mlp(rng, {2, 3, 8, false, false});
  for (Layer& l : m.layers) {
    if (auto* d = std::get_if<DenseLayer>(&l)) d->weights = Tensor(d->weights.shape());
  }
  const auto map = explain(m, random_tensor(rng, m.input_shape), 0, RuleConfig::make_epsilon(0.01));
  EXPECT_EQ(map.conservation->f_value, 0.0);
  for (double v : map.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(Explain, OutputStartsFromRawLogit) {
  Xoshiro256 rng(3);
  const Model m = random_mlp(rng, {2, 4, 10, true, false});
  const Tensor x = random_tensor(rng, m.input_shape);
  const auto t = forward(m, x);
  const auto map = lrp_explain(m, t, 1, RuleConfig::make_epsilon(0.01));
  EXPECT_EQ(map.layer_relevances.front()[1], t.logits[1]);
  EXPECT_EQ(map.layer_relevances.front().sum(), t.logits[1]);
  EXPECT_EQ(map.conservation->layer_sums.front(), t.logits[1]);
  EXPECT_EQ(map.target_class, 1u);
}

TEST(Explain, MaxPoolIsWinnerTakesAll) {
  Model m;
  m.input_shape = {1, 2, 4};
  m.layers = {PoolLayer{PoolKind::Max, {2, 2}, {2, 2}}, FlattenLayer{},
              DenseLayer{Tensor::matrix({{1, 0}, {2, 0}}), Tensor({2})}};
  m.class_names = {"a", "b"};
  const Tensor x({1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 0, 2, 1});
  const auto map = explain(m, x, 0, kEps0);
  // winners: 5 (index 1) and the first 2 (index 2); f = 5 + 2*2 = 9
  EXPECT_EQ(map.values, Tensor({1, 2, 4}, std::vector<double>{0, 5, 4, 0, 0, 0, 0, 0}));
}

TEST(Explain, AccountingClosesOnBiasedNetworks) {
  Xoshiro256 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Model m = trial % 2 ? random_mlp(rng, {2, 5, 16, true, false}) : random_convnet(rng, true, PoolKind::Max);
    const Tensor x = random_tensor(rng, m.input_shape);
    const RuleConfig rule = trial % 3 == 0 ? RuleConfig::make_alpha_beta(2, 1) : RuleConfig::make_epsilon(0.05);
    const auto map = explain(m, x, rng.below(m.num_classes()), rule);
    EXPECT_LE(map.conservation->accounting_residual, 1e-9);
    const auto audit = conservation_audit(map);
    EXPECT_LE(audit.accounting_residual, 1e-9);
  }
}

TEST(Conservation, EpsilonZeroBiasFreeRandomNetworks) {
  Xoshiro256 rng(100);
  for (int trial = 0; trial < 150; ++trial) {
    const Model m = random_mlp(rng, {2, 5, 32, false, trial % 2 == 1});
    const Tensor x = random_tensor(rng, m.input_shape);
    expect_conserved(explain(m, x, rng.below(m.num_classes()), kEps0));
  }
}

TEST(Conservation, AlphaBetaWhenNoTermIsDropped) {
  Xoshiro256 rng(101);
  int checked = 0;
  for (int attempt = 0; checked < 100 && attempt < 20000; ++attempt) {
    const Model m = random_mlp(rng, {2, 4, 12, false, attempt % 2 == 1});
    const Tensor x = random_tensor(rng, m.input_shape);
    const auto t = forward(m, x);
    const std::size_t cls = rng.below(m.num_classes());
    if (!both_sides_everywhere(m, t, cls)) continue;
    ++checked;
    for (auto [a, b] : {std::pair{1.0, 0.0}, std::pair{2.0, 1.0}}) {
      const auto map = lrp_explain(m, t, cls, RuleConfig::make_alpha_beta(a, b));
      expect_conserved(map);
      EXPECT_EQ(map.conservation->epsilon_leaked, 0.0);
    }
  }
  EXPECT_EQ(checked, 100);
}

TEST(Conservation, ScalingExplainedColumnScalesRelevance) {
  Xoshiro256 rng(55);
  for (int trial = 0; trial < 30; ++trial) {
    const Model m = random_mlp(rng, {2, 4, 16, false, false});
    const Tensor x = random_tensor(rng, m.input_shape);
    const std::size_t cls = rng.below(m.num_classes());
    const double s = rng.uniform(0.2, 5.0);
    Model scaled = m;
    auto& last = std::get<DenseLayer>(scaled.layers.back());
    const std::size_t n = last.weights.shape()[0], k = last.weights.shape()[1];
    for (std::size_t j = 0; j < n; ++j) last.weights[j * k + cls] *= s;
    const auto a = explain(m, x, cls, kEps0).values, b = explain(scaled, x, cls, kEps0).values;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LE(std::abs(b[i] - s * a[i]), 1e-10 * std::max(1.0, std::abs(s * a[i])));
  }
}

TEST(Conservation, LinearRelevanceIsInputTimesWeight) {
  Xoshiro256 rng(66);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(8);
    const Tensor w = random_tensor(rng, {n, 2});
    const Tensor x = random_tensor(rng, {n});
    const auto map = explain(single_dense(w), x, 0, kEps0);
    std::vector<double> contrib(n);
    for (std::size_t i = 0; i < n; ++i) contrib[i] = x[i] * w[i * 2];
    for (std::size_t i = 0; i < n; ++i) EXPECT_LE(std::abs(map.values[i] - contrib[i]), 1e-12 * std::max(1.0, std::abs(contrib[i])));
    std::vector<std::size_t> by_map(n), by_contrib(n);
    std::iota(by_map.begin(), by_map.end(), 0u);
    std::iota(by_contrib.begin(), by_contrib.end(), 0u);
    std::sort(by_map.begin(), by_map.end(), [&](auto a, auto b) { return map.values[a] > map.values[b]; });
    std::sort(by_contrib.begin(), by_contrib.end(), [&](auto a, auto b) { return contrib[a] > contrib[b]; });
    EXPECT_EQ(by_map, by_contrib);
  }
}

TEST(ConvAsDense, ForwardMatches) {
  Xoshiro256 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 1 + rng.below(2), co = 1 + rng.below(3);
    ConvSpec s{random_tensor(rng, {co, c, 1 + rng.below(3), 1 + rng.below(3)}), random_tensor(rng, {co}),
               {1 + rng.below(2), 1 + rng.below(2)}, {rng.below(2), rng.below(2)}};
    const Tensor x = random_tensor(rng, {c, 4 + rng.below(3), 4 + rng.below(3)});
    const DenseLayer d = conv_as_dense(s, x.shape());
    const Tensor a = conv_forward(x, s), b = dense_forward(x.reshaped({x.size()}), d.weights, d.bias);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(ConvAsDense, RelevanceMatchesMaterializedDense) {
  Xoshiro256 rng(18);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t c = 1 + rng.below(2), co = 1 + rng.below(3);
    ConvSpec s{random_tensor(rng, {co, c, 2 + rng.below(2), 2 + rng.below(2)}),
               trial % 2 ? random_tensor(rng, {co}, -0.2, 0.2) : Tensor({co}), {1 + rng.below(2), 1}, {rng.below(2), rng.below(2)}};
    const Shape in{c, 5, 5};
    const Shape conv_out = conv_output_shape(in, s);
    const DenseLayer head = random_dense(rng, shape_size(conv_out), 2, false);
    const Model conv{in, {ConvLayer{s}, ReluLayer{}, FlattenLayer{}, head}, {"a", "b"}};
    const Model dense{in, {FlattenLayer{}, conv_as_dense(s, in), ReluLayer{}, head}, {"a", "b"}};
    const Tensor x = random_tensor(rng, in);
    for (const RuleConfig& rule : {kEps0, RuleConfig::make_epsilon(0.1), RuleConfig::make_alpha_beta(2, 1)}) {
      const auto a = explain(conv, x, 0, rule).values;
      const auto b = explain(dense, x, 0, rule).values;
      ASSERT_EQ(a.shape(), b.shape());
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
  }
}

TEST(Audit, ExactWithoutBiasAndStabilizer) {
  Xoshiro256 rng(71);
  const Model m = random_mlp(rng, {3, 4, 16, false, false});
  const auto report = conservation_audit(explain(m, random_tensor(rng, m.input_shape), 0, kEps0));
  EXPECT_LE(report.max_relative_deviation, 1e-9);
}

TEST(Audit, DeviationEqualsLeakage) {
  Xoshiro256 rng(72);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    const Model m = single_dense(random_tensor(rng, {n, 3}));
    const auto map = explain(m, random_tensor(rng, {n}), rng.below(3), RuleConfig::make_epsilon(rng.uniform(0.01, 1.0)));
    const auto r = conservation_audit(map);
    const double gap = r.f_value - r.layer_sums.back();
    EXPECT_NEAR(gap, r.epsilon_leaked, 1e-9);
    EXPECT_NEAR(r.max_relative_deviation * std::abs(r.f_value), std::abs(r.epsilon_leaked), 1e-9);
  }
}

TEST(Audit, RefusesSensitivityMaps) {
  const Model m = single_dense(Tensor::matrix({{1, 0}, {2, 0}}));
  const auto t = forward(m, Tensor::vector({1, 1}));
  const auto sa = sensitivity_map(backward_gradient(m, t, 0), ChannelNorm::Abs);
  try {
    conservation_audit(sa);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Audit);
  }
  // a deserialized map has no per-layer relevances to recompute from
  const auto round = relevance_from_json(relevance_to_json(lrp_explain(m, t, 0, kEps0)));
  EXPECT_THROW(conservation_audit(round), Error);
}

TEST(Audit, RecomputesSumsIndependently) {
  Xoshiro256 rng(73);
  const Model m = random_mlp(rng, {2, 3, 8, false, false});
  auto map = explain(m, random_tensor(rng, m.input_shape), 0, kEps0);
  map.conservation->layer_sums.assign(map.conservation->layer_sums.size(), 0.0);  // corrupt the stored copy
  const auto r = conservation_audit(map);
  EXPECT_LE(r.max_relative_deviation, 1e-9);
}

TEST(Aggregate, Examples) {
  RelevanceMap map;
  map.values = Tensor::vector({1, 2, 3, -1});
  EXPECT_EQ(aggregate_groups(map, {{0, 1}, {2, 3}}), (std::vector<double>{3, 2}));
  EXPECT_EQ(aggregate_groups(map, {{0}, {1}, {2}, {3}}), (std::vector<double>{1, 2, 3, -1}));
  EXPECT_THROW(aggregate_groups(map, {{0, 1}, {1, 2, 3}}), Error);
  EXPECT_THROW(aggregate_groups(map, {{0, 1}, {2}}), Error);
  EXPECT_THROW(aggregate_groups(map, {{0, 1, 2, 3, 4}}), Error);

  RelevanceMap tokens;
  tokens.values = Tensor::matrix({{1, -2}, {0.5, 0.5}, {0, 0}});
  EXPECT_EQ(token_relevance(tokens), (std::vector<double>{-1, 1, 0}));
}

TEST(Explain, EmbeddingStopsAtEmbeddingOutputs) {
  Xoshiro256 rng(91);
  Tensor table = random_tensor(rng, {5, 3});
  for (std::size_t d = 0; d < 3; ++d) table[d] = 0.0;
  Model m{{4}, {EmbeddingLayer{table}, FlattenLayer{}, random_dense(rng, 12, 6, false), ReluLayer{}, random_dense(rng, 6, 2, false)},
          {"a", "b"}};
  m.validate();
  const auto map = explain(m, Tensor::vector({3, 1, 0, 0}), 0, kEps0);
  EXPECT_EQ(map.values.shape(), (Shape{4, 3}));
  expect_conserved(map);
  const auto per_token = token_relevance(map);
  EXPECT_EQ(per_token[2], 0.0);  // padding row is zero, so zero relevance
  EXPECT_EQ(per_token[3], 0.0);
}

TEST(Display, SignedSumForLrpNormForSa) {
  RelevanceMap lrp;
  lrp.rule = kEps0;
  lrp.values = Tensor({2, 1, 2}, std::vector<double>{3, -1, -4, 1});
  EXPECT_EQ(display_map(lrp), Tensor::matrix({{-1, 0}}));
  RelevanceMap sa = lrp;
  sa.rule.reset();
  sa.values = Tensor({2, 1, 2}, std::vector<double>{3, 0, 4, 0});
  EXPECT_EQ(display_map(sa), Tensor::matrix({{5, 0}}));
}

TEST(Serialization, RoundTrip) {
  Xoshiro256 rng(5);
  const Model m = random_mlp(rng, {2, 3, 6, true, false});
  auto map = explain(m, random_tensor(rng, m.input_shape), 1, RuleConfig::make_alpha_beta(2, 1));
  map.tokens = {"a", "b"};
  const auto j = relevance_to_json(map);
  EXPECT_EQ(j.at("method"), "lrp-ab");
  EXPECT_EQ(j.at("conserving"), true);
  const auto back = relevance_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.values, map.values);
  EXPECT_EQ(back.target_class, 1u);
  EXPECT_EQ(back.rule->alpha, 2.0);
  EXPECT_EQ(back.conservation->layer_sums, map.conservation->layer_sums);
  EXPECT_EQ(back.tokens, map.tokens);

  const auto sa = sensitivity_map(backward_gradient(m, forward(m, Tensor(m.input_shape, 0.5)), 0), ChannelNorm::Abs);
  const auto sj = relevance_to_json(sa);
  EXPECT_EQ(sj.at("conserving"), false);
  EXPECT_EQ(sj.at("sa_norm"), "abs");
  EXPECT_TRUE(relevance_from_json(sj).is_sensitivity());
  EXPECT_THROW(relevance_from_json(nlohmann::json::parse(R"({"shape":[2]})")), Error);
}
