#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.hpp"

using namespace fgssl;

namespace {

double scalar_of(const Var& v) { return v.value()[0]; }

/// Direct per-query loop over a score matrix, written without the fused op.
double contrast_oracle(const Tensor& s, const std::vector<int>& ql, const std::vector<int>& kl, bool exclude_self) {
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double neg = 0.0;
    for (std::size_t k = 0; k < s.cols(); ++k)
      if (kl[k] != ql[i]) neg += std::exp(s(i, k));
    double li = 0.0;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < s.cols(); ++k) {
      if (kl[k] != ql[i] || (exclude_self && k == i)) continue;
      li -= std::log(std::exp(s(i, k)) / (std::exp(s(i, k)) + neg));
      ++pos;
    }
    if (pos == 0) continue;
    total += li / static_cast<double>(pos);
    ++used;
  }
  return total / static_cast<double>(used);
}

double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double d = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) d += p[k] * std::log(p[k] / q[k]);
  return d;
}

const std::vector<int> kSixLabels{0, 1, 0, 2, 1, 2};

std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

}  // namespace

TEST(CrossEntropy, UniformLogitsGiveLn2) {
  Tape t;
  const Var z = t.constant(Tensor(1, 2, {0.0, 0.0}));
  EXPECT_NEAR(scalar_of(cross_entropy(z, {1}, {0})), std::log(2.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectLogit) {
  Tape t;
  const Var z = t.constant(Tensor(1, 2, {10.0, -10.0}));
  EXPECT_NEAR(scalar_of(cross_entropy(z, {0}, {0})), 2.0611536e-9, 1e-15);
}

TEST(CrossEntropy, MeanOverMaskOnly) {
  Tape t;
  const Var z = t.constant(Tensor(3, 2, {0.0, 0.0, 10.0, -10.0, 0.0, 50.0}));
  const double v = scalar_of(cross_entropy(z, {1, 0, 0}, {0, 1}));
  EXPECT_NEAR(v, 0.5 * (std::log(2.0) + 2.0611536e-9), 1e-12);
  EXPECT_THROW(cross_entropy(z, {1, 0, 0}, {}), ConfigError);
  EXPECT_THROW(cross_entropy(z, {1, 0, 0}, {3}), ShapeError);
}

TEST(Phi, Values) {
  const std::vector<double> a{1.0, 0.0}, b{0.0, 1.0}, c{-2.0, 0.0};
  EXPECT_NEAR(phi(a, a, 1.0), std::exp(1.0), 1e-15);
  EXPECT_NEAR(phi(a, b, 1.0), 1.0, 1e-15);
  EXPECT_NEAR(phi(a, c, 0.1), std::exp(-10.0), 1e-18);
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_THROW(phi(a, zero, 1.0), NumericError);
  EXPECT_THROW(phi(a, a, 0.0), ConfigError);
}

TEST(Fnsc, TwoOrthogonalNodes) {
  Tape t;
  const Var h = t.constant(Tensor(2, 2, {1.0, 0.0, 0.0, 1.0}));
  const double v = scalar_of(fnsc_loss(h, h, {0, 1}, {0, 1}, {1.0, 1.0, KeySource::global}));
  EXPECT_NEAR(v, -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-12);
  EXPECT_NEAR(v, 0.313262, 1e-6);
}

TEST(Fnsc, MatchesDirectOracleIncludingDuplicatedKeys) {
  const Tensor s = testutil::random_tensor(4, 4, 5, -2.0, 2.0);
  const std::vector<int> labels{0, 1, 0, 1};
  Tape t;
  EXPECT_NEAR(scalar_of(supervised_contrast(t.constant(s), labels, labels, false)),
              contrast_oracle(s, labels, labels, false), 1e-12);
  EXPECT_NEAR(scalar_of(supervised_contrast(t.constant(s), labels, labels, true)),
              contrast_oracle(s, labels, labels, true), 1e-12);

  Tensor dup(4, 8);
  std::vector<int> dup_labels;
  for (std::size_t k = 0; k < 4; ++k) dup_labels.push_back(labels[k]);
  for (std::size_t k = 0; k < 4; ++k) dup_labels.push_back(labels[k]);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 8; ++k) dup(i, k) = s(i, k % 4);
  EXPECT_NEAR(scalar_of(supervised_contrast(t.constant(dup), labels, dup_labels, false)),
              contrast_oracle(dup, labels, dup_labels, false), 1e-12);
}

TEST(Fnsc, HighTemperatureLimit) {
  const Tensor h = testutil::random_tensor(6, 3, 8, 0.5, 1.5);
  Tape t;
  const Var v = t.constant(h);
  const std::vector<int> labels{0, 0, 0, 1, 1, 1};
  const double loss = scalar_of(fnsc_loss(v, v, labels, all_nodes(6), {1e6, 1.0, KeySource::global}));
  EXPECT_NEAR(loss, std::log(4.0), 1e-5);
}

TEST(Fnsc, SingleClassIsAnError) {
  Tape t;
  const Var h = t.constant(testutil::random_tensor(3, 2, 1));
  EXPECT_THROW(fnsc_loss(h, h, {1, 1, 1}, {0, 1, 2}, {}), ConfigError);
  EXPECT_EQ(classes_in({1, 1, 0}, {0, 1}), 1u);
  EXPECT_EQ(classes_in({1, 1, 0}, {0, 2}), 2u);
}

TEST(Fnsc, LocalKeysExcludeSelfAndSkipLoneQueries) {
  const Tensor s = testutil::random_tensor(3, 3, 2);
  const std::vector<int> labels{0, 0, 1};
  Tape t;
  const double v = scalar_of(supervised_contrast(t.constant(s), labels, labels, true));
  const double q0 = -std::log(std::exp(s(0, 1)) / (std::exp(s(0, 1)) + std::exp(s(0, 2))));
  const double q1 = -std::log(std::exp(s(1, 0)) / (std::exp(s(1, 0)) + std::exp(s(1, 2))));
  EXPECT_NEAR(v, 0.5 * (q0 + q1), 1e-12);
}

TEST(Fnsc, GradientMatchesFiniteDifferences) {
  const std::vector<NodeId> mask{0, 1, 2, 3, 5};
  for (KeySource ks : {KeySource::global, KeySource::local}) {
    const ScalarFn f = [&](Tape&, const std::vector<Var>& v) {
      return fnsc_loss(v[0], v[1], kSixLabels, mask, {0.5, 1.0, ks});
    };
    EXPECT_LE(grad_check(f, {testutil::random_tensor(6, 4, 11), testutil::random_tensor(6, 4, 12)}), 1e-4);
  }
}

TEST(Fnsc, AligningPositivesLowersLoss) {
  Tensor q = testutil::random_tensor(6, 4, 21);
  const Tensor k = testutil::random_tensor(6, 4, 22);
  const auto loss_of = [&](const Tensor& qq) {
    Tape t;
    return scalar_of(fnsc_loss(t.constant(qq), t.constant(k), kSixLabels, all_nodes(6), {0.5, 1.0, KeySource::global}));
  };
  for (std::size_t c = 0; c < 4; ++c) q(0, c) = -(k(0, c) + k(2, c));
  const double opposed = loss_of(q);
  for (std::size_t c = 0; c < 4; ++c) q(0, c) = k(0, c) + k(2, c);
  EXPECT_LT(loss_of(q), opposed);
}

TEST(SimilarityDistribution, Values) {
  const Tensor z(3, 2, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
  const std::vector<NodeId> nb{1, 2};
  auto s = similarity_distribution(z, 0, nb, 1.0);
  EXPECT_NEAR(s[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-12);
  EXPECT_NEAR(s[0], 0.7311, 1e-4);
  EXPECT_NEAR(s[1], 0.2689, 1e-4);
  s = similarity_distribution(z, 0, nb, 1e6);
  EXPECT_NEAR(s[0], 0.5, 1e-6);
  const Tensor eq(3, 2, {1.0, 0.0, 0.5, 0.0, 0.5, 0.0});
  s = similarity_distribution(eq, 0, nb, 1.0);
  EXPECT_NEAR(s[0], 0.5, 1e-15);
  EXPECT_THROW(similarity_distribution(z, 0, {}, 1.0), ConfigError);
}

TEST(Fgsd, IdenticalLogitsGiveZero) {
  const Graph g = testutil::small_sbm(5, 2, 3);
  const Tensor z = testutil::random_tensor(g.num_nodes(), 3, 4);
  Tape t;
  EXPECT_NEAR(scalar_of(fgsd_loss(t.constant(z), t.constant(z), g, 5.0)), 0.0, 1e-15);
}

TEST(Fgsd, HandComputedStar) {
  const Graph g = testutil::make_graph(3, {{0, 1}, {0, 2}});
  const Tensor global(3, 2, {1.0, 0.0, std::log(3.0), 0.0, 0.0, 0.0});
  const Tensor local(3, 2, {1.0, 0.0, 0.0, 1.0, 0.0, 0.0});
  const std::vector<NodeId> nb{1, 2};
  const auto sg = similarity_distribution(global, 0, nb, 1.0);
  const auto sm = similarity_distribution(local, 0, nb, 1.0);
  EXPECT_NEAR(sg[0], 0.75, 1e-12);
  EXPECT_NEAR(sm[0], 0.5, 1e-12);
  EXPECT_NEAR(kl(sg, sm), 0.130812, 1e-6);
  Tape t;
  // leaves have a single neighbor and contribute zero divergence
  EXPECT_NEAR(scalar_of(fgsd_loss(t.constant(local), t.constant(global), g, 1.0)), kl(sg, sm) / 3.0, 1e-12);
}

TEST(Fgsd, MatchesPerNodeOracleAndIsNonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Graph g = testutil::small_sbm(4, 3, seed);
    const Tensor zl = testutil::random_tensor(g.num_nodes(), 3, seed + 40, -3, 3);
    const Tensor zg = testutil::random_tensor(g.num_nodes(), 3, seed + 80, -3, 3);
    double expected = 0.0;
    std::size_t eligible = 0;
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
      if (g.neighbors(i).empty()) continue;
      expected += kl(similarity_distribution(zg, i, g.neighbors(i), 2.0),
                     similarity_distribution(zl, i, g.neighbors(i), 2.0));
      ++eligible;
    }
    Tape t;
    const double v = scalar_of(fgsd_loss(t.constant(zl), t.constant(zg), g, 2.0));
    EXPECT_GE(v, 0.0);
    EXPECT_NEAR(v, expected / static_cast<double>(eligible), 1e-10);
  }
}

TEST(Fgsd, NoEdgesGivesZeroAndBadOmegaThrows) {
  const Graph g = testutil::make_graph(3, {});
  Tape t;
  const Var z = t.constant(testutil::random_tensor(3, 2, 1));
  EXPECT_EQ(scalar_of(fgsd_loss(z, z, g, 1.0)), 0.0);
  EXPECT_THROW(fgsd_loss(z, z, g, 0.0), ConfigError);
}

TEST(Fgsd, GradientMatchesFiniteDifferences) {
  const Graph g = testutil::small_sbm(3, 3, 7);
  const NeighborPairs pairs = NeighborPairs::from(g);
  const ScalarFn f = [&](Tape&, const std::vector<Var>& v) { return fgsd_loss(v[0], v[1], pairs, 2.0); };
  EXPECT_LE(grad_check(f, {testutil::random_tensor(g.num_nodes(), 3, 1), testutil::random_tensor(g.num_nodes(), 3, 2)}),
            1e-4);
}

TEST(TotalLoss, Arithmetic) {
  Tape t;
  const Var ce = t.constant(Tensor::scalar(0.5));
  const Var c = t.constant(Tensor::scalar(0.3));
  const Var d = t.constant(Tensor::scalar(0.2));
  EXPECT_NEAR(scalar_of(total_loss(ce, c, d, 1.0, 1.0)), 1.0, 1e-15);
  EXPECT_NEAR(scalar_of(total_loss(ce, c, d, 2.0, 0.0)), 1.1, 1e-15);
  EXPECT_EQ(total_loss(ce, c, d, 0.0, 0.0).id(), ce.id());
  EXPECT_EQ(total_loss(ce, std::nullopt, std::nullopt, 1.0, 1.0).id(), ce.id());
}

TEST(TotalLoss, GradientIsSumOfComponentGradients) {
  const Graph g = testutil::small_sbm(3, 2, 9);
  const Tensor z0 = testutil::random_tensor(g.num_nodes(), 2, 3);
  const Tensor zg = testutil::random_tensor(g.num_nodes(), 2, 4);
  const std::vector<NodeId> mask = all_nodes(g.num_nodes());
  const auto grad_of = [&](int which) {
    Tape t;
    const Var z = t.variable(z0);
    const Var ce = cross_entropy(z, g.labels(), mask);
    const Var c = fnsc_loss(z, t.constant(zg), g.labels(), mask, {0.5, 1.0, KeySource::global});
    const Var d = fgsd_loss(z, t.constant(zg), g, 1.0);
    const Var root = which == 0 ? total_loss(ce, c, d, 0.7, 0.3) : which == 1 ? ce : which == 2 ? scale(c, 0.7) : scale(d, 0.3);
    t.backward(root);
    return t.grad(z);
  };
  const Tensor total = grad_of(0);
  const Tensor a = grad_of(1), b = grad_of(2), c = grad_of(3);
  for (std::size_t i = 0; i < total.size(); ++i) EXPECT_NEAR(total[i], a[i] + b[i] + c[i], 1e-12);
}

TEST(Prox, ValuesAndGradient) {
  const std::vector<Tensor> global{testutil::random_tensor(2, 3, 1), testutil::random_tensor(1, 2, 2)};
  Tape t;
  std::vector<Var> same{t.constant(global[0]), t.constant(global[1])};
  EXPECT_EQ(scalar_of(prox_term(same, global, 0.5)), 0.0);
  Tensor moved = global[1];
  moved[0] += 1.0;
  std::vector<Var> off{t.constant(global[0]), t.constant(moved)};
  EXPECT_NEAR(scalar_of(prox_term(off, global, 2.0)), 1.0, 1e-15);
  EXPECT_THROW(prox_term(std::span<const Var>(off.data(), 1), global, 1.0), ShapeError);

  const ScalarFn f = [&](Tape&, const std::vector<Var>& v) { return prox_term(v, global, 0.3); };
  EXPECT_LE(grad_check(f, {testutil::random_tensor(2, 3, 5), testutil::random_tensor(1, 2, 6)}), 1e-6);
}
