#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ndm/error.hpp"
#include "ndm/eval.hpp"
#include "oracles.hpp"

using namespace ndm;

namespace {

struct TableRow {
  std::vector<double> effect;
  std::vector<std::size_t> dims;
  std::vector<double> var;
  double raw, per_dim, per_var;  // captioned values
};

const TableRow kTable2{{5.4, 0.7, 1.8, 1.9, 29.7, 0.6, 0.6, 0.3, 0.6, 0.8, 1.2, 0.7, 0.7},
                       {128, 96, 96, 64, 64, 64, 64, 32, 32, 32, 32, 32, 32},
                       {2.1, 2.7, 1.3, 0.6, 0.8, 1.4, 1.7, 1.0, 1.0, 0.4, 4.0, 4.8, 0.3},
                       0.72, 0.67, 0.78};
const TableRow kTable3{{14.8, 11.6, 7.6, 4.2, 3.1, 2.5, 2.9, 1.4, 1.6, 0.9, 2.2},
                       {192, 128, 64, 64, 64, 64, 64, 32, 32, 32, 32},
                       {0.3, 0.3, 0.2, 0.2, 0.3, 0.3, 0.4, 0.3, 0.3, 0.4, 10.7},
                       0.46, 0.22, 0.52};
const TableRow kTable4{{3.9, 3.7, 2.3, 2.5, 1.6, 1.7, 1.7, 0.7, 0.8, 0.8, 0.7},
                       {128, 128, 96, 96, 64, 64, 64, 32, 32, 32, 32},
                       {0.7, 1.0, 0.5, 7.9, 0.4, 0.2, 0.2, 0.1, 0.1, 0.1, 0.1},
                       0.33, 0.05, 0.23};

std::vector<double> divide(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(a[i] / b[i]);
  return out;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Sixteen groups of three features; group g lives in hidden plane (2g, 2g+1)
// with its features at 120 degrees. The identity partition with c = 2,...,2 is
// exactly group aligned.
ToyModel planar_toy() {
  ToyModel m;
  m.spec = FeatureGroupSpec{std::vector<std::size_t>(16, 3), 0.25};
  m.w = Matrix::Zero(32, 48);
  for (int g = 0; g < 16; ++g)
    for (int f = 0; f < 3; ++f) {
      const double angle = 2.0 * std::numbers::pi * f / 3.0;
      m.w(2 * g, 3 * g + f) = std::cos(angle);
      m.w(2 * g + 1, 3 * g + f) = std::sin(angle);
    }
  m.b = Vector::Constant(48, -0.1);
  return m;
}

}  // namespace

TEST(PatchCompose, FullSpaceSubspaceReturnsCorrupt) {
  auto st = make_stream(1, "r");
  const Partition p(random_orthogonal(5, st), {5});
  const Vector cln = vec({1, 2, 3, 4, 5}), crp = vec({-3, 0.5, 7, 2, 1});
  EXPECT_LE((patch_compose(cln, crp, p, 0) - crp).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PatchCompose, EqualInputsAreIdentity) {
  auto st = make_stream(2, "r");
  const Partition p(random_orthogonal(4, st), {2, 2});
  const Vector h = vec({0.1, -0.7, 3.3, 1e-3});
  EXPECT_EQ(patch_compose(h, h, p, 1), h);
}

TEST(PatchCompose, CoordinateReplacement) {
  const auto p = Partition::identity(2, {1, 1});
  EXPECT_EQ(patch_compose(vec({1, 2}), vec({9, 7}), p, 0), vec({9, 2}));
}

TEST(PatchCompose, SequentialPatchOfEverySubspaceGivesCorrupt) {
  std::mt19937_64 rng(3);
  auto st = make_stream(3, "r");
  const Partition p(random_orthogonal(7, st), {3, 2, 1, 1});
  const Vector crp = oracle::gaussian(7, 1, rng).col(0);
  Vector h = oracle::gaussian(7, 1, rng).col(0);
  for (std::size_t s = 0; s < 4; ++s) h = patch_compose(h, crp, p, s);
  EXPECT_LE((h - crp).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(PatchCompose, IndexOutOfRange) {
  const auto p = Partition::identity(2, {1, 1});
  EXPECT_THROW(patch_compose(vec({1, 2}), vec({3, 4}), p, 2), Error);
}

TEST(EffectMetrics, DeltaLd) {
  EXPECT_EQ(delta_ld({2.0, 1.0, 2.0, 1.0}), 0.0);
  EXPECT_NEAR(delta_ld({2.0, 1.0, 1.5, 1.4}), 0.9, 1e-12);
  EXPECT_NEAR(delta_ld({1.0, 2.0, 1.4, 1.5}), -0.9, 1e-12);
}

TEST(EffectMetrics, DeltaP) {
  EXPECT_NEAR(delta_p(0.8, 0.3), 0.5, 1e-15);
  EXPECT_EQ(delta_p(0.42, 0.42), 0.0);
  EXPECT_EQ(delta_p(0.0, 1.0), -1.0);
  EXPECT_THROW(delta_p(1.2, 0.3), Error);
  EXPECT_THROW(delta_p(0.5, -0.1), Error);
}

TEST(Gini, Examples) {
  EXPECT_NEAR(gini(kTable2.effect), 0.72, 0.005);
  EXPECT_EQ(gini(std::vector<double>{3, 3, 3, 3}), 0.0);
  EXPECT_DOUBLE_EQ(gini(std::vector<double>{1, 0}), 0.5);
  try {
    gini(std::vector<double>{0, 0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::no_effect);
  }
}

TEST(Gini, MatchesDoubleSumOracleAndIsScaleInvariant) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e(1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(2 + rng() % 30);
    for (double& x : v) x = e(rng);
    EXPECT_NEAR(gini(v), oracle::gini(v), 1e-12);
    std::vector<double> scaled = v;
    for (double& x : scaled) x *= 37.5;
    EXPECT_NEAR(gini(scaled), gini(v), 1e-12);
  }
}

TEST(Gini, NegativesAreClampedAndCounted) {
  const auto r = gini_detail(std::vector<double>{2.0, -0.5, 0.0, 1.0});
  EXPECT_EQ(r.clamped, 1u);
  EXPECT_NEAR(r.value, oracle::gini({2.0, 0.0, 0.0, 1.0}), 1e-15);
  EXPECT_THROW(gini(std::vector<double>{-1.0, -2.0}), Error);
}

TEST(GiniReport, ReferenceTables) {
  for (const TableRow* t : {&kTable2, &kTable3, &kTable4}) {
    const auto rep = gini_report(PatchingRecord{t->effect, t->dims, t->var});
    EXPECT_NEAR(rep.raw, t->raw, 0.01);
    EXPECT_NEAR(rep.per_dim, t->per_dim, 0.01);
    EXPECT_NEAR(rep.per_var, t->per_var, 0.01);
    std::vector<double> dims(t->dims.begin(), t->dims.end());
    EXPECT_NEAR(rep.raw, oracle::gini(t->effect), 1e-12);
    EXPECT_NEAR(rep.per_dim, oracle::gini(divide(t->effect, dims)), 1e-12);
    EXPECT_NEAR(rep.per_var, oracle::gini(divide(t->effect, t->var)), 1e-12);
    EXPECT_TRUE(rep.warnings.empty());
  }
}

TEST(GiniReport, ZeroVarianceEntryExcludedWithWarning) {
  const auto rep = gini_report(PatchingRecord{{4, 1, 1}, {2, 2, 2}, {1, 0, 1}});
  EXPECT_NEAR(rep.per_var, oracle::gini({4, 1}), 1e-12);
  EXPECT_NEAR(rep.raw, oracle::gini({4, 1, 1}), 1e-12);
  ASSERT_EQ(rep.warnings.size(), 1u);
}

TEST(GiniReport, RecordValidation) {
  EXPECT_THROW(gini_report(PatchingRecord{{1, 2}, {2}, {1, 1}}), Error);
  EXPECT_THROW(gini_report(PatchingRecord{{1, 2}, {2, 0}, {1, 1}}), Error);
  EXPECT_THROW(gini_report(PatchingRecord{{1, 2}, {2, 2}, {1, -1}}), Error);
}

TEST(Baselines, IdentityAndRandom) {
  ActivationSet set;
  std::mt19937_64 rng(5);
  set.data = oracle::gaussian(50, 6, rng);
  const std::vector<std::size_t> c{4, 2};
  EXPECT_EQ(baseline_partition(BaselineKind::identity, set, c).rotation(), Matrix::Identity(6, 6));
  for (std::uint64_t seed = 0; seed < 100; ++seed)
    EXPECT_LE(orthogonality_error(baseline_partition(BaselineKind::random, set, c, seed).rotation()), 1e-8);
  EXPECT_NE(baseline_partition(BaselineKind::random, set, c, 1).rotation(),
            baseline_partition(BaselineKind::random, set, c, 2).rotation());
  EXPECT_EQ(parse_baseline("pca2"), BaselineKind::pca2);
  EXPECT_EQ(to_string(BaselineKind::pca1), "pca1");
  EXPECT_THROW(parse_baseline("svd"), Error);
}

TEST(Baselines, PcaBlockOrdering) {
  // Known spectrum: axis variances 1, 4, 9, 16, 25, 36 in a rotated frame.
  std::mt19937_64 rng(6);
  Matrix x = oracle::gaussian(20000, 6, rng);
  for (int j = 0; j < 6; ++j) x.col(j) *= (j + 1);
  auto st = make_stream(6, "frame");
  ActivationSet set;
  set.data = x * random_orthogonal(6, st).transpose();
  const std::vector<std::size_t> c{3, 2, 1};
  const auto pca1 = baseline_partition(BaselineKind::pca1, set, c);
  const auto pca2 = baseline_partition(BaselineKind::pca2, set, c);
  const auto v1 = subspace_variances(set.data, pca1);
  const auto v2 = subspace_variances(set.data, pca2);
  EXPECT_GT(v1.back(), v1.front());
  EXPECT_NEAR(v1.front(), 1.0 + 4.0 + 9.0, 1.0);
  EXPECT_NEAR(v1.back(), 36.0, 2.0);
  EXPECT_NEAR(v2.back(), 1.0, 0.1);
  EXPECT_NEAR(v2.front(), 36.0 + 25.0 + 16.0, 3.0);
  EXPECT_LE(orthogonality_error(pca1.rotation()), 1e-10);
}

TEST(SubspaceVariances, Examples) {
  std::mt19937_64 rng(7);
  const Matrix x = oracle::gaussian(20000, 5, rng);
  const auto v = subspace_variances(x, Partition::identity(5, {2, 3}));
  EXPECT_NEAR(v[0], 2.0, 0.1);
  EXPECT_NEAR(v[1], 3.0, 0.12);
  const auto zero = subspace_variances(Matrix::Constant(10, 5, 2.5), Partition::identity(5, {2, 3}));
  EXPECT_NEAR(zero[0], 0.0, 1e-20);
  EXPECT_NEAR(zero[1], 0.0, 1e-20);
}

TEST(SubspaceVariances, TotalIsRotationInvariant) {
  std::mt19937_64 rng(8);
  const Matrix x = oracle::gaussian(300, 6, rng) * oracle::gaussian(6, 6, rng);
  const double whole = oracle::covariance(x).trace();
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto st = make_stream(s, "rot");
    const auto v = subspace_variances(x, Partition(random_orthogonal(6, st), {1, 2, 3}));
    EXPECT_NEAR(v[0] + v[1] + v[2], whole, 1e-9 * whole);
  }
}

TEST(ToyPatching, GroupAlignedPartitionConcentratesEffect) {
  const ToyModel m = planar_toy();
  const auto p = Partition::identity(32, std::vector<std::size_t>(16, 2));
  const auto r = toy_patching(m, p, ToyPatchingOptions{0, 1000, 0});
  ASSERT_EQ(r.record.effect.size(), 16u);
  EXPECT_GT(r.record.effect[0], 0.05);
  for (std::size_t s = 1; s < 16; ++s) EXPECT_LE(r.record.effect[s], 0.01 * r.record.effect[0]);
  EXPECT_NEAR(r.gini.raw, 15.0 / 16.0, 1e-9);
  EXPECT_GT(r.gini.raw, 0.9);
  EXPECT_EQ(r.record.dims, std::vector<std::size_t>(16, 2));
}

TEST(ToyPatching, MixedPartitionSpreadsEffect) {
  const ToyModel m = planar_toy();
  auto st = make_stream(9, "mix");
  const Partition p(random_orthogonal(32, st), std::vector<std::size_t>(16, 2));
  const auto r = toy_patching(m, p, ToyPatchingOptions{0, 500, 1});
  EXPECT_LT(r.gini.raw, 0.9);
}

TEST(ToyPatching, ReadoutSumsDecodedGroupFeatures) {
  const ToyModel m = planar_toy();
  Vector h = Vector::Zero(32);
  h[0] = 1.0;  // along feature 0 of group 0
  // Decoded group-0 features: relu(1 - 0.1) + 2 * relu(-0.5 - 0.1) = 0.9
  EXPECT_NEAR(toy_group_readout(m, h, 0), 0.9, 1e-12);
  EXPECT_EQ(toy_group_readout(m, h, 1), 0.0);
  EXPECT_THROW(toy_group_readout(m, h, 16), Error);
}
