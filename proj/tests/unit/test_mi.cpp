#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ndm/error.hpp"
#include "ndm/mi.hpp"
#include "ndm/ndm.hpp"
#include "ndm/toy_model.hpp"
#include "oracles.hpp"

using namespace ndm;

namespace {

constexpr double kEulerGamma = 0.57721566490153286061;

std::pair<Matrix, Matrix> correlated(double rho, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix x(n, 1), y(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = g(rng), b = g(rng);
    x(i, 0) = a;
    y(i, 0) = rho * a + std::sqrt(1 - rho * rho) * b;
  }
  return {x, y};
}

double gaussian_mi(double rho) { return -0.5 * std::log(1 - rho * rho); }

double total_variance(const Matrix& m) { return oracle::covariance(m).trace(); }

}  // namespace

TEST(Digamma, KnownValuesAndRecurrence) {
  EXPECT_NEAR(digamma(1.0), -kEulerGamma, 1e-12);
  EXPECT_NEAR(digamma(0.5), -kEulerGamma - 2 * std::numbers::ln2, 1e-12);
  // psi(n) = H(n-1) - gamma
  double harmonic = 0.0;
  for (int n = 1; n <= 200; ++n) {
    EXPECT_NEAR(digamma(n), harmonic - kEulerGamma, 1e-12) << n;
    harmonic += 1.0 / n;
  }
  EXPECT_THROW(digamma(0.0), Error);
}

TEST(Ksg, IndependentGaussiansNearZero) {
  std::mt19937_64 rng(1);
  const Matrix x = oracle::gaussian(5000, 1, rng), y = oracle::gaussian(5000, 1, rng);
  EXPECT_LE(std::abs(ksg_mi_raw(x, y)), 0.05);
}

TEST(Ksg, CorrelatedGaussians) {
  for (double rho : {0.5, 0.9}) {
    const auto [x, y] = correlated(rho, 5000, 2);
    EXPECT_NEAR(ksg_mi(x, y), gaussian_mi(rho), rho == 0.5 ? 0.05 : 0.1) << rho;
  }
  EXPECT_NEAR(gaussian_mi(0.9), 0.8304, 1e-4);
  EXPECT_NEAR(gaussian_mi(0.5), 0.1438, 1e-4);
}

TEST(Ksg, MeanOverSeedsHasSmallBias) {
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [x, y] = correlated(0.9, 5000, 100 + seed);
    sum += ksg_mi(x, y);
  }
  EXPECT_NEAR(sum / 20.0, gaussian_mi(0.9), 0.05);
}

TEST(Ksg, SymmetricExactly) {
  std::mt19937_64 rng(3);
  const Matrix x = oracle::gaussian(800, 2, rng);
  const Matrix y = x.col(0).replicate(1, 3) + oracle::gaussian(800, 3, rng);
  EXPECT_EQ(ksg_mi_raw(x, y), ksg_mi_raw(y, x));
}

TEST(Ksg, InvariantUnderShift) {
  std::mt19937_64 rng(4);
  const Matrix x = oracle::gaussian(1000, 2, rng);
  const Matrix y = x * oracle::gaussian(2, 2, rng) + 0.5 * oracle::gaussian(1000, 2, rng);
  const double base = ksg_mi_raw(x, y);
  EXPECT_NEAR(ksg_mi_raw(x.array() + 3.0, y), base, 1e-9);
  EXPECT_NEAR(ksg_mi_raw(x, y.array() - 7.25), base, 1e-9);
}

TEST(Ksg, DuplicatesAreHandled) {
  // Many exact ties in both marginals.
  Matrix x(400, 1), y(400, 1);
  for (int i = 0; i < 400; ++i) {
    x(i, 0) = i % 4;
    y(i, 0) = (i % 4) / 2;
  }
  const double mi = ksg_mi(x, y);
  EXPECT_TRUE(std::isfinite(mi));
  // y is a function of x, so the dependence must be clearly visible.
  EXPECT_GT(mi, 0.3);
}

TEST(Ksg, RequiresMorePointsThanNeighbors) {
  const Matrix x = Matrix::Random(3, 1), y = Matrix::Random(3, 1);
  EXPECT_THROW(ksg_mi(x, y, KsgOptions{3}), Error);
  EXPECT_THROW(ksg_mi(x, Matrix::Random(4, 1)), Error);
}

TEST(NormalizeSubspace, Examples) {
  std::mt19937_64 rng(5);
  Matrix x = oracle::gaussian(500, 2, rng);
  x.col(0) *= std::sqrt(3.0);
  const Matrix out = normalize_subspace(x);
  EXPECT_NEAR(total_variance(out), 1.0, 1e-9);
  EXPECT_LE((normalize_subspace(x * 10.0) - out).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((normalize_subspace(out) - out).cwiseAbs().maxCoeff(), 1e-12);
  try {
    normalize_subspace(Matrix::Ones(10, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::degenerate_subspace);
  }
}

TEST(PairwiseMi, IndependentBlocksAreSmallAndSymmetric) {
  std::mt19937_64 rng(6);
  std::vector<Matrix> parts{oracle::gaussian(2000, 2, rng), oracle::gaussian(2000, 3, rng),
                            oracle::gaussian(2000, 1, rng)};
  const auto mi = pairwise_mi(parts);
  EXPECT_EQ(mi.s, 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(mi.raw(i, i), 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(mi.raw(i, j), mi.raw(j, i));
      if (i != j) {
        EXPECT_LE(mi.normalized(i, j), 0.01);
        EXPECT_DOUBLE_EQ(mi.normalized(i, j), mi.raw(i, j) / (mi.dims[i] + mi.dims[j]));
      }
    }
  }
}

TEST(PairwiseMi, NoisyDuplicateIsTheMaximum) {
  std::mt19937_64 rng(7);
  const Matrix a = oracle::gaussian(2000, 2, rng);
  std::vector<Matrix> parts{a, oracle::gaussian(2000, 2, rng), a + 0.1 * oracle::gaussian(2000, 2, rng),
                            oracle::gaussian(2000, 1, rng)};
  const auto mi = pairwise_mi(parts);
  Eigen::Index r = 0, c = 0;
  mi.raw.maxCoeff(&r, &c);
  EXPECT_EQ(std::min(r, c), 0);
  EXPECT_EQ(std::max(r, c), 2);
  EXPECT_DOUBLE_EQ(mi.max_normalized(), mi.normalized(0, 2));
}

TEST(PairwiseMi, DegenerateSubspaceWarnsAndZeroes) {
  std::mt19937_64 rng(8);
  std::vector<Matrix> parts{oracle::gaussian(300, 2, rng), Matrix::Zero(300, 2), oracle::gaussian(300, 1, rng)};
  const auto mi = pairwise_mi(parts);
  EXPECT_EQ(mi.raw(0, 1), 0.0);
  EXPECT_EQ(mi.raw(1, 2), 0.0);
  EXPECT_EQ(mi.warnings.size(), 1u);
}

TEST(PairwiseMi, MiAgainstMatchesFullMatrixRow) {
  std::mt19937_64 rng(9);
  const Matrix a = oracle::gaussian(600, 2, rng);
  std::vector<Matrix> parts{a, a + oracle::gaussian(600, 2, rng), oracle::gaussian(600, 2, rng)};
  const auto full = pairwise_mi(parts);
  const auto row = mi_against(parts, 1);
  EXPECT_EQ(row.raw(1, 0), full.raw(1, 0));
  EXPECT_EQ(row.raw(1, 2), full.raw(1, 2));
  EXPECT_EQ(row.raw(0, 2), 0.0);
}

// Ground-truth partition of a trained (20,20) toy: each group's decoder columns
// span their own 6-dimensional subspace of the hidden space.
TEST(PairwiseMi, ToyGroundTruthBelowThresholdMixedAbove) {
  const auto preset = toy_preset("toy-2x20");
  ASSERT_TRUE(preset);
  const auto trained = train_toy(preset->spec, preset->hidden_dim, ToyTrainConfig{});
  const Matrix& w = trained.model.w;
  Matrix r(12, 12);
  for (int g = 0; g < 2; ++g) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w.middleCols(20 * g, 20), Eigen::ComputeFullU);
    r.middleRows(6 * g, 6) = svd.matrixU().leftCols(6).transpose();
  }
  // Orthonormalize the stacked bases (they are nearly orthogonal already).
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(r.transpose());
  Matrix q = qr.householderQ();
  for (int i = 0; i < 12; ++i)
    if (q.col(i).dot(r.row(i).transpose()) < 0) q.col(i) *= -1;
  const Matrix rotation = q.transpose();
  ASSERT_LE(orthogonality_error(rotation), 1e-10);

  auto rng = make_stream(0, "mi.toy");
  const Matrix x = sample_features(preset->spec, 4096, rng);
  const Matrix h = toy_forward(trained.model, x).h;
  const std::vector<std::size_t> c{6, 6};
  const auto truth = pairwise_mi(subspace_split(h * rotation.transpose(), c));
  EXPECT_LT(truth.max_normalized(), 0.04);

  // Swap half of each block with the other: every subspace now sees both groups.
  Matrix mixed = rotation;
  mixed.row(0).swap(mixed.row(6));
  mixed.row(1).swap(mixed.row(7));
  mixed.row(2).swap(mixed.row(8));
  const auto bad = pairwise_mi(subspace_split(h * mixed.transpose(), c));
  EXPECT_GT(bad.max_normalized(), 0.04);
}
