#pragma once

// Dense linear algebra substrate: row-major f64 matrices, the skew-symmetric
// exponential parametrization of rotations, Adam, and PCA.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ndm/rng.hpp"

namespace ndm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

bool all_finite(const Matrix& m);

// max |(MᵀM - I)_ij|
double orthogonality_error(const Matrix& m);

// Free parameters of a skew-symmetric matrix A (A = -Aᵀ). Entries are the
// strictly-lower triangle in row-major order: (1,0), (2,0), (2,1), (3,0), ...
class SkewParam {
 public:
  SkewParam() = default;
  explicit SkewParam(std::size_t dim);
  SkewParam(std::size_t dim, std::vector<double> values);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  // Index of entry (i, j), i > j.
  static std::size_t index(std::size_t i, std::size_t j) noexcept { return i * (i - 1) / 2 + j; }

  Matrix materialize() const;
  void set_zero();
  double norm() const;

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

// R = exp(A). Orthogonal to ~1e-13 for moderate ‖A‖.
Matrix orthogonalize(const SkewParam& p);

// dLoss/dp given dLoss/dR, R = exp(A). Uses the Fréchet derivative of exp via
// the 2n×2n block matrix [[Aᵀ, G], [0, Aᵀ]] and projects onto the skew basis.
std::vector<double> orthogonalize_vjp(const SkewParam& p, const Matrix& grad_r);

struct AdamState {
  std::size_t step = 0;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState with_size(std::size_t n, double lr);
  void reset();
};

// One bias-corrected Adam update of params in place. Deterministic in
// (state, params, grads).
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

// Linear interpolation from start to end over total steps, flat afterwards.
struct LinearSchedule {
  double start = 1e-3;
  double end = 1e-3;
  std::size_t total = 1;

  double at(std::size_t step) const;
};

struct PcaBasis {
  Vector eigenvalues;  // descending
  Matrix vectors;      // column i is the eigenvector of eigenvalues[i]
};

// Eigendecomposition of the sample covariance (n-1 denominator).
PcaBasis pca_basis(const Matrix& data);

Matrix covariance(const Matrix& data);

// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, sign-fixed R diagonal).
Matrix random_orthogonal(std::size_t n, Rng& rng);

}  // namespace ndm
