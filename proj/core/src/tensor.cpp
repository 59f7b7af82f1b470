#include "ndm/tensor.hpp"

#include <cmath>

#include <unsupported/Eigen/MatrixFunctions>

#include "ndm/error.hpp"

namespace ndm {

bool all_finite(const Matrix& m) { return m.allFinite(); }

double orthogonality_error(const Matrix& m) {
  const Matrix gram = m.transpose() * m;
  return (gram - Matrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff();
}

SkewParam::SkewParam(std::size_t dim) : dim_(dim), values_(dim * (dim ? dim - 1 : 0) / 2, 0.0) {}

SkewParam::SkewParam(std::size_t dim, std::vector<double> values)
    : dim_(dim), values_(std::move(values)) {
  require(values_.size() == dim * (dim ? dim - 1 : 0) / 2, Errc::shape_mismatch,
          "skew parameter count must be dim*(dim-1)/2");
}

Matrix SkewParam::materialize() const {
  Matrix a = Matrix::Zero(dim_, dim_);
  for (std::size_t i = 1; i < dim_; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = values_[index(i, j)];
      a(i, j) = v;
      a(j, i) = -v;
    }
  }
  return a;
}

void SkewParam::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

double SkewParam::norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return std::sqrt(s);
}

Matrix orthogonalize(const SkewParam& p) {
  require(p.dim() >= 1, Errc::contract_violation, "orthogonalize needs dim >= 1");
  const Eigen::MatrixXd a = p.materialize();
  return a.exp();
}

std::vector<double> orthogonalize_vjp(const SkewParam& p, const Matrix& grad_r) {
  const auto n = static_cast<Eigen::Index>(p.dim());
  require(grad_r.rows() == n && grad_r.cols() == n, Errc::shape_mismatch,
          "grad_R must be dim x dim");
  std::vector<double> out(p.size(), 0.0);
  if (grad_r.isZero(0.0)) return out;

  // L_exp(Aᵀ, G) is the adjoint of the Fréchet derivative of exp at A.
  const Eigen::MatrixXd at = p.materialize().transpose();
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = at;
  block.bottomRightCorner(n, n) = at;
  block.topRightCorner(n, n) = grad_r;
  const Eigen::MatrixXd e = block.exp();
  const Eigen::MatrixXd frechet = e.topRightCorner(n, n);

  for (Eigen::Index i = 1; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      out[SkewParam::index(i, j)] = frechet(i, j) - frechet(j, i);
    }
  }
  return out;
}

AdamState AdamState::with_size(std::size_t n, double lr) {
  AdamState s;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  s.lr = lr;
  return s;
}

void AdamState::reset() {
  step = 0;
  std::fill(m.begin(), m.end(), 0.0);
  std::fill(v.begin(), v.end(), 0.0);
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  require(params.size() == grads.size() && params.size() == state.m.size() &&
              state.m.size() == state.v.size(),
          Errc::contract_violation, "adam_step: parameter, gradient and moment lengths differ");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

double LinearSchedule::at(std::size_t step) const {
  if (total <= 1) return end;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
  return start + (end - start) * frac;
}

Matrix covariance(const Matrix& data) {
  require(data.rows() >= 2, Errc::contract_violation, "covariance needs at least 2 rows");
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const Matrix centered = data.rowwise() - mean;
  return (centered.transpose() * centered) / static_cast<double>(data.rows() - 1);
}

PcaBasis pca_basis(const Matrix& data) {
  require(data.rows() >= 2, Errc::contract_violation, "pca_basis needs at least 2 rows");
  require(all_finite(data), Errc::non_finite, "pca_basis input contains non-finite values");
  const Eigen::MatrixXd cov = covariance(data);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  require(solver.info() == Eigen::Success, Errc::non_finite, "eigendecomposition failed");
  // Eigen returns ascending order.
  const Eigen::Index d = cov.rows();
  PcaBasis out;
  out.eigenvalues.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.eigenvalues(i) = solver.eigenvalues()(d - 1 - i);
    out.vectors.col(i) = solver.eigenvectors().col(d - 1 - i);
  }
  return out;
}

Matrix random_orthogonal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.rows(); ++i)
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

}  // namespace ndm
