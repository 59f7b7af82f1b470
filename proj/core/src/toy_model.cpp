#include "ndm/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ndm/error.hpp"

namespace ndm {

std::size_t FeatureGroupSpec::feature_count() const {
  return std::accumulate(group_sizes.begin(), group_sizes.end(), std::size_t{0});
}

std::vector<std::size_t> FeatureGroupSpec::offsets() const {
  std::vector<std::size_t> out(group_sizes.size() + 1, 0);
  std::partial_sum(group_sizes.begin(), group_sizes.end(), out.begin() + 1);
  return out;
}

std::size_t FeatureGroupSpec::group_of(std::size_t feature) const {
  std::size_t acc = 0;
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    acc += group_sizes[g];
    if (feature < acc) return g;
  }
  throw Error(Errc::invalid_argument, "feature index out of range");
}

void FeatureGroupSpec::validate() const {
  require(!group_sizes.empty(), Errc::invalid_argument, "at least one feature group required");
  for (auto s : group_sizes) require(s >= 1, Errc::invalid_argument, "group size must be >= 1");
  require(group_sparsity >= 0.0 && group_sparsity <= 1.0, Errc::invalid_argument,
          "group_sparsity must lie in [0, 1]");
}

void ToyTrainConfig::validate() const {
  require(steps >= 1, Errc::invalid_argument, "steps must be >= 1");
  require(batch >= 1, Errc::invalid_argument, "batch must be >= 1");
  require(lr_end > 0.0 && lr_start >= lr_end, Errc::invalid_argument,
          "need lr_start >= lr_end > 0");
  require(eval_samples >= 2, Errc::invalid_argument, "eval_samples must be >= 2");
}

Matrix sample_features(const FeatureGroupSpec& spec, std::size_t n, Rng& rng) {
  spec.validate();
  const auto offsets = spec.offsets();
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.feature_count()));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t g = 0; g < spec.group_sizes.size(); ++g) {
      if (unit(rng) < spec.group_sparsity) continue;
      std::uniform_int_distribution<std::size_t> pick(0, spec.group_sizes[g] - 1);
      const std::size_t f = offsets[g] + pick(rng);
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = unit(rng);
    }
  }
  return x;
}

Matrix toy_decode(const ToyModel& m, const Matrix& h) {
  require(h.cols() == m.w.rows(), Errc::shape_mismatch, "h must have d columns");
  Matrix pre = h * m.w;
  pre.rowwise() += m.b.transpose();
  return pre.cwiseMax(0.0);
}

ToyOutput toy_forward(const ToyModel& m, const Matrix& x) {
  require(x.cols() == m.w.cols(), Errc::shape_mismatch, "x must have z columns");
  ToyOutput out;
  out.h = x * m.w.transpose();
  out.x_hat = toy_decode(m, out.h);
  return out;
}

ToyLossGrad toy_loss_grad(const ToyModel& m, const Matrix& x) {
  require(x.cols() == m.w.cols() && x.rows() >= 1, Errc::shape_mismatch, "x must have z columns");
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  const Matrix h = x * m.w.transpose();
  Matrix pre = h * m.w;
  pre.rowwise() += m.b.transpose();
  const Matrix x_hat = pre.cwiseMax(0.0);
  const Matrix resid = x_hat - x;

  ToyLossGrad out;
  out.loss = resid.squaredNorm() * inv_n;
  // dL/dpre, masked by the ReLU.
  const Matrix g = (2.0 * inv_n) * resid.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
  out.db = g.colwise().sum().transpose();
  // Decoder use of W (pre = h W) plus encoder use (h = x Wᵀ).
  out.dw = h.transpose() * g + (g * m.w.transpose()).transpose() * x;
  return out;
}

ToyModel init_toy(const FeatureGroupSpec& spec, std::size_t d, Rng& rng) {
  spec.validate();
  const std::size_t z = spec.feature_count();
  std::normal_distribution<double> normal(0.0, 0.3 / std::sqrt(static_cast<double>(d)));
  ToyModel m;
  m.spec = spec;
  m.w.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(z));
  for (Eigen::Index i = 0; i < m.w.rows(); ++i)
    for (Eigen::Index j = 0; j < m.w.cols(); ++j) m.w(i, j) = normal(rng);
  m.b = Vector::Zero(static_cast<Eigen::Index>(z));
  return m;
}

ToyTrainResult train_toy(const FeatureGroupSpec& spec, std::size_t d, const ToyTrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  require(d >= 1 && d <= spec.feature_count(), Errc::invalid_argument,
          "hidden dim must satisfy 1 <= d <= z");

  Rng init_rng = make_stream(cfg.seed, "toy.init");
  Rng data_rng = make_stream(cfg.seed, "toy.data");
  Rng eval_rng = make_stream(cfg.seed, "toy.eval");

  ToyModel m = init_toy(spec, d, init_rng);
  const std::size_t nw = static_cast<std::size_t>(m.w.size());
  const std::size_t nb = static_cast<std::size_t>(m.b.size());
  std::vector<double> params(nw + nb);
  std::vector<double> grads(nw + nb);
  AdamState adam = AdamState::with_size(params.size(), cfg.lr_start);
  const LinearSchedule schedule{cfg.lr_start, cfg.lr_end, cfg.steps};

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Matrix x = sample_features(spec, cfg.batch, data_rng);
    const ToyLossGrad lg = toy_loss_grad(m, x);
    std::copy(m.w.data(), m.w.data() + nw, params.begin());
    std::copy(m.b.data(), m.b.data() + nb, params.begin() + static_cast<std::ptrdiff_t>(nw));
    std::copy(lg.dw.data(), lg.dw.data() + nw, grads.begin());
    std::copy(lg.db.data(), lg.db.data() + nb, grads.begin() + static_cast<std::ptrdiff_t>(nw));
    adam.lr = schedule.at(step);
    adam_step(adam, params, grads);
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(nw), m.w.data());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(nw), params.end(), m.b.data());
  }

  const Matrix x_eval = sample_features(spec, cfg.eval_samples, eval_rng);
  const ToyOutput out = toy_forward(m, x_eval);
  return ToyTrainResult{std::move(m), fvu(x_eval, out.x_hat)};
}

double fvu(const Matrix& x, const Matrix& x_hat) {
  require(x.rows() == x_hat.rows() && x.cols() == x_hat.cols(), Errc::shape_mismatch,
          "fvu inputs must share a shape");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const double total = (x.rowwise() - mean).squaredNorm();
  require(total > 0.0, Errc::zero_variance, "fvu undefined for zero-variance input");
  return (x - x_hat).squaredNorm() / total;
}

Matrix gram(const ToyModel& m) { return m.w.transpose() * m.w; }

double cross_group_ratio(const Matrix& gram_matrix, const FeatureGroupSpec& spec) {
  const std::size_t z = spec.feature_count();
  require(gram_matrix.rows() == static_cast<Eigen::Index>(z) && gram_matrix.cols() == gram_matrix.rows(),
          Errc::shape_mismatch, "gram must be z x z");
  std::vector<std::size_t> group(z);
  for (std::size_t f = 0; f < z; ++f) group[f] = spec.group_of(f);
  double cross = 0.0;
  const double global = gram_matrix.cwiseAbs().maxCoeff();
  for (std::size_t i = 0; i < z; ++i)
    for (std::size_t j = 0; j < z; ++j)
      if (group[i] != group[j])
        cross = std::max(cross, std::abs(gram_matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
  return global > 0.0 ? cross / global : 0.0;
}

double PurityReport::mean() const {
  if (purity.empty()) return 0.0;
  return std::accumulate(purity.begin(), purity.end(), 0.0) / static_cast<double>(purity.size());
}

PurityReport block_purity(const Matrix& rw, const FeatureGroupSpec& spec,
                          std::span<const std::size_t> c) {
  const auto offsets = spec.offsets();
  require(rw.cols() == static_cast<Eigen::Index>(spec.feature_count()), Errc::shape_mismatch,
          "rw must have z columns");
  const std::size_t rows = std::accumulate(c.begin(), c.end(), std::size_t{0});
  require(rw.rows() == static_cast<Eigen::Index>(rows), Errc::shape_mismatch,
          "configuration does not cover the rows of rw");

  PurityReport report;
  std::size_t row = 0;
  for (const std::size_t ds : c) {
    const auto block = rw.middleRows(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(ds));
    const double total = block.squaredNorm();
    double best = 0.0;
    for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
      const auto cols = static_cast<Eigen::Index>(offsets[g + 1] - offsets[g]);
      best = std::max(best, block.middleCols(static_cast<Eigen::Index>(offsets[g]), cols).squaredNorm());
    }
    if (total > 0.0) {
      report.purity.push_back(best / total);
      report.degenerate.push_back(false);
    } else {
      report.purity.push_back(1.0);
      report.degenerate.push_back(true);
    }
    row += ds;
  }
  return report;
}

std::optional<ToyPreset> toy_preset(std::string_view name) {
  if (name == "toy-2x20") return ToyPreset{"toy-2x20", {{20, 20}, 0.25}, 12};
  if (name == "toy-4group") return ToyPreset{"toy-4group", {{5, 15, 5, 15}, 0.25}, 12};
  if (name == "toy-2x80") return ToyPreset{"toy-2x80", {{80, 80}, 0.25}, 32};
  // Sixteen groups of three, each fitting exactly in a plane. With many
  // subspaces a concentrated patching effect can reach a high Gini.
  if (name == "toy-16x3") return ToyPreset{"toy-16x3", {std::vector<std::size_t>(16, 3), 0.25}, 32};
  return std::nullopt;
}

std::vector<std::string> toy_preset_names() { return {"toy-2x20", "toy-4group", "toy-2x80", "toy-16x3"}; }

}  // namespace ndm
