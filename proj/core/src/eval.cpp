#include "ndm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ndm/error.hpp"
#include "ndm/rng.hpp"

namespace ndm {

Vector patch_compose(const Vector& h_cln, const Vector& h_crp, const Matrix& r, std::span<const std::size_t> c,
                     std::size_t s) {
  require(s < c.size(), Errc::invalid_argument, "subspace index out of range");
  require(h_cln.size() == r.cols() && h_crp.size() == r.cols(), Errc::shape_mismatch,
          "activations must have d entries");
  validate_config(c, static_cast<std::size_t>(r.rows()));
  if (h_cln == h_crp) return h_cln;
  Vector z = r * h_cln;
  const Vector z_crp = r * h_crp;
  const auto start = static_cast<Eigen::Index>(std::accumulate(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(s),
                                                               std::size_t{0}));
  const auto len = static_cast<Eigen::Index>(c[s]);
  z.segment(start, len) = z_crp.segment(start, len);
  return r.transpose() * z;
}

Vector patch_compose(const Vector& h_cln, const Vector& h_crp, const Partition& p, std::size_t s) {
  return patch_compose(h_cln, h_crp, p.rotation(), p.config(), s);
}

double delta_ld(const LogitPair& p) {
  return (p.clean_io - p.clean_s) - (p.patched_io - p.patched_s);
}

double delta_p(double clean_mass, double patched_mass) {
  require(clean_mass >= 0.0 && clean_mass <= 1.0 && patched_mass >= 0.0 && patched_mass <= 1.0,
          Errc::invalid_argument, "probability masses must lie in [0, 1]");
  return clean_mass - patched_mass;
}

GiniResult gini_detail(std::span<const double> effects) {
  require(!effects.empty(), Errc::no_effect, "no effects given");
  GiniResult out;
  std::vector<double> v(effects.begin(), effects.end());
  for (double& x : v) {
    require(std::isfinite(x), Errc::non_finite, "effects must be finite");
    if (x < 0.0) {
      x = 0.0;
      ++out.clamped;
    }
  }
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  require(total > 0.0, Errc::no_effect, "all patching effects are zero");
  // Sorted form of Σ|Δi−Δj|: 2 Σ_i (2i − S + 1) Δ_(i).
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += (2.0 * static_cast<double>(i) - n + 1.0) * v[i];
  out.value = (2.0 * acc) / (2.0 * n * total);
  return out;
}

double gini(std::span<const double> effects) { return gini_detail(effects).value; }

void PatchingRecord::validate() const {
  require(!effect.empty(), Errc::invalid_argument, "empty patching record");
  require(dims.size() == effect.size() && var.size() == effect.size(), Errc::shape_mismatch,
          "effect, dims and var must have equal length");
  for (auto d : dims) require(d > 0, Errc::invalid_argument, "subspace dims must be positive");
  for (double x : var) require(std::isfinite(x) && x >= 0.0, Errc::invalid_argument, "variances must be >= 0");
}

GiniReport gini_report(const PatchingRecord& rec) {
  rec.validate();
  GiniReport out;
  const GiniResult raw = gini_detail(rec.effect);
  out.raw = raw.value;
  out.clamped = raw.clamped;
  if (raw.clamped > 0)
    out.warnings.push_back(std::to_string(raw.clamped) + " negative effect(s) clamped to zero");

  std::vector<double> per_dim(rec.effect.size());
  for (std::size_t s = 0; s < per_dim.size(); ++s) per_dim[s] = rec.effect[s] / static_cast<double>(rec.dims[s]);
  out.per_dim = gini(per_dim);

  std::vector<double> per_var;
  for (std::size_t s = 0; s < rec.effect.size(); ++s) {
    if (rec.var[s] == 0.0) {
      out.warnings.push_back("subspace " + std::to_string(s) + " has zero variance; excluded from per-variance Gini");
      continue;
    }
    per_var.push_back(rec.effect[s] / rec.var[s]);
  }
  require(!per_var.empty(), Errc::zero_variance, "every subspace has zero variance");
  out.per_var = gini(per_var);
  return out;
}

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::identity: return "identity";
    case BaselineKind::random: return "random";
    case BaselineKind::pca1: return "pca1";
    case BaselineKind::pca2: return "pca2";
  }
  return "?";
}

BaselineKind parse_baseline(std::string_view s) {
  if (s == "identity") return BaselineKind::identity;
  if (s == "random") return BaselineKind::random;
  if (s == "pca1") return BaselineKind::pca1;
  if (s == "pca2") return BaselineKind::pca2;
  throw Error(Errc::invalid_argument, "unknown baseline '" + std::string(s) + "'");
}

Partition baseline_partition(BaselineKind kind, const ActivationSet& data, std::span<const std::size_t> c,
                             std::uint64_t seed) {
  const std::size_t d = data.dim();
  validate_config(c, d);
  std::vector<std::size_t> cfg(c.begin(), c.end());
  switch (kind) {
    case BaselineKind::identity:
      return Partition::identity(d, std::move(cfg));
    case BaselineKind::random: {
      Rng rng = make_stream(seed, "baseline.random");
      return Partition(random_orthogonal(d, rng), std::move(cfg));
    }
    case BaselineKind::pca1:
    case BaselineKind::pca2: {
      require(data.rows() >= 2, Errc::invalid_argument, "PCA baselines need at least two rows");
      const PcaBasis basis = pca_basis(data.data);
      const auto n = static_cast<Eigen::Index>(d);
      Matrix r(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        // Column order is descending eigenvalue; pca1 reverses it.
        const Eigen::Index col = kind == BaselineKind::pca2 ? i : n - 1 - i;
        r.row(i) = basis.vectors.col(col).transpose();
      }
      return Partition(std::move(r), std::move(cfg));
    }
  }
  throw Error(Errc::invalid_argument, "unknown baseline");
}

std::vector<double> subspace_variances(const Matrix& data, const Partition& p) {
  require(data.rows() >= 2, Errc::invalid_argument, "need at least two rows for variances");
  require(static_cast<std::size_t>(data.cols()) == p.dim(), Errc::shape_mismatch, "data width must match R");
  const Matrix proj = data * p.rotation().transpose();
  const Eigen::RowVectorXd mean = proj.colwise().mean();
  const Eigen::RowVectorXd var =
      (proj.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(data.rows() - 1);
  std::vector<double> out;
  Eigen::Index col = 0;
  for (auto ds : p.config()) {
    out.push_back(var.segment(col, static_cast<Eigen::Index>(ds)).sum());
    col += static_cast<Eigen::Index>(ds);
  }
  return out;
}

double toy_group_readout(const ToyModel& m, const Vector& h, std::size_t group) {
  const auto offs = m.spec.offsets();
  require(group + 1 < offs.size(), Errc::invalid_argument, "group index out of range");
  const Matrix x_hat = toy_decode(m, h.transpose());
  return x_hat.row(0)
      .segment(static_cast<Eigen::Index>(offs[group]), static_cast<Eigen::Index>(offs[group + 1] - offs[group]))
      .sum();
}

ToyPatchingResult toy_patching(const ToyModel& m, const Partition& p, const ToyPatchingOptions& opt) {
  require(p.dim() == m.hidden_dim(), Errc::shape_mismatch, "partition dimension must match the toy model");
  require(opt.samples >= 2, Errc::invalid_argument, "need at least two samples");
  const auto offs = m.spec.offsets();
  require(opt.group + 1 < offs.size(), Errc::invalid_argument, "group index out of range");

  Rng rng = make_stream(opt.seed, "patch.samples");
  const Matrix x_cln = sample_features(m.spec, opt.samples, rng);
  Matrix x_crp = x_cln;
  const Matrix resample = sample_features(m.spec, opt.samples, rng);
  const auto g0 = static_cast<Eigen::Index>(offs[opt.group]);
  const auto gl = static_cast<Eigen::Index>(offs[opt.group + 1] - offs[opt.group]);
  x_crp.middleCols(g0, gl) = resample.middleCols(g0, gl);

  const Matrix h_cln = x_cln * m.w.transpose();
  const Matrix h_crp = x_crp * m.w.transpose();
  const Matrix r = p.rotation();
  const std::size_t S = p.subspace_count();

  ToyPatchingResult out;
  out.record.effect.assign(S, 0.0);
  out.record.dims = p.config();
  Matrix all(h_cln.rows() * 2, h_cln.cols());
  all << h_cln, h_crp;
  out.record.var = subspace_variances(all, p);

  double clean_sum = 0.0;
  for (Eigen::Index i = 0; i < h_cln.rows(); ++i) {
    const Vector hc = h_cln.row(i).transpose();
    const Vector hx = h_crp.row(i).transpose();
    const double y = toy_group_readout(m, hc, opt.group);
    clean_sum += y;
    for (std::size_t s = 0; s < S; ++s) {
      const Vector patched = patch_compose(hc, hx, r, p.config(), s);
      out.record.effect[s] += std::abs(toy_group_readout(m, patched, opt.group) - y);
    }
  }
  const double inv = 1.0 / static_cast<double>(opt.samples);
  for (double& e : out.record.effect) e *= inv;
  out.clean_readout_mean = clean_sum * inv;
  out.gini = gini_report(out.record);
  return out;
}

}  // namespace ndm
