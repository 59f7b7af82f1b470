#include "ndm/mi.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "ndm/error.hpp"
#include "ndm/parallel.hpp"

namespace ndm {
namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Keyed on the rank order of the column, so adding a constant or rescaling
// leaves the noise pattern unchanged.
std::uint64_t column_hash(const Matrix& m, Eigen::Index col) {
  std::vector<std::uint32_t> order(static_cast<std::size_t>(m.rows()));
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) { return m(a, col) < m(b, col); });
  std::uint64_t h = 1469598103934665603ull ^ static_cast<std::uint64_t>(col);
  for (auto r : order) {
    h ^= r;
    h *= 1099511628211ull;
  }
  return h;
}

// Adds ±jitter·scale noise keyed on (column ranks, row). The key never
// depends on argument order, so ksg(x, y) and ksg(y, x) see identical points,
// and distinct columns get independent noise.
Matrix jittered(const Matrix& m, double jitter) {
  Matrix out = m;
  if (jitter <= 0.0 || m.rows() < 2) return out;
  const Eigen::RowVectorXd mean = m.colwise().mean();
  const double total_var = (m.rowwise() - mean).squaredNorm() / static_cast<double>(m.rows() - 1);
  const double rms = std::sqrt(total_var / static_cast<double>(std::max<Eigen::Index>(1, m.cols())));
  const double scale = jitter * (rms > 0.0 ? rms : 1.0);
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    const std::uint64_t key = column_hash(m, c);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      const std::uint64_t bits = splitmix64(key ^ splitmix64(static_cast<std::uint64_t>(r)));
      const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0, 1)
      out(r, c) += scale * (2.0 * u - 1.0);
    }
  }
  return out;
}

double max_norm_distance(const double* a, const double* b, Eigen::Index d) {
  double m = 0.0;
  for (Eigen::Index c = 0; c < d; ++c) m = std::max(m, std::abs(a[c] - b[c]));
  return m;
}

}  // namespace

double digamma(double x) {
  require(x > 0.0, Errc::invalid_argument, "digamma defined here for x > 0 only");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number asymptotic expansion.
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double ksg_mi_raw(const Matrix& x_in, const Matrix& y_in, const KsgOptions& opt) {
  require(opt.k >= 1, Errc::invalid_argument, "k must be >= 1");
  require(x_in.rows() == y_in.rows(), Errc::shape_mismatch, "x and y need the same number of rows");
  const Eigen::Index n = x_in.rows();
  require(n > opt.k, Errc::invalid_argument, "KSG needs n > k");
  require(all_finite(x_in) && all_finite(y_in), Errc::non_finite, "KSG input contains non-finite values");

  const Matrix x = jittered(x_in, opt.jitter);
  const Matrix y = jittered(y_in, opt.jitter);
  const Eigen::Index dx = x.cols();
  const Eigen::Index dy = y.cols();
  const auto k = static_cast<std::size_t>(opt.k);

  std::vector<double> per_point(static_cast<std::size_t>(n), 0.0);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t ui) {
    const auto i = static_cast<Eigen::Index>(ui);
    thread_local std::vector<double> ex, ey, ez;
    ex.resize(static_cast<std::size_t>(n - 1));
    ey.resize(ex.size());
    ez.resize(ex.size());
    std::size_t w = 0;
    const double* xi = x.row(i).data();
    const double* yi = y.row(i).data();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      ex[w] = max_norm_distance(xi, x.row(j).data(), dx);
      ey[w] = max_norm_distance(yi, y.row(j).data(), dy);
      ez[w] = std::max(ex[w], ey[w]);
      ++w;
    }
    std::nth_element(ez.begin(), ez.begin() + static_cast<std::ptrdiff_t>(k - 1), ez.end());
    const double eps = ez[k - 1];
    std::size_t nx = 0, ny = 0;
    for (std::size_t j = 0; j < ex.size(); ++j) {
      nx += ex[j] < eps;
      ny += ey[j] < eps;
    }
    per_point[ui] = digamma(static_cast<double>(nx) + 1.0) + digamma(static_cast<double>(ny) + 1.0);
  });

  double mean = 0.0;
  for (double v : per_point) mean += v;
  mean /= static_cast<double>(n);
  return digamma(static_cast<double>(opt.k)) + digamma(static_cast<double>(n)) - mean;
}

double ksg_mi(const Matrix& x, const Matrix& y, const KsgOptions& opt) {
  return std::max(0.0, ksg_mi_raw(x, y, opt));
}

Matrix normalize_subspace(const Matrix& h) {
  require(h.rows() >= 2, Errc::contract_violation, "normalize_subspace needs at least 2 rows");
  const Eigen::RowVectorXd mean = h.colwise().mean();
  const double total_var = (h.rowwise() - mean).squaredNorm() / static_cast<double>(h.rows() - 1);
  if (!(total_var > 0.0)) throw Error(Errc::degenerate_subspace, "subspace has zero total variance");
  return h / std::sqrt(total_var);
}

double MIMatrix::max_normalized() const {
  double best = 0.0;
  for (Eigen::Index i = 0; i < normalized.rows(); ++i)
    for (Eigen::Index j = 0; j < normalized.cols(); ++j)
      if (i != j) best = std::max(best, normalized(i, j));
  return best;
}

namespace {

MIMatrix estimate_pairs(std::span<const Matrix> parts, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                        const KsgOptions& opt) {
  MIMatrix out;
  out.s = parts.size();
  out.k = opt.k;
  out.raw = Matrix::Zero(static_cast<Eigen::Index>(out.s), static_cast<Eigen::Index>(out.s));
  out.normalized = out.raw;
  if (parts.empty()) return out;
  out.sample_n = static_cast<std::size_t>(parts[0].rows());
  for (const auto& p : parts)
    require(static_cast<std::size_t>(p.rows()) == out.sample_n, Errc::shape_mismatch,
            "all subspaces must share the sample count");

  std::vector<Matrix> normed(parts.size());
  std::vector<bool> degenerate(parts.size(), false);
  for (std::size_t s = 0; s < parts.size(); ++s) {
    out.dims.push_back(static_cast<std::size_t>(parts[s].cols()));
    try {
      normed[s] = normalize_subspace(parts[s]);
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_subspace) throw;
      degenerate[s] = true;
      out.warnings.push_back("subspace " + std::to_string(s) + " is degenerate; its MI entries are set to 0");
    }
  }

  for (const auto& [a, b] : pairs) {
    if (degenerate[a] || degenerate[b]) continue;
    const double mi = ksg_mi(normed[a], normed[b], opt);
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    out.raw(ia, ib) = out.raw(ib, ia) = mi;
    const double norm = mi / static_cast<double>(out.dims[a] + out.dims[b]);
    out.normalized(ia, ib) = out.normalized(ib, ia) = norm;
  }
  return out;
}

}  // namespace

MIMatrix pairwise_mi(std::span<const Matrix> parts, const KsgOptions& opt) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < parts.size(); ++a)
    for (std::size_t b = a + 1; b < parts.size(); ++b) pairs.emplace_back(a, b);
  return estimate_pairs(parts, pairs, opt);
}

MIMatrix mi_against(std::span<const Matrix> parts, std::size_t anchor, const KsgOptions& opt) {
  require(anchor < parts.size(), Errc::invalid_argument, "anchor subspace out of range");
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t b = 0; b < parts.size(); ++b)
    if (b != anchor) pairs.emplace_back(std::min(anchor, b), std::max(anchor, b));
  return estimate_pairs(parts, pairs, opt);
}

}  // namespace ndm
