#pragma once

// Kraskov-Stögbauer-Grassberger mutual information (estimator I(1)) between
// subspace activations, and the dimension-normalized MI matrix used for
// merge decisions.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ndm/tensor.hpp"

namespace ndm {

// ψ(x) for x > 0; recurrence up to x >= 10, then the asymptotic series.
double digamma(double x);

struct KsgOptions {
  int k = 3;
  // Half-width of the deterministic uniform noise added before estimation,
  // relative to the RMS per-column std. Besides breaking ties it sets a
  // resolution floor: dependence living below this scale (e.g. a tiny leak
  // inside an exact-zero atom) is not counted.
  double jitter = 3e-2;
};

// Unclamped KSG estimate in nats. Requires n > k >= 1.
double ksg_mi_raw(const Matrix& x, const Matrix& y, const KsgOptions& opt = {});

// Reported value: max(0, ksg_mi_raw).
double ksg_mi(const Matrix& x, const Matrix& y, const KsgOptions& opt = {});

// Divides every entry by sqrt(sum of per-column variances). Throws
// Errc::degenerate_subspace when that sum is zero.
Matrix normalize_subspace(const Matrix& h);

struct MIMatrix {
  std::size_t s = 0;
  Matrix raw;         // nats, symmetric, zero diagonal
  Matrix normalized;  // raw(i,j) / (d_i + d_j)
  std::vector<std::size_t> dims;
  std::size_t sample_n = 0;
  int k = 3;
  std::vector<std::string> warnings;

  // Largest off-diagonal normalized entry (0 when s < 2).
  double max_normalized() const;
};

// Normalizes each subspace, then estimates MI for every unordered pair.
// Degenerate subspaces contribute zeros and a warning.
MIMatrix pairwise_mi(std::span<const Matrix> parts, const KsgOptions& opt = {});

// Same, but only the pairs (anchor, j) are estimated; other entries stay 0.
MIMatrix mi_against(std::span<const Matrix> parts, std::size_t anchor, const KsgOptions& opt = {});

}  // namespace ndm
