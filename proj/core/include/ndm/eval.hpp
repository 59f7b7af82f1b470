#pragma once

// Subspace patching, patching-effect metrics, Gini concentration, and the
// baseline partitions that NDM is compared against.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndm/activation_io.hpp"
#include "ndm/ndm.hpp"
#include "ndm/tensor.hpp"
#include "ndm/toy_model.hpp"

namespace ndm {

// Rᵀ · (R h_cln with block s taken from R h_crp).
Vector patch_compose(const Vector& h_cln, const Vector& h_crp, const Partition& p, std::size_t s);
Vector patch_compose(const Vector& h_cln, const Vector& h_crp, const Matrix& r, std::span<const std::size_t> c,
                     std::size_t s);

struct LogitPair {
  double clean_io = 0.0;
  double clean_s = 0.0;
  double patched_io = 0.0;
  double patched_s = 0.0;
};

double delta_ld(const LogitPair& p);
// Throws Errc::invalid_argument when a mass lies outside [0, 1].
double delta_p(double clean_mass, double patched_mass);

struct GiniResult {
  double value = 0.0;
  std::size_t clamped = 0;  // negative entries set to zero
};

// Σ|Δi−Δj| / (2·S·ΣΔ). Negative entries are clamped to zero and counted.
// Throws Errc::no_effect if nothing positive remains.
GiniResult gini_detail(std::span<const double> effects);
double gini(std::span<const double> effects);

struct PatchingRecord {
  std::vector<double> effect;
  std::vector<std::size_t> dims;
  std::vector<double> var;

  void validate() const;
};

struct GiniReport {
  double raw = 0.0;
  double per_dim = 0.0;
  double per_var = 0.0;
  std::size_t clamped = 0;
  std::vector<std::string> warnings;
};

GiniReport gini_report(const PatchingRecord& rec);

enum class BaselineKind { identity, random, pca1, pca2 };

std::string_view to_string(BaselineKind k);
BaselineKind parse_baseline(std::string_view s);

Partition baseline_partition(BaselineKind kind, const ActivationSet& data, std::span<const std::size_t> c,
                             std::uint64_t seed = 0);

// Per subspace, the summed sample variance (n-1) of its rotated axes.
std::vector<double> subspace_variances(const Matrix& data, const Partition& p);

// Toy patching: the readout is the sum of the decoded features of one group.
struct ToyPatchingOptions {
  std::size_t group = 0;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
};

struct ToyPatchingResult {
  PatchingRecord record;
  GiniReport gini;
  double clean_readout_mean = 0.0;
};

double toy_group_readout(const ToyModel& m, const Vector& h, std::size_t group);

// Clean inputs are toy samples; the counterfactual resamples the chosen group
// only. Δ_s is the mean absolute readout change after patching subspace s.
ToyPatchingResult toy_patching(const ToyModel& m, const Partition& p, const ToyPatchingOptions& opt);

}  // namespace ndm
