#pragma once

// Superposition toy autoencoder h = W x, x' = ReLU(Wᵀ h + b) with
// group-structured sparse features.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ndm/rng.hpp"
#include "ndm/tensor.hpp"

namespace ndm {

struct FeatureGroupSpec {
  std::vector<std::size_t> group_sizes;
  // Probability that a whole group is inactive in a sample.
  double group_sparsity = 0.25;

  std::size_t feature_count() const;
  std::size_t group_count() const { return group_sizes.size(); }
  // First column of each group, plus a trailing total.
  std::vector<std::size_t> offsets() const;
  std::size_t group_of(std::size_t feature) const;
  void validate() const;
};

struct ToyModel {
  Matrix w;  // d x z
  Vector b;  // z
  FeatureGroupSpec spec;

  std::size_t hidden_dim() const { return static_cast<std::size_t>(w.rows()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(w.cols()); }
};

struct ToyTrainConfig {
  std::size_t batch = 128;
  std::size_t steps = 10000;
  double lr_start = 3e-3;
  double lr_end = 3e-4;
  std::size_t eval_samples = 12800;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ToyTrainResult {
  ToyModel model;
  double fvu = 0.0;
};

// Per row and group: with probability group_sparsity all zeros, otherwise one
// uniformly chosen feature takes a value in U[0, 1].
Matrix sample_features(const FeatureGroupSpec& spec, std::size_t n, Rng& rng);

struct ToyOutput {
  Matrix h;      // n x d
  Matrix x_hat;  // n x z
};

ToyOutput toy_forward(const ToyModel& m, const Matrix& x);

// Decoder half only: ReLU(h W + b).
Matrix toy_decode(const ToyModel& m, const Matrix& h);

struct ToyLossGrad {
  double loss = 0.0;  // mean over rows, sum over features, of squared error
  Matrix dw;
  Vector db;
};

ToyLossGrad toy_loss_grad(const ToyModel& m, const Matrix& x);

ToyModel init_toy(const FeatureGroupSpec& spec, std::size_t d, Rng& rng);

ToyTrainResult train_toy(const FeatureGroupSpec& spec, std::size_t d, const ToyTrainConfig& cfg);

// Residual sum of squares over total sum of squares around column means.
double fvu(const Matrix& x, const Matrix& x_hat);

// WᵀW, z x z.
Matrix gram(const ToyModel& m);

// Largest |entry| of WᵀW between features of different groups, relative to the
// global largest |entry|.
double cross_group_ratio(const Matrix& gram_matrix, const FeatureGroupSpec& spec);

struct PurityReport {
  std::vector<double> purity;
  std::vector<bool> degenerate;

  double mean() const;
};

// For each subspace (row block of rw given by c): the largest share of its
// squared energy that falls in the columns of a single feature group.
PurityReport block_purity(const Matrix& rw, const FeatureGroupSpec& spec,
                          std::span<const std::size_t> c);

struct ToyPreset {
  std::string name;
  FeatureGroupSpec spec;
  std::size_t hidden_dim;
};

std::optional<ToyPreset> toy_preset(std::string_view name);
std::vector<std::string> toy_preset_names();

}  // namespace ndm
