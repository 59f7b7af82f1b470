#pragma once

// Neighbor distance minimization: learn an orthogonal R and a dimension
// configuration c such that, after rotating activations by R and splitting the
// coordinates by c, each point sits close to its nearest neighbor inside every
// subspace. Subspaces whose normalized mutual information exceeds a threshold
// are merged until none remain.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ndm/activation_io.hpp"
#include "ndm/mi.hpp"
#include "ndm/rng.hpp"
#include "ndm/tensor.hpp"

namespace ndm {

enum class Distance { euclidean, one_minus_cosine };

std::string_view to_string(Distance d);
Distance parse_distance(std::string_view s);

// Realized rotation R = exp(A) · seed. The seed absorbs every discrete change
// (merge permutations, re-initialization), after which A restarts at zero.
class Partition {
 public:
  Partition() = default;
  Partition(Matrix seed, std::vector<std::size_t> c);

  static Partition identity(std::size_t d, std::vector<std::size_t> c);

  Matrix rotation() const;
  const Matrix& seed() const { return seed_; }
  SkewParam& param() { return param_; }
  const SkewParam& param() const { return param_; }
  const std::vector<std::size_t>& config() const { return c_; }

  std::size_t dim() const { return static_cast<std::size_t>(seed_.rows()); }
  std::size_t subspace_count() const { return c_.size(); }
  // Start row of each block, plus a trailing d.
  std::vector<std::size_t> offsets() const;

  // seed <- rotation(), A <- 0.
  void rebase();

 private:
  Matrix seed_;
  SkewParam param_;
  std::vector<std::size_t> c_;
};

void validate_config(std::span<const std::size_t> c, std::size_t d);

struct NdmConfig {
  std::size_t unit_size = 2;
  // Candidate count N per query (n·m of the streaming scan, or the in-batch
  // group size when in_batch_search is set).
  std::size_t search_number = 4;
  // Pool block size m for the streaming scan; 0 means one block of search_number.
  std::size_t block_size = 0;
  // Neighbors are searched inside random groups of search_number rows of the
  // popped batch instead of a separate pool.
  bool in_batch_search = false;
  std::size_t batch = 128;
  double lr = 1e-3;
  // Linear decay target over max_steps; 0 keeps lr constant.
  double lr_end = 0.0;
  double merge_threshold = 0.04;
  std::size_t merge_interval = 3000;
  std::size_t merge_start_delay = 60000;
  std::size_t max_steps = 200000;
  Distance distance = Distance::euclidean;
  bool dim_weighting = false;
  // Largest-loss re-initialization period during the merge start delay; 0 disables.
  std::size_t reinit_interval = 0;
  std::size_t eval_search_number = 1024;
  std::size_t mi_samples = 4096;
  int mi_k = 3;
  double mi_jitter = 3e-2;
  bool recycle_buffer = false;
  std::size_t log_interval = 100;
  std::uint64_t seed = 0;

  void validate(std::size_t d) const;

  static NdmConfig toy_preset();
  static NdmConfig lm_preset();
  static std::optional<NdmConfig> preset(std::string_view name);
};

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  std::vector<std::size_t> c;
  double orthogonality_error = 0.0;
};

struct MergeEvent {
  std::size_t step = 0;
  std::size_t a = 0, b = 0;
  std::size_t dim_a = 0, dim_b = 0;
  double normalized_mi = 0.0;
};

struct ReinitEvent {
  std::size_t step = 0;
  std::size_t a = 0, b = 0;
  std::vector<double> losses;
};

struct MiSnapshot {
  std::size_t step = 0;
  MIMatrix mi;
};

struct TrainTrace {
  std::vector<StepRecord> steps;
  std::vector<MergeEvent> merges;
  std::vector<ReinitEvent> reinits;
  std::vector<MiSnapshot> mi;
  std::string stop_reason;
  std::size_t final_step = 0;
  double max_orthogonality_error = 0.0;
};

// Contiguous column blocks of h in configuration order.
std::vector<Matrix> subspace_split(const Matrix& h, std::span<const std::size_t> c);

double subspace_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                         const Eigen::Ref<const Eigen::RowVectorXd>& b, Distance metric);

struct PoolBlock {
  Matrix projected;  // m x d_s, in the subspace
  Matrix raw;        // m x d, unrotated rows handed back as neighbors
  std::vector<std::size_t> index;
};

struct NeighborResult {
  std::vector<std::size_t> index;
  std::vector<double> distance;
  Matrix rows;  // raw neighbor rows, b x d
};

// Running-minimum scan over pool blocks; memory O(b·d).
class NeighborScan {
 public:
  NeighborScan(Matrix query, std::vector<std::size_t> query_index, bool exclude_self, Distance metric,
               std::size_t raw_dim);

  void feed(const Matrix& projected, const Matrix& raw, std::span<const std::size_t> index);
  // Throws Errc::invalid_argument if some query found no candidate.
  NeighborResult result() const;

 private:
  Matrix query_;
  std::vector<std::size_t> query_index_;
  bool exclude_self_;
  Distance metric_;
  std::vector<double> best_;
  std::vector<std::size_t> best_index_;
  Matrix best_rows_;
};

NeighborResult nearest_in_subspace(const Matrix& query, std::span<const std::size_t> query_index,
                                   std::span<const PoolBlock> pool, bool exclude_self, Distance metric);

struct NdmLoss {
  double loss = 0.0;
  std::vector<double> per_subspace;
  Matrix grad_r;  // dLoss/dR, d x d
};

// Differentiable recomputation of the neighbor distances under rotation r.
// neighbors[s] holds the raw neighbor row for each batch row in subspace s.
NdmLoss ndm_loss(const Matrix& h_batch, const Matrix& r, std::span<const std::size_t> c,
                 std::span<const Matrix> neighbors, Distance metric, bool dim_weighting);

// Mean nearest-neighbor distance per subspace, every row searching all others.
std::vector<double> subspace_nn_losses(const Matrix& rows, const Matrix& r, std::span<const std::size_t> c,
                                       Distance metric);

struct MergeResult {
  Partition partition;
  std::vector<std::pair<std::size_t, std::size_t>> merged;
  bool stop = false;
};

// Greedy disjoint merge of the pairs above tau, at most ceil(S/8) per call.
MergeResult merge_step(const MIMatrix& mi, const Partition& p, double tau);

struct ReinitResult {
  Partition partition;
  std::size_t a = 0;
  std::size_t b = 0;
};

// Mixes the rows of the largest-loss subspace and an MI×loss-weighted partner
// with a random orthogonal matrix.
ReinitResult toy_reinit(const Partition& p, std::span<const double> losses, const MIMatrix& mi, Rng& rng);

// Reorders blocks so that c is descending (stable).
Partition sorted_descending(const Partition& p);

enum class InitKind { identity, random_orthogonal };
Matrix initial_rotation(InitKind kind, std::size_t d, std::uint64_t seed);

struct NdmResult {
  Partition partition;
  TrainTrace trace;
};

// Called with "merge" after each merge and "final" at termination.
using NdmCheckpoint = std::function<void(std::string_view event, const Partition&, const TrainTrace&)>;
using NdmProgress = std::function<void(const StepRecord&)>;

NdmResult train_ndm(ActivationBuffer& buffer, const NdmConfig& cfg, const Matrix& initial_r,
                    const NdmCheckpoint& checkpoint = {}, const NdmProgress& progress = {});

}  // namespace ndm
