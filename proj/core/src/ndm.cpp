#include "ndm/ndm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ndm/error.hpp"
#include "ndm/parallel.hpp"

namespace ndm {

std::string_view to_string(Distance d) {
  return d == Distance::euclidean ? "euclidean" : "one_minus_cosine";
}

Distance parse_distance(std::string_view s) {
  if (s == "euclidean") return Distance::euclidean;
  if (s == "one_minus_cosine" || s == "cosine") return Distance::one_minus_cosine;
  throw Error(Errc::invalid_argument, "unknown distance '" + std::string(s) + "'");
}

void validate_config(std::span<const std::size_t> c, std::size_t d) {
  require(!c.empty(), Errc::invalid_argument, "configuration must not be empty");
  for (auto ds : c) require(ds >= 1, Errc::invalid_argument, "subspace dims must be >= 1");
  require(std::accumulate(c.begin(), c.end(), std::size_t{0}) == d, Errc::invalid_argument,
          "configuration must sum to d");
}

Partition::Partition(Matrix seed, std::vector<std::size_t> c)
    : seed_(std::move(seed)), param_(static_cast<std::size_t>(seed_.rows())), c_(std::move(c)) {
  require(seed_.rows() == seed_.cols(), Errc::shape_mismatch, "rotation seed must be square");
  validate_config(c_, dim());
}

Partition Partition::identity(std::size_t d, std::vector<std::size_t> c) {
  return Partition(Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)), std::move(c));
}

Matrix Partition::rotation() const {
  if (param_.norm() == 0.0) return seed_;
  return orthogonalize(param_) * seed_;
}

std::vector<std::size_t> Partition::offsets() const {
  std::vector<std::size_t> out(c_.size() + 1, 0);
  std::partial_sum(c_.begin(), c_.end(), out.begin() + 1);
  return out;
}

void Partition::rebase() {
  seed_ = rotation();
  param_.set_zero();
}

void NdmConfig::validate(std::size_t d) const {
  require(unit_size >= 1 && d % unit_size == 0, Errc::invalid_argument, "unit_size must divide d");
  require(search_number >= 2, Errc::invalid_argument, "search_number must be >= 2");
  if (!in_batch_search && block_size != 0)
    require(search_number % block_size == 0, Errc::invalid_argument,
            "search_number must be a multiple of block_size");
  if (in_batch_search)
    require(batch % search_number == 0, Errc::invalid_argument,
            "in-batch search needs batch divisible by search_number");
  require(batch >= 1, Errc::invalid_argument, "batch must be >= 1");
  require(merge_threshold > 0.0, Errc::invalid_argument, "merge_threshold must be > 0");
  require(merge_interval >= 1, Errc::invalid_argument, "merge_interval must be >= 1");
  require(max_steps >= 1, Errc::invalid_argument, "max_steps must be >= 1");
  require(lr > 0.0 && lr_end >= 0.0, Errc::invalid_argument, "learning rates must be positive");
  require(mi_k >= 1 && mi_samples > static_cast<std::size_t>(mi_k), Errc::invalid_argument,
          "mi_samples must exceed mi_k");
  require(mi_jitter >= 0.0, Errc::invalid_argument, "mi_jitter must be >= 0");
  require(eval_search_number >= 2, Errc::invalid_argument, "eval_search_number must be >= 2");
}

NdmConfig NdmConfig::toy_preset() {
  NdmConfig c;
  c.unit_size = 2;
  c.search_number = 4;
  c.in_batch_search = true;
  c.batch = 128;
  c.lr = 1e-3;
  c.merge_threshold = 0.04;
  c.merge_interval = 3000;
  c.merge_start_delay = 60000;
  c.max_steps = 200000;
  c.reinit_interval = 3000;
  c.eval_search_number = 1024;
  c.recycle_buffer = true;
  return c;
}

NdmConfig NdmConfig::lm_preset() {
  NdmConfig c;
  c.unit_size = 32;
  c.search_number = 25 * (1u << 14);
  c.block_size = 1u << 14;
  c.in_batch_search = false;
  c.batch = 128;
  c.lr = 3e-4;
  c.merge_threshold = 0.04;
  c.merge_interval = 8000;
  c.merge_start_delay = 20000;
  c.max_steps = 100000;
  c.reinit_interval = 0;
  c.recycle_buffer = false;
  return c;
}

std::optional<NdmConfig> NdmConfig::preset(std::string_view name) {
  if (name == "toy") return toy_preset();
  if (name == "lm") return lm_preset();
  return std::nullopt;
}

std::vector<Matrix> subspace_split(const Matrix& h, std::span<const std::size_t> c) {
  validate_config(c, static_cast<std::size_t>(h.cols()));
  std::vector<Matrix> out;
  out.reserve(c.size());
  Eigen::Index col = 0;
  for (auto ds : c) {
    out.emplace_back(h.middleCols(col, static_cast<Eigen::Index>(ds)));
    col += static_cast<Eigen::Index>(ds);
  }
  return out;
}

double subspace_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                         const Eigen::Ref<const Eigen::RowVectorXd>& b, Distance metric) {
  if (metric == Distance::euclidean) return (a - b).norm();
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

NeighborScan::NeighborScan(Matrix query, std::vector<std::size_t> query_index, bool exclude_self,
                           Distance metric, std::size_t raw_dim)
    : query_(std::move(query)),
      query_index_(std::move(query_index)),
      exclude_self_(exclude_self),
      metric_(metric),
      best_(static_cast<std::size_t>(query_.rows()), std::numeric_limits<double>::infinity()),
      best_index_(static_cast<std::size_t>(query_.rows()), std::numeric_limits<std::size_t>::max()),
      best_rows_(Matrix::Zero(query_.rows(), static_cast<Eigen::Index>(raw_dim))) {
  require(query_index_.size() == static_cast<std::size_t>(query_.rows()), Errc::shape_mismatch,
          "one index per query row required");
}

void NeighborScan::feed(const Matrix& projected, const Matrix& raw, std::span<const std::size_t> index) {
  require(projected.cols() == query_.cols(), Errc::shape_mismatch, "pool block has wrong subspace width");
  require(raw.rows() == projected.rows() && index.size() == static_cast<std::size_t>(projected.rows()),
          Errc::shape_mismatch, "pool block parts disagree on row count");
  require(raw.cols() == best_rows_.cols(), Errc::shape_mismatch, "pool raw rows have wrong width");
  parallel_for(static_cast<std::size_t>(query_.rows()), [&](std::size_t uq) {
    const auto q = static_cast<Eigen::Index>(uq);
    for (Eigen::Index p = 0; p < projected.rows(); ++p) {
      if (exclude_self_ && index[static_cast<std::size_t>(p)] == query_index_[uq]) continue;
      const double dist = subspace_distance(query_.row(q), projected.row(p), metric_);
      if (dist < best_[uq]) {
        best_[uq] = dist;
        best_index_[uq] = index[static_cast<std::size_t>(p)];
        best_rows_.row(q) = raw.row(p);
      }
    }
  });
}

NeighborResult NeighborScan::result() const {
  for (double b : best_)
    require(std::isfinite(b), Errc::invalid_argument, "empty pool: a query found no neighbor candidate");
  return NeighborResult{best_index_, best_, best_rows_};
}

NeighborResult nearest_in_subspace(const Matrix& query, std::span<const std::size_t> query_index,
                                   std::span<const PoolBlock> pool, bool exclude_self, Distance metric) {
  require(!pool.empty(), Errc::invalid_argument, "empty pool");
  NeighborScan scan(query, std::vector<std::size_t>(query_index.begin(), query_index.end()), exclude_self, metric,
                    static_cast<std::size_t>(pool.front().raw.cols()));
  for (const auto& block : pool) scan.feed(block.projected, block.raw, block.index);
  return scan.result();
}

NdmLoss ndm_loss(const Matrix& h_batch, const Matrix& r, std::span<const std::size_t> c,
                 std::span<const Matrix> neighbors, Distance metric, bool dim_weighting) {
  const Eigen::Index d = r.rows();
  validate_config(c, static_cast<std::size_t>(d));
  require(h_batch.cols() == d && r.cols() == d, Errc::shape_mismatch, "batch width must match R");
  require(neighbors.size() == c.size(), Errc::shape_mismatch, "one neighbor matrix per subspace required");
  const Eigen::Index b = h_batch.rows();
  require(b >= 1, Errc::invalid_argument, "empty batch");

  const bool weighted = dim_weighting && metric == Distance::one_minus_cosine;
  double weight_total = 0.0;
  for (auto ds : c) weight_total += weighted ? static_cast<double>(ds) : 1.0;

  NdmLoss out;
  out.grad_r = Matrix::Zero(d, d);
  out.per_subspace.assign(c.size(), 0.0);
  const Matrix q_proj = h_batch * r.transpose();
  const double inv_b = 1.0 / static_cast<double>(b);

  Eigen::Index row0 = 0;
  for (std::size_t s = 0; s < c.size(); ++s) {
    const auto ds = static_cast<Eigen::Index>(c[s]);
    const Matrix& nb = neighbors[s];
    require(nb.rows() == b && nb.cols() == d, Errc::shape_mismatch, "neighbor rows must be b x d");
    const auto r_s = r.middleRows(row0, ds);
    const Matrix k_proj = nb * r_s.transpose();
    const double w = (weighted ? static_cast<double>(c[s]) : 1.0) / weight_total;
    auto g_s = out.grad_r.middleRows(row0, ds);
    double sum = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
      const Eigen::RowVectorXd a = q_proj.row(i).segment(row0, ds);
      const Eigen::RowVectorXd kk = k_proj.row(i);
      if (metric == Distance::euclidean) {
        const Eigen::RowVectorXd u = a - kk;
        const double dist = u.norm();
        sum += dist;
        if (dist > 0.0) {
          const Eigen::RowVectorXd delta = h_batch.row(i) - nb.row(i);
          g_s.noalias() += (w * inv_b / dist) * u.transpose() * delta;
        }
      } else {
        const double na = a.norm();
        const double nk = kk.norm();
        if (na == 0.0 || nk == 0.0) {
          sum += 1.0;
          continue;
        }
        const double cosv = a.dot(kk) / (na * nk);
        sum += 1.0 - cosv;
        const Eigen::RowVectorXd ga = -(kk / (na * nk) - cosv * a / (na * na));
        const Eigen::RowVectorXd gk = -(a / (na * nk) - cosv * kk / (nk * nk));
        g_s.noalias() += (w * inv_b) * (ga.transpose() * h_batch.row(i) + gk.transpose() * nb.row(i));
      }
    }
    out.per_subspace[s] = sum * inv_b;
    out.loss += w * out.per_subspace[s];
    row0 += ds;
  }
  return out;
}

std::vector<double> subspace_nn_losses(const Matrix& rows, const Matrix& r, std::span<const std::size_t> c,
                                       Distance metric) {
  require(rows.rows() >= 2, Errc::invalid_argument, "need at least two rows");
  const Matrix proj = rows * r.transpose();
  const auto parts = subspace_split(proj, c);
  std::vector<double> out(c.size(), 0.0);
  const Eigen::Index n = rows.rows();
  for (std::size_t s = 0; s < parts.size(); ++s) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        best = std::min(best, subspace_distance(parts[s].row(i), parts[s].row(j), metric));
      }
      sum += best;
    }
    out[s] = sum / static_cast<double>(n);
  }
  return out;
}

namespace {

// New partition whose rows are `order` blocks of the realized rotation.
Partition regroup(const Partition& p, const std::vector<std::vector<std::size_t>>& groups) {
  const Matrix r = p.rotation();
  const auto offs = p.offsets();
  Matrix out(r.rows(), r.cols());
  std::vector<std::size_t> c;
  Eigen::Index row = 0;
  for (const auto& group : groups) {
    std::size_t total = 0;
    for (auto s : group) {
      const auto ds = static_cast<Eigen::Index>(p.config()[s]);
      out.middleRows(row, ds) = r.middleRows(static_cast<Eigen::Index>(offs[s]), ds);
      row += ds;
      total += p.config()[s];
    }
    c.push_back(total);
  }
  return Partition(std::move(out), std::move(c));
}

}  // namespace

MergeResult merge_step(const MIMatrix& mi, const Partition& p, double tau) {
  const std::size_t S = p.subspace_count();
  require(mi.s == S, Errc::shape_mismatch, "MI matrix does not match the partition");

  struct Candidate {
    double value;
    std::size_t a, b;
  };
  std::vector<Candidate> candidates;
  for (std::size_t a = 0; a < S; ++a)
    for (std::size_t b = a + 1; b < S; ++b) {
      const double v = mi.normalized(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      if (v > tau) candidates.push_back({v, a, b});
    }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& x, const Candidate& y) { return x.value > y.value; });

  MergeResult out;
  if (candidates.empty()) {
    out.partition = p;
    out.stop = true;
    return out;
  }

  const std::size_t cap = std::max<std::size_t>(1, (S + 7) / 8);
  std::vector<bool> used(S, false);
  for (const auto& cand : candidates) {
    if (out.merged.size() >= cap) break;
    if (used[cand.a] || used[cand.b]) continue;
    used[cand.a] = used[cand.b] = true;
    out.merged.emplace_back(cand.a, cand.b);
  }

  std::vector<std::size_t> partner(S, S);
  for (const auto& [a, b] : out.merged) {
    partner[a] = b;
    partner[b] = a;
  }
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t s = 0; s < S; ++s) {
    if (partner[s] == S)
      groups.push_back({s});
    else if (partner[s] > s)
      groups.push_back({s, partner[s]});
  }
  out.partition = regroup(p, groups);
  out.stop = false;
  return out;
}

ReinitResult toy_reinit(const Partition& p, std::span<const double> losses, const MIMatrix& mi, Rng& rng) {
  const std::size_t S = p.subspace_count();
  require(S >= 2, Errc::invalid_argument, "re-initialization needs at least two subspaces");
  require(losses.size() == S && mi.s == S, Errc::shape_mismatch, "losses and MI must cover every subspace");

  const auto a = static_cast<std::size_t>(std::max_element(losses.begin(), losses.end()) - losses.begin());
  std::vector<double> weights(S, 0.0);
  double total = 0.0;
  for (std::size_t j = 0; j < S; ++j) {
    if (j == a) continue;
    weights[j] = std::max(0.0, mi.raw(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j))) *
                 std::max(0.0, losses[j]);
    total += weights[j];
  }
  if (!(total > 0.0)) {
    for (std::size_t j = 0; j < S; ++j) weights[j] = j == a ? 0.0 : 1.0;
  }
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const std::size_t b = pick(rng);

  Matrix r = p.rotation();
  const auto offs = p.offsets();
  const auto da = static_cast<Eigen::Index>(p.config()[a]);
  const auto db = static_cast<Eigen::Index>(p.config()[b]);
  Matrix rows(da + db, r.cols());
  rows.topRows(da) = r.middleRows(static_cast<Eigen::Index>(offs[a]), da);
  rows.bottomRows(db) = r.middleRows(static_cast<Eigen::Index>(offs[b]), db);
  const Matrix mixed = random_orthogonal(static_cast<std::size_t>(da + db), rng) * rows;
  r.middleRows(static_cast<Eigen::Index>(offs[a]), da) = mixed.topRows(da);
  r.middleRows(static_cast<Eigen::Index>(offs[b]), db) = mixed.bottomRows(db);
  return ReinitResult{Partition(std::move(r), p.config()), a, b};
}

Partition sorted_descending(const Partition& p) {
  std::vector<std::size_t> order(p.subspace_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return p.config()[x] > p.config()[y]; });
  std::vector<std::vector<std::size_t>> groups;
  for (auto s : order) groups.push_back({s});
  return regroup(p, groups);
}

Matrix initial_rotation(InitKind kind, std::size_t d, std::uint64_t seed) {
  if (kind == InitKind::identity) return Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Rng rng = make_stream(seed, "ndm.init");
  return random_orthogonal(d, rng);
}

namespace {

// Neighbors of each batch row inside random groups of `group` rows.
std::vector<Matrix> in_batch_neighbors(const Matrix& batch, const Matrix& r, std::span<const std::size_t> c,
                                       std::size_t group, Distance metric, Rng& rng) {
  const Eigen::Index b = batch.rows();
  std::vector<std::size_t> perm(static_cast<std::size_t>(b));
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);

  const Matrix proj = batch * r.transpose();
  std::vector<Matrix> out;
  out.reserve(c.size());
  Eigen::Index col = 0;
  for (auto ds_u : c) {
    const auto ds = static_cast<Eigen::Index>(ds_u);
    Matrix nb(b, batch.cols());
    for (std::size_t g0 = 0; g0 < perm.size(); g0 += group) {
      for (std::size_t i = g0; i < g0 + group; ++i) {
        const auto qi = static_cast<Eigen::Index>(perm[i]);
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index best_j = -1;
        for (std::size_t j = g0; j < g0 + group; ++j) {
          if (j == i) continue;
          const auto pj = static_cast<Eigen::Index>(perm[j]);
          const double dist = subspace_distance(proj.row(qi).segment(col, ds), proj.row(pj).segment(col, ds), metric);
          if (dist < best) {
            best = dist;
            best_j = pj;
          }
        }
        nb.row(qi) = batch.row(best_j);
      }
    }
    out.push_back(std::move(nb));
    col += ds;
  }
  return out;
}

// Streaming scan over search_number rows drawn with buffer.next().
std::vector<Matrix> streamed_neighbors(const RowBatch& batch, const Matrix& r, std::span<const std::size_t> c,
                                       const NdmConfig& cfg, ActivationBuffer& buffer) {
  const Matrix proj = batch.rows * r.transpose();
  const auto parts = subspace_split(proj, c);
  std::vector<NeighborScan> scans;
  scans.reserve(c.size());
  for (const auto& part : parts)
    scans.emplace_back(part, batch.index, true, cfg.distance, static_cast<std::size_t>(batch.rows.cols()));

  const std::size_t m = cfg.block_size == 0 ? cfg.search_number : cfg.block_size;
  const std::size_t blocks = (cfg.search_number + m - 1) / m;
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const RowBatch pool = buffer.next(m);
    const Matrix pool_proj = pool.rows * r.transpose();
    Eigen::Index col = 0;
    for (std::size_t s = 0; s < c.size(); ++s) {
      const auto ds = static_cast<Eigen::Index>(c[s]);
      scans[s].feed(pool_proj.middleCols(col, ds), pool.rows, pool.index);
      col += ds;
    }
  }
  std::vector<Matrix> out;
  out.reserve(c.size());
  for (const auto& scan : scans) out.push_back(scan.result().rows);
  return out;
}

MIMatrix measure_mi(const Partition& p, ActivationBuffer& buffer, const NdmConfig& cfg,
                    std::optional<std::size_t> anchor = std::nullopt) {
  const RowBatch sample = buffer.next(cfg.mi_samples);
  const Matrix proj = sample.rows * p.rotation().transpose();
  const auto parts = subspace_split(proj, p.config());
  const KsgOptions opt{cfg.mi_k, cfg.mi_jitter};
  return anchor ? mi_against(parts, *anchor, opt) : pairwise_mi(parts, opt);
}

}  // namespace

NdmResult train_ndm(ActivationBuffer& buffer, const NdmConfig& cfg, const Matrix& initial_r,
                    const NdmCheckpoint& checkpoint, const NdmProgress& progress) {
  const std::size_t d = buffer.dim();
  cfg.validate(d);
  require(initial_r.rows() == static_cast<Eigen::Index>(d) && initial_r.cols() == initial_r.rows(),
          Errc::shape_mismatch, "initial rotation must be d x d");
  require(orthogonality_error(initial_r) <= 1e-6, Errc::not_orthogonal, "initial rotation is not orthogonal");
  require(buffer.size() >= cfg.batch, Errc::invalid_argument, "activation buffer smaller than one batch");

  Partition part(initial_r, std::vector<std::size_t>(d / cfg.unit_size, cfg.unit_size));
  AdamState adam = AdamState::with_size(part.param().size(), cfg.lr);
  const LinearSchedule schedule{cfg.lr, cfg.lr_end > 0.0 ? cfg.lr_end : cfg.lr, cfg.max_steps};
  Rng shuffle_rng = make_stream(cfg.seed, "ndm.shuffle");
  Rng reinit_rng = make_stream(cfg.seed, "ndm.reinit");

  TrainTrace trace;
  auto restart = [&](Partition next) {
    part = std::move(next);
    adam = AdamState::with_size(part.param().size(), adam.lr);
  };

  std::size_t step = 1;
  for (; step <= cfg.max_steps; ++step) {
    RowBatch batch;
    try {
      batch = buffer.pop(cfg.batch);
    } catch (const Error& e) {
      if (e.code() != Errc::buffer_exhausted) throw;
      if (step <= cfg.merge_start_delay)
        throw Error(Errc::buffer_exhausted,
                    "activation buffer ran out at step " + std::to_string(step) +
                        ", before merging could start; dump more activations or enable recycling");
      trace.stop_reason = "buffer_exhausted";
      break;
    }

    const Matrix r = part.rotation();
    const std::vector<Matrix> neighbors =
        cfg.in_batch_search
            ? in_batch_neighbors(batch.rows, r, part.config(), cfg.search_number, cfg.distance, shuffle_rng)
            : streamed_neighbors(batch, r, part.config(), cfg, buffer);

    const NdmLoss lg = ndm_loss(batch.rows, r, part.config(), neighbors, cfg.distance, cfg.dim_weighting);
    const Matrix grad_exp = lg.grad_r * part.seed().transpose();
    const std::vector<double> grad = orthogonalize_vjp(part.param(), grad_exp);
    adam.lr = schedule.at(step - 1);
    adam_step(adam, part.param().values(), grad);

    if (cfg.log_interval > 0 && (step % cfg.log_interval == 0 || step == 1)) {
      StepRecord rec{step, lg.loss, part.config(), orthogonality_error(part.rotation())};
      trace.max_orthogonality_error = std::max(trace.max_orthogonality_error, rec.orthogonality_error);
      if (progress) progress(rec);
      trace.steps.push_back(std::move(rec));
    }

    if (cfg.reinit_interval > 0 && step < cfg.merge_start_delay && step % cfg.reinit_interval == 0 &&
        part.subspace_count() >= 2) {
      part.rebase();
      const RowBatch eval = buffer.next(cfg.eval_search_number);
      const auto losses = subspace_nn_losses(eval.rows, part.rotation(), part.config(), cfg.distance);
      const auto worst =
          static_cast<std::size_t>(std::max_element(losses.begin(), losses.end()) - losses.begin());
      const MIMatrix mi = measure_mi(part, buffer, cfg, worst);
      ReinitResult rr = toy_reinit(part, losses, mi, reinit_rng);
      trace.reinits.push_back(ReinitEvent{step, rr.a, rr.b, losses});
      restart(std::move(rr.partition));
    }

    if (step > cfg.merge_start_delay && step % cfg.merge_interval == 0) {
      part.rebase();
      MIMatrix mi = measure_mi(part, buffer, cfg);
      MergeResult mr = merge_step(mi, part, cfg.merge_threshold);
      trace.mi.push_back(MiSnapshot{step, std::move(mi)});
      if (mr.stop) {
        trace.stop_reason = "no_pair_above_threshold";
        break;
      }
      for (const auto& [a, b] : mr.merged) {
        trace.merges.push_back(MergeEvent{step, a, b, part.config()[a], part.config()[b],
                                          trace.mi.back().mi.normalized(static_cast<Eigen::Index>(a),
                                                                        static_cast<Eigen::Index>(b))});
      }
      restart(std::move(mr.partition));
      if (checkpoint) checkpoint("merge", part, trace);
    }
  }
  if (trace.stop_reason.empty()) trace.stop_reason = "max_steps";
  trace.final_step = std::min(step, cfg.max_steps);

  part.rebase();
  Partition result = sorted_descending(part);
  trace.max_orthogonality_error = std::max(trace.max_orthogonality_error, orthogonality_error(result.rotation()));
  if (checkpoint) checkpoint("final", result, trace);
  return NdmResult{std::move(result), std::move(trace)};
}

}  // namespace ndm
