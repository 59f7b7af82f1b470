#include <numeric>
#include <random>

#include <benchmark/benchmark.h>

#include "ndm/mi.hpp"
#include "ndm/ndm.hpp"
#include "ndm/rng.hpp"
#include "ndm/tensor.hpp"

using namespace ndm;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
  return m;
}

void BM_Ksg(benchmark::State& state) {
  const auto n = state.range(0);
  const Matrix x = gaussian(n, 4, 1), y = gaussian(n, 4, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ksg_mi_raw(x, y));
  state.SetComplexityN(n);
}
BENCHMARK(BM_Ksg)->Arg(512)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

void BM_NeighborScan(benchmark::State& state) {
  const auto pool_rows = state.range(0);
  const Matrix raw = gaussian(pool_rows, 16, 3);
  const Matrix projected = raw.leftCols(4);
  std::vector<std::size_t> index(static_cast<std::size_t>(pool_rows));
  std::iota(index.begin(), index.end(), 0);
  const std::vector<PoolBlock> pool{PoolBlock{projected, raw, index}};
  const Matrix query = projected.topRows(128);
  const std::vector<std::size_t> qi(index.begin(), index.begin() + 128);
  for (auto _ : state)
    benchmark::DoNotOptimize(nearest_in_subspace(query, qi, pool, true, Distance::euclidean));
}
BENCHMARK(BM_NeighborScan)->Arg(1024)->Arg(16384)->Unit(benchmark::kMillisecond);

void BM_ExpVjp(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  auto rng = make_stream(4, "bench");
  std::normal_distribution<double> g;
  std::vector<double> values(d * (d - 1) / 2);
  for (auto& v : values) v = 0.1 * g(rng);
  const SkewParam p(d, values);
  const Matrix grad = gaussian(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(orthogonalize(p));
    benchmark::DoNotOptimize(orthogonalize_vjp(p, grad));
  }
}
BENCHMARK(BM_ExpVjp)->Arg(12)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
