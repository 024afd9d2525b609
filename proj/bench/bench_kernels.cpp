#include <benchmark/benchmark.h>

#include <vector>

#include "sgmil/kernels.hpp"
#include "sgmil/rng.hpp"
#include "sgmil/wsigraph.hpp"

using namespace sgmil;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

std::vector<Point> random_points(std::size_t n) {
  Rng rng(5);
  std::vector<Point> pts(n);
  for (auto& p : pts) p = {static_cast<std::int32_t>(256 * rng.below(200)), static_cast<std::int32_t>(256 * rng.below(200))};
  return pts;
}

template <bool Parallel>
void BM_matmul(benchmark::State& state) {
  Rng rng(3);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(rng, n, 1024), b = random_matrix(rng, 1024, 64);
  Matrix out(n, 64);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::matmul(a, b, out);
    else kernels::reference::matmul(a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long long>(n));
}

template <bool Tree>
void BM_knn(benchmark::State& state) {
  const auto pts = random_points(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto e = Tree ? knn_edges(pts, 8) : reference::knn_edges_brute_force(pts, 8);
    benchmark::DoNotOptimize(e.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(BM_matmul<true>)->Name("matmul/openmp")->Arg(256)->Arg(2048);
BENCHMARK(BM_matmul<false>)->Name("matmul/serial")->Arg(256)->Arg(2048);
BENCHMARK(BM_knn<true>)->Name("knn/kdtree")->Arg(1000)->Arg(5000);
BENCHMARK(BM_knn<false>)->Name("knn/brute_force")->Arg(1000)->Arg(5000);

BENCHMARK_MAIN();
