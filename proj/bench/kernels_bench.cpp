// Serial reference kernels against their OpenMP counterparts.
//
//   kernels_bench --benchmark_filter=within_class
//
// Thread count follows OMP_NUM_THREADS / COLLAPSE_LAB_THREADS.

#include <benchmark/benchmark.h>

#include <cstdint>
#include <vector>

#include "collapse_lab/kernels.hpp"
#include "collapse_lab/rng.hpp"

namespace k = collapse_lab::kernels;
using collapse_lab::Matrix;
using collapse_lab::RowMatrix;
using collapse_lab::Vector;

namespace {

struct Data {
  RowMatrix features;
  std::vector<std::uint32_t> labels;
  RowMatrix means;
  Matrix probes;
  RowMatrix weights;
  Vector bias;
};

constexpr std::size_t kClasses = 10;

Data make_data(std::int64_t m, std::int64_t n, std::int64_t probes) {
  collapse_lab::CounterRng rng(1);
  Data d;
  d.features.resize(m, n);
  for (Eigen::Index i = 0; i < d.features.size(); ++i) d.features.data()[i] = rng.normal();
  d.labels.resize(static_cast<std::size_t>(m));
  for (auto& y : d.labels) y = static_cast<std::uint32_t>(rng.below(kClasses));
  d.means = k::serial::class_means(d.features, d.labels, kClasses).means;
  d.probes = Matrix::Random(n, probes);
  d.weights = RowMatrix::Random(kClasses, n);
  d.bias = Vector::Random(kClasses);
  return d;
}

template <k::Backend B>
void class_means(benchmark::State& state) {
  const auto d = make_data(state.range(0), state.range(1), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(k::class_means(d.features, d.labels, kClasses, B));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <k::Backend B>
void within_class_apply(benchmark::State& state) {
  const auto d = make_data(state.range(0), state.range(1), state.range(2));
  for (auto _ : state) {
    benchmark::DoNotOptimize(k::within_class_apply(d.features, d.labels, d.means, d.probes, B));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

template <k::Backend B>
void linear_scores(benchmark::State& state) {
  const auto d = make_data(state.range(0), state.range(1), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(k::linear_scores(d.features, d.weights, d.bias, B));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK(class_means<k::Backend::serial>)->Args({20000, 512});
BENCHMARK(class_means<k::Backend::parallel>)->Args({20000, 512});
BENCHMARK(within_class_apply<k::Backend::serial>)->Args({20000, 512, 1})->Args({20000, 512, 10});
BENCHMARK(within_class_apply<k::Backend::parallel>)->Args({20000, 512, 1})->Args({20000, 512, 10});
BENCHMARK(linear_scores<k::Backend::serial>)->Args({20000, 512});
BENCHMARK(linear_scores<k::Backend::parallel>)->Args({20000, 512});

BENCHMARK_MAIN();
