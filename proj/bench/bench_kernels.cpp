// Serial reference vs OpenMP kernels, plus one full training step.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "birq/features.hpp"
#include "birq/kernels.hpp"
#include "birq/trainer.hpp"

namespace {

using birq::Matrix;

Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.values()) v = n(eng);
  return m;
}

template <Matrix (*Fn)(const Matrix&, const Matrix&)>
void BM_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_matmul<birq::kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<birq::kernels::matmul>)->Name("matmul/omp")->Arg(64)->Arg(256);

template <Matrix (*Fn)(const Matrix&)>
void BM_softmax(benchmark::State& state) {
  const Matrix x = random_matrix(static_cast<std::size_t>(state.range(0)), 512, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(x));
}
BENCHMARK(BM_softmax<birq::kernels::serial::softmax_rows>)->Name("softmax/serial")->Arg(1024);
BENCHMARK(BM_softmax<birq::kernels::softmax_rows>)->Name("softmax/omp")->Arg(1024);

template <Matrix (*Fn)(const Matrix&, const Matrix&, std::span<const double>)>
void BM_distances(benchmark::State& state) {
  const Matrix u = random_matrix(static_cast<std::size_t>(state.range(0)), 16, 4);
  const Matrix c = random_matrix(1024, 16, 5);
  std::vector<double> norms(c.rows());
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (double v : c.row(i)) norms[i] += v * v;
  }
  for (auto _ : state) benchmark::DoNotOptimize(Fn(u, c, norms));
}
BENCHMARK(BM_distances<birq::kernels::serial::sq_distances>)->Name("sq_distances/serial")->Arg(2048);
BENCHMARK(BM_distances<birq::kernels::sq_distances>)->Name("sq_distances/omp")->Arg(2048);

template <Matrix (*Fn)(std::span<const double>, std::size_t, std::size_t, std::size_t, std::span<const double>,
                       const Matrix&, double)>
void BM_logmel(benchmark::State& state) {
  std::vector<double> samples(16000 * 4);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = std::sin(0.05 * static_cast<double>(i));
  namespace f = birq::features;
  for (auto _ : state) {
    benchmark::DoNotOptimize(Fn(samples, f::kWindowSamples, f::kHopSamples, f::kFftSize, f::hann_window(),
                                f::mel_filterbank(), f::kLogFloor));
  }
}
BENCHMARK(BM_logmel<birq::kernels::serial::logmel_frames>)->Name("logmel/serial");
BENCHMARK(BM_logmel<birq::kernels::logmel_frames>)->Name("logmel/omp");

void BM_train_step(benchmark::State& state) {
  birq::features::SynthSpec spec;
  spec.num_sequences = 8;
  std::vector<Matrix> raw;
  for (auto& s : birq::features::synth_dataset(spec)) raw.push_back(std::move(s.data));
  birq::trainer::TrainConfig cfg;
  cfg.epochs = 1000000;
  birq::trainer::Trainer tr(cfg, birq::trainer::prepare_dataset(raw, cfg.stack_factor));
  for (auto _ : state) benchmark::DoNotOptimize(tr.step());
}
BENCHMARK(BM_train_step)->Name("train_step/default")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
