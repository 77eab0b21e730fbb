#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "l2rm/encoder.hpp"
#include "l2rm/mixture.hpp"
#include "l2rm/ot.hpp"

namespace {

using namespace l2rm;

Eigen::MatrixXd random_cost(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return Eigen::MatrixXd::NullaryExpr(n, n, [&] { return u(rng); });
}

void BM_Sinkhorn(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const ot::CostMatrix c(random_cost(n, 1));
  const ot::Measure u = ot::Measure::uniform(n);
  const ot::MaskMatrix mask = ot::MaskMatrix::off_diagonal(n);
  ot::SinkhornConfig cfg;
  cfg.lambda = static_cast<double>(state.range(1)) / 1000.0;
  for (auto _ : state) benchmark::DoNotOptimize(ot::sinkhorn(c, u, u, mask, cfg).plan.data());
}
BENCHMARK(BM_Sinkhorn)->Args({16, 30})->Args({128, 30})->Args({128, 10})->Unit(benchmark::kMicrosecond);

void BM_PartialOt(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const ot::CostMatrix c(random_cost(n, 2));
  const ot::Measure u = ot::Measure::uniform(n);
  const ot::MaskMatrix mask = ot::MaskMatrix::off_diagonal(n);
  ot::SinkhornConfig cfg;
  cfg.lambda = 0.03;
  for (auto _ : state) benchmark::DoNotOptimize(ot::partial_ot(c, u, u, mask, 0.3, cfg).plan.data());
}
BENCHMARK(BM_PartialOt)->Arg(16)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_FitBmm(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::gamma_distribution<double> g2(2.0), g8(8.0);
  std::vector<double> x(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = g2(rng), b = g8(rng);
    x[i] = i % 2 ? a / (a + b) : b / (a + b);
  }
  for (auto _ : state) benchmark::DoNotOptimize(mixture::fit_bmm(x).iterations);
}
BENCHMARK(BM_FitBmm)->Arg(400)->Arg(2000)->Unit(benchmark::kMillisecond);

void BM_Similarity(benchmark::State& state) {
  const Eigen::Index n = state.range(0);
  const encoder::EncoderParams p = encoder::EncoderParams::random(32, 32, 16, 4);
  const Eigen::MatrixXd features = Eigen::MatrixXd::Random(n, 32);
  for (auto _ : state) benchmark::DoNotOptimize(encoder::similarity(p, features, features).data());
}
BENCHMARK(BM_Similarity)->Arg(128)->Arg(500)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
