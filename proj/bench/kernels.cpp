// Serial reference vs OpenMP kernels.

#include "dimgap/attacks.hpp"
#include "dimgap/geometry.hpp"
#include "dimgap/idim.hpp"
#include "dimgap/net.hpp"
#include "dimgap/rng.hpp"
#include "dimgap/theory.hpp"

#include <benchmark/benchmark.h>

using namespace dimgap;

namespace {

Exec exec_of(const benchmark::State& s) { return s.range(0) ? Exec::Parallel : Exec::Serial; }

struct Problem {
  NetParams net;
  Matrix X;
  Vector y;
};

const Problem& problem() {
  static const Problem p = [] {
    Rng r(1);
    Problem q{init_params(256, 1000, 1.0, 2), r.normal_matrix(500, 1000), Vector(500)};
    for (int i = 0; i < 500; ++i) q.y[i] = i % 2 ? -1.0 : 1.0;
    return q;
  }();
  return p;
}

void BM_Forward(benchmark::State& state) {
  const auto& p = problem();
  for (auto _ : state) benchmark::DoNotOptimize(forward_batch(p.net, p.X, exec_of(state)));
}

void BM_Gradient(benchmark::State& state) {
  const auto& p = problem();
  for (auto _ : state)
    benchmark::DoNotOptimize(gradient(p.net, p.X, p.y, LossKind::Logistic, 0.0, exec_of(state)));
}

void BM_Pgd(benchmark::State& state) {
  const auto& p = problem();
  static const SubspaceProjectors proj(sample_orthonormal_immersion(100, 1000, ImmersionMode::ExactQr, 3));
  AttackSpec spec;
  spec.epsilon = 1.0;
  spec.subspace = Subspace::OffManifold;
  const Matrix X = p.X.topRows(200);
  const Vector y = p.y.head(200);
  for (auto _ : state) benchmark::DoNotOptimize(pgd_attack(p.net, X, y, spec, &proj, exec_of(state)));
}

void BM_Neighbors(benchmark::State& state) {
  Rng r(4);
  const Matrix X = r.normal_matrix(2000, 20);
  for (auto _ : state) benchmark::DoNotOptimize(nearest_neighbors(X, 5, exec_of(state)));
}

void BM_MonteCarlo(benchmark::State& state) {
  theory::McOptions mo;
  mo.parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(theory::monte_carlo_verify(100, 1700, 1.0, 2, 1000, 5, mo));
}

}  // namespace

BENCHMARK(BM_Forward)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gradient)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Pgd)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Neighbors)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MonteCarlo)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
