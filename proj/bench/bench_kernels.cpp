// Parallel vs serial assembly of the block score/Hessian, and partitioned vs
// dense Newton directions.

#include <benchmark/benchmark.h>

#include "panelboot/block_newton.hpp"
#include "panelboot/models.hpp"
#include "panelboot/reference.hpp"

using namespace panelboot;

namespace {

struct Problem {
  DynamicLogitModel model;
  PanelDataset data;
  ParameterPoint theta;
};

Problem make_problem(std::size_t n, std::size_t m) {
  Problem p;
  Rng rng = make_stream(7, {n, m});
  Vec eta0 = Vec::LinSpaced(static_cast<long>(n), -1.0, 1.0);
  p.data = dl_simulate(0.5, eta0, m, InitialCondition::stationary, rng);
  p.theta = ParameterPoint(Vec::Constant(1, 0.3), eta0.transpose() * 0.8);
  return p;
}

void BM_AssembleParallel(benchmark::State& st) {
  const Problem p = make_problem(static_cast<std::size_t>(st.range(0)), 10);
  for (auto _ : st) benchmark::DoNotOptimize(assemble(p.model, p.data, p.theta));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_AssembleSerial(benchmark::State& st) {
  const Problem p = make_problem(static_cast<std::size_t>(st.range(0)), 10);
  for (auto _ : st) benchmark::DoNotOptimize(reference::assemble_serial(p.model, p.data, p.theta));
  st.SetItemsProcessed(st.iterations() * st.range(0));
}

void BM_DirectionPartitioned(benchmark::State& st) {
  const Problem p = make_problem(static_cast<std::size_t>(st.range(0)), 10);
  const BlockScoreHessian b = assemble(p.model, p.data, p.theta);
  for (auto _ : st) benchmark::DoNotOptimize(newton_direction(b));
}

void BM_DirectionDense(benchmark::State& st) {
  const Problem p = make_problem(static_cast<std::size_t>(st.range(0)), 10);
  const BlockScoreHessian b = assemble(p.model, p.data, p.theta);
  for (auto _ : st) benchmark::DoNotOptimize(reference::dense_newton_direction(b));
}

void BM_FitLogit(benchmark::State& st) {
  const Problem p = make_problem(static_cast<std::size_t>(st.range(0)), 10);
  for (auto _ : st) benchmark::DoNotOptimize(fit(p.model, p.data));
}

}  // namespace

BENCHMARK(BM_AssembleParallel)->Arg(100)->Arg(1000)->Arg(10000);
BENCHMARK(BM_AssembleSerial)->Arg(100)->Arg(1000)->Arg(10000);
BENCHMARK(BM_DirectionPartitioned)->Arg(50)->Arg(200)->Arg(800);
BENCHMARK(BM_DirectionDense)->Arg(50)->Arg(200)->Arg(800);
BENCHMARK(BM_FitLogit)->Arg(100)->Arg(1000);

BENCHMARK_MAIN();
