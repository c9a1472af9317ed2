#include <benchmark/benchmark.h>

#include "vnd/estimation.hpp"
#include "vnd/hmm.hpp"
#include "vnd/markov_core.hpp"
#include "vnd/rng.hpp"
#include "vnd/sum_chain.hpp"

using namespace vnd;

namespace {

VndParams random_params(int ell, std::uint64_t seed) {
  Rng rng(seed);
  VndParams p;
  for (int j = 0; j < ell; ++j) p.lambdas.push_back(0.05 + 0.9 * rng.uniform());
  for (int j = 0; j < ell; ++j) p.etas.push_back(0.05 + 0.9 * rng.uniform());
  return p;
}

void BM_QVndClosedForm(benchmark::State& state) {
  const auto p = random_params(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(q_vnd_closed_form(p));
}
BENCHMARK(BM_QVndClosedForm)->Arg(2)->Arg(7)->Arg(20);

void BM_BuildMVnd(benchmark::State& state) {
  const auto p = random_params(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(build_m_vnd(p));
}
BENCHMARK(BM_BuildMVnd)->Arg(4)->Arg(7)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Lump(benchmark::State& state) {
  const auto m = build_m_vnd(random_params(static_cast<int>(state.range(0)), 3));
  for (auto _ : state) benchmark::DoNotOptimize(lump(m));
}
BENCHMARK(BM_Lump)->Arg(7)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Recover(benchmark::State& state) {
  const auto q = q_vnd_closed_form(random_params(static_cast<int>(state.range(0)), 4));
  for (auto _ : state) benchmark::DoNotOptimize(recover_vnd_params(q));
}
BENCHMARK(BM_Recover)->Arg(3)->Arg(7)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  const auto model = HmmModel::with_stationary_start(q_vnd_closed_form(random_params(2, 5)),
                                                     GaussianEmission::uniform(2, 0.0, 1.0, 0.2));
  const auto sim = simulate(model, static_cast<std::size_t>(state.range(0)), 6);
  FilterOptions o;
  o.store_bivariate = false;
  for (auto _ : state) benchmark::DoNotOptimize(forward_backward(model, sim.observations, o));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(10000)->Arg(1000000)->Unit(benchmark::kMillisecond);

void BM_Viterbi(benchmark::State& state) {
  const auto model = HmmModel::with_stationary_start(q_vnd_closed_form(random_params(2, 7)),
                                                     GaussianEmission::uniform(2, 0.0, 1.0, 0.2));
  const auto sim = simulate(model, static_cast<std::size_t>(state.range(0)), 8);
  for (auto _ : state) benchmark::DoNotOptimize(viterbi(model, sim.observations));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Viterbi)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_BaumWelch(benchmark::State& state) {
  const VndParams p{{0.97, 0.99}, {0.99, 0.95}};
  const auto model = HmmModel::with_stationary_start(q_vnd_closed_form(p), GaussianEmission::uniform(2, 0.0, 1.0, 0.2));
  const auto sim = simulate(model, 20000, 9);
  FitConfig c;
  c.restarts = 1;
  for (auto _ : state) benchmark::DoNotOptimize(baum_welch(sim.observations, c));
}
BENCHMARK(BM_BaumWelch)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
