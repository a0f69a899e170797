#include "ade/attention.hpp"
#include "ade/emd.hpp"
#include "ade/model.hpp"
#include "ade/transport.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

ade::Matrix uniform_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  ade::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

ade::TransportProblem problem(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ade::TransportProblem p;
  p.cost = uniform_matrix(n, n, rng, 0.0, 1.0);
  p.supplies = uniform_matrix(n, 1, rng, 0.1, 1.0).col(0);
  p.demands = uniform_matrix(n, 1, rng, 0.1, 1.0).col(0);
  p.supplies /= p.supplies.sum();
  p.demands /= p.demands.sum();
  return p;
}

void BM_TransportExact(benchmark::State& state) {
  const auto p = problem(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(ade::solve_transport(p).objective);
}
BENCHMARK(BM_TransportExact)->Arg(4)->Arg(16)->Arg(49)->Arg(100);

void BM_TransportSinkhorn(benchmark::State& state) {
  const auto p = problem(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(ade::solve_sinkhorn(p).objective);
}
BENCHMARK(BM_TransportSinkhorn)->Arg(16)->Arg(196);

void BM_CrossAttendSwapped(benchmark::State& state) {
  const int tokens = static_cast<int>(state.range(0));
  const ade::AttentionConfig cfg{4, 64};
  ade::Rng rng(2);
  const auto params = ade::AttentionParams::random(cfg, rng);
  std::mt19937_64 g(3);
  const auto a = uniform_matrix(tokens, 64, g, -1, 1), b = uniform_matrix(tokens, 64, g, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ade::cross_attend_swapped(a, b, params, cfg));
}
BENCHMARK(BM_CrossAttendSwapped)->Arg(17)->Arg(197);

// Forward and backward of one training triple on the default toy sizes.
void BM_TripleLossAndGrad(benchmark::State& state) {
  ade::ModelConfig config;
  config.mode = static_cast<ade::AttentionMode>(state.range(0));
  const ade::ConceptVocabulary vocab{{"a0", "a1", "a2", "a3", "a4", "a5"}, {"o0", "o1", "o2", "o3", "o4"}};
  ade::Rng rng(4);
  const auto params = ade::ModelParams::random(config, vocab, rng);
  const auto pairs = vocab.all_pairs();
  const auto protos = ade::compose_all(params.heads.composer, params.heads.table, pairs);
  std::mt19937_64 g(5);
  const auto z = uniform_matrix(17, 64, g, -1, 1), za = uniform_matrix(17, 64, g, -1, 1),
             zo = uniform_matrix(17, 64, g, -1, 1);
  auto grads = ade::ModelParams::zeros_like(params);
  ade::Matrix d_protos = ade::Matrix::Zero(protos.rows(), protos.cols());
  for (auto _ : state) {
    benchmark::DoNotOptimize(ade::triple_loss(config, params, z, za, zo, {1, 2, 7}, protos, &grads, &d_protos).total);
  }
  state.SetLabel(ade::to_string(config.mode));
}
BENCHMARK(BM_TripleLossAndGrad)->Arg(0)->Arg(1)->Arg(2);

}  // namespace

BENCHMARK_MAIN();
