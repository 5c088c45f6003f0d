#include <benchmark/benchmark.h>

#include "cnpadv/cnp.hpp"
#include "cnpadv/datasets.hpp"
#include "cnpadv/ebm.hpp"
#include "cnpadv/nn.hpp"

using namespace cnpadv;
using diff::Graph;
using diff::Tensor;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols) {
  Tensor t = Tensor::zeros(rows, cols);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

data::EpisodeTensors sine_batch(int k, int c, int t) {
  const data::MetaDataset ds = data::normalize(data::gen_sine(k, t, 3));
  Rng rng(4);
  const data::EpisodeBatch ep =
      data::make_episode(ds, k, static_cast<double>(c) / t, static_cast<double>(c) / t, rng);
  return data::gather(ds, ep);
}

}  // namespace

static void BM_MatmulForwardBackward(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(1);
  diff::ParamStore ps;
  auto& w = ps.add("w", random_tensor(rng, 128, 128));
  const Tensor x = random_tensor(rng, m, 128);
  for (auto _ : state) {
    Graph g;
    const auto loss = g.mean_all(g.matmul(g.constant(x), g.param(w)));
    g.forward(loss);
    g.backward(loss);
    benchmark::DoNotOptimize(w.grad.raw());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m) * 128 * 128);
}
BENCHMARK(BM_MatmulForwardBackward)->Arg(256)->Arg(2048)->Arg(16384);

static void BM_SineBatchMleLoss(benchmark::State& state) {
  const data::EpisodeTensors et = sine_batch(16, 16, 100);
  model::ModelConfig cfg;  // sine architecture: d_r 64, hidden [64,64]
  model::CnpModel m(cfg, 7);
  for (auto _ : state) {
    Graph g;
    const auto loss = m.mle_loss(g, et);
    g.forward(loss);
    g.backward(loss);
    benchmark::DoNotOptimize(g.node_count());
  }
}
BENCHMARK(BM_SineBatchMleLoss);

static void BM_AttentionForwardBackward(benchmark::State& state) {
  const int groups = 16, t = 100, c = 20, d = 64;
  Rng rng(5);
  diff::ParamStore ps;
  auto& q = ps.add("q", random_tensor(rng, groups * t, d));
  const Tensor k = random_tensor(rng, groups * c, d);
  const Tensor v = random_tensor(rng, groups * c, d);
  for (auto _ : state) {
    Graph g;
    const auto out = g.attention(g.param(q), g.constant(k), g.constant(v), 8, groups);
    const auto loss = g.mean_all(out);
    g.forward(loss);
    g.backward(loss);
    benchmark::DoNotOptimize(q.grad.raw());
  }
}
BENCHMARK(BM_AttentionForwardBackward);

static void BM_AdamStep(benchmark::State& state) {
  Rng rng(9);
  model::ModelConfig cfg;
  model::CnpModel m(cfg, 11);
  for (auto& p : m.params()) {
    for (std::int64_t i = 0; i < p.grad.size(); ++i) p.grad[i] = rng.normal();
  }
  diff::AdamState opt(m.params().all(), {1e-3, 0.9, 0.999, 1e-8, 6e-5});
  for (auto _ : state) {
    opt.step();
    benchmark::DoNotOptimize(opt.t());
  }
  state.SetItemsProcessed(state.iterations() * m.params().total_values());
}
BENCHMARK(BM_AdamStep);

static void BM_EpisodeSampling(benchmark::State& state) {
  const data::MetaDataset ds = data::normalize(data::gen_sine(512, 100, 13));
  Rng rng(14);
  for (auto _ : state) {
    const data::EpisodeBatch ep = data::make_episode(ds, 16, 0.04, 0.2, rng);
    const data::EpisodeTensors et = data::gather(ds, ep);
    benchmark::DoNotOptimize(et.xc.raw());
  }
}
BENCHMARK(BM_EpisodeSampling);

BENCHMARK_MAIN();
