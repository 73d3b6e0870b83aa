#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "mssm/gemm.hpp"
#include "mssm/init.hpp"
#include "mssm/model.hpp"
#include "mssm/ops.hpp"
#include "mssm/optim.hpp"
#include "mssm/rng.hpp"
#include "mssm/ssm.hpp"
#include "mssm/tasks.hpp"

using namespace mssm;

namespace {

Tensor<float> randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor<float> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(scale * rng.normal());
  return t;
}

void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<float> a(n * n, 1.0f), b(n * n, 0.5f), c(n * n);
  for (auto _ : state) {
    gemm<float>(false, false, n, n, n, 1.0f, a.data(), n, b.data(), n, 0.0f, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(256)->Arg(640);

// E = 256 channels, N = 64, batch 32 x 42 tokens: one Mamba-2 layer at desk scale.
void BM_Scan(benchmark::State& state) {
  const bool per_head = state.range(0) != 0;
  const std::size_t E = 256, N = 64, T = 42, S = 32, head_dim = 64;
  const DecayKind kind = per_head ? DecayKind::per_head : DecayKind::per_channel;
  const std::size_t G = per_head ? E / head_dim : E;
  const Tensor<float> x = randn({E, S * T}, 1);
  Tensor<float> delta = randn({G, S * T}, 2);
  for (auto& v : delta.data()) v = 0.01f + 0.1f * std::abs(v);
  const Tensor<float> a_log = per_head ? randn({G}, 3, 0.5) : randn({E, N}, 3, 0.5);
  const Tensor<float> b = randn({N, S * T}, 4), c = randn({N, S * T}, 5);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::selective_scan(x, delta, a_log, b, c, T, kind));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(E * N * S * T));
}
BENCHMARK(BM_Scan)->Arg(0)->Arg(1)->ArgNames({"per_head"});

// Forward, backward and Adam update of the 2-layer D = 128 Mamba-2 copy model.
void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.variant = Variant::mamba2;
  cfg.n_layers = 2;
  cfg.d_model = 128;
  cfg.d_state = 64;
  cfg.head_dim = 64;
  cfg.vocab_size = 18;
  Model<float> model(cfg);
  apply_init(InitFlags::preset("mimetic-mamba2"), model, 0);
  Adam<float> opt(model.parameters());

  TaskSpec task;
  TokenBatch tb;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
  Rng rng(7);
  for (int i = 0; i < 32; ++i) {
    const TaskSample s = task.generate(20, 20, rng);
    tb.seq_len = s.tokens.size() - 1;
    tb.ids.insert(tb.ids.end(), s.tokens.begin(), s.tokens.end() - 1);
    targets.insert(targets.end(), s.tokens.begin() + 1, s.tokens.end());
    mask.insert(mask.end(), s.loss_mask.begin() + 1, s.loss_mask.end());
  }
  for (auto _ : state) {
    opt.zero_grad();
    const Tensor<float> loss = ops::cross_entropy(model.forward(tb), targets, mask);
    backward(loss);
    opt.step(1e-4);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
