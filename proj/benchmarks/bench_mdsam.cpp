#include <benchmark/benchmark.h>

#include <random>

#include "mdsam/decoder.hpp"
#include "mdsam/engine.hpp"

using namespace mdsam;

namespace {

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

AttentionRow random_row(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> dist(0.01, 1.0);
  AttentionRow row{std::vector<double>(n), std::nullopt};
  double total = 0.0;
  for (double& v : row.weights) total += (v = dist(rng));
  for (double& v : row.weights) v /= total;
  return row;
}

void BM_ScaledDotAttention(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  const Matrix q = random_matrix(rng, n, 8), k = random_matrix(rng, n, 8);
  for (auto _ : state) benchmark::DoNotOptimize(scaled_dot_attention(q, k, true));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ScaledDotAttention)->RangeMultiplier(2)->Range(16, 256)->Complexity();

void BM_LayerStep(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(2);
  const std::vector<AttentionRow> heads{random_row(rng, n), random_row(rng, n)};
  const TokenSpan span{0, n / 2 - 1};
  const MdsamConfig cfg;
  LayerMemory mem(cfg.window);
  for (auto _ : state) {
    auto result = mdsam_layer_step(heads, std::move(mem), cfg, span);
    mem = std::move(result.memory);
    benchmark::DoNotOptimize(result.rows);
  }
}
BENCHMARK(BM_LayerStep)->RangeMultiplier(4)->Range(32, 2048);

void BM_DecodeGreedy(benchmark::State& state) {
  const ModelDims dims;
  const ModelParams params = build_model(42, dims);
  const PromptLayout layout = make_prompt(16, 8, 7, dims.d_model, dims.vocab_size);
  const bool steered = state.range(0) != 0;
  for (auto _ : state) {
    DecodeSession session(params, layout,
                          steered ? std::optional<MdsamConfig>(MdsamConfig{}) : std::nullopt);
    benchmark::DoNotOptimize(decode_greedy(session, 24));
  }
  state.SetLabel(steered ? "mdsam" : "baseline");
}
BENCHMARK(BM_DecodeGreedy)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
