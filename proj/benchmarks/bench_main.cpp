#include <benchmark/benchmark.h>

#include "thlm/downstream.hpp"
#include "thlm/log.hpp"
#include "thlm/metrics.hpp"
#include "thlm/pretrain.hpp"
#include "thlm/sampler.hpp"
#include "thlm/synth.hpp"

using namespace thlm;

namespace {

const SynthGraph& graph() {
  static const SynthGraph s = [] {
    set_log_level(LogLevel::kWarning);
    return generate_synthetic_tahg(SynthConfig{});
  }();
  return s;
}

const Vocab& vocab() {
  static const Vocab v = build_vocab(graph().graph, 1);
  return v;
}

const ModelState& model() {
  static const ModelState m = ModelState::init(PretrainConfig{}.model_config(vocab().size(), graph().graph), 0);
  return m;
}

void BM_ExactContext(benchmark::State& state) {
  const TahGraph& g = graph().graph;
  const int K = static_cast<int>(state.range(0));
  NodeId u = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(extract_context_exact(g, u, K));
    u = static_cast<NodeId>((u + 1) % g.num_nodes());
  }
}
BENCHMARK(BM_ExactContext)->DenseRange(1, 4);

void BM_CgpSample(benchmark::State& state) {
  const TahGraph& g = graph().graph;
  SamplerConfig cfg;
  cfg.negative_ratio = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(make_cgp_sample(g, static_cast<NodeId>(seed % g.num_nodes()), cfg, seed));
    ++seed;
  }
}
BENCHMARK(BM_CgpSample)->Arg(1)->Arg(5)->Arg(7);

void BM_AssembleAndMask(benchmark::State& state) {
  const TahGraph& g = graph().graph;
  Rng rng(1);
  NodeId u = 0;
  for (auto _ : state) {
    const TokenSequence seq = assemble_input(g, vocab(), u, 3, 64, rng, AugmentMode::kFull);
    benchmark::DoNotOptimize(mask_sequence(seq, 0.4, rng));
    u = static_cast<NodeId>((u + 1) % g.num_nodes());
  }
}
BENCHMARK(BM_AssembleAndMask);

void BM_LmForward(benchmark::State& state) {
  std::vector<TokenId> ids(static_cast<std::size_t>(state.range(0)), special::kCount);
  ids.front() = special::kCls;
  for (auto _ : state) benchmark::DoNotOptimize(lm_encode(model(), ids).value());
}
BENCHMARK(BM_LmForward)->Arg(16)->Arg(64);

void BM_LmForwardBackward(benchmark::State& state) {
  MaskedSequence ms;
  ms.ids.assign(64, special::kCount + 1);
  ms.ids.front() = special::kCls;
  ms.ids[10] = special::kMask;
  ms.targets = {{10, special::kCount + 2}};
  for (auto _ : state) {
    const nn::Tensor loss = mlm_loss(model(), ms);
    nn::backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_LmForwardBackward);

void BM_HgnnEncode(benchmark::State& state) {
  const TahGraph& g = graph().graph;
  const RelationalAdjacency adj = RelationalAdjacency::from_graph(g);
  const nn::Tensor x = nn::Tensor::constant(nn::Matrix::Random(static_cast<nn::Index>(g.num_nodes()), model().config.d));
  for (auto _ : state) benchmark::DoNotOptimize(hgnn_encode(model(), adj, x).value());
}
BENCHMARK(BM_HgnnEncode);

void BM_Ndcg(benchmark::State& state) {
  const nn::Matrix scores = nn::Matrix::Random(state.range(0), 16);
  RankedPrediction rp{rank_rows(scores), {}, 16};
  for (int i = 0; i < scores.rows(); ++i) rp.truth.push_back({i % 16});
  for (auto _ : state) benchmark::DoNotOptimize(ndcg_at_k(rp, 5));
}
BENCHMARK(BM_Ndcg)->Arg(1000);

}  // namespace

BENCHMARK_MAIN();
