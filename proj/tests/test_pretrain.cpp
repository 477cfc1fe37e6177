#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "objective.hpp"
#include "thlm/optim.hpp"
#include "thlm/pretrain.hpp"
#include "thlm/synth.hpp"

using namespace thlm;
using nn::Index;
using nn::Matrix;
using nn::Tensor;

namespace {

struct SmallRun {
  SynthGraph synth;
  Vocab vocab;
  PretrainConfig cfg;

  explicit SmallRun(long steps = 6) {
    SynthConfig sc;
    sc.num_rich = 30;
    sc.num_a = 20;
    sc.num_b = 10;
    sc.p_in = 0.2;
    synth = generate_synthetic_tahg(sc);
    vocab = build_vocab(synth.graph, 1);
    cfg.total_steps = steps;
    cfg.warmup_steps = 2;
    cfg.batch_size = 8;
    cfg.d_tok = 16;
    cfg.d = 8;
    cfg.ffn_dim = 32;
    cfg.lm_layers = 1;
    cfg.max_len = 32;
  }
};

}  // namespace

TEST(PretrainConfigTest, DefaultsJsonAndErrors) {
  const PretrainConfig c;
  EXPECT_EQ(c.sampler.order, 2);
  EXPECT_EQ(c.sampler.negative_ratio, 5);
  EXPECT_DOUBLE_EQ(c.mask_rate, 0.4);
  EXPECT_DOUBLE_EQ(c.weight_decay, 0.01);
  EXPECT_DOUBLE_EQ(c.clip_norm, 1.0);
  const nlohmann::json j = c;
  EXPECT_EQ(j.at("loss_weights").at("mlm"), 1.0);
  EXPECT_EQ(j.at("task_flags").at("use_cgp"), true);
  const PretrainConfig back = j.get<PretrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);

  EXPECT_THROW(nlohmann::json({{"bogus", 1}}).get<PretrainConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"K", "two"}}).get<PretrainConfig>(), ConfigError);
  EXPECT_THROW(nlohmann::json({{"task_flags", {{"use_x", true}}}}).get<PretrainConfig>(), ConfigError);
  PretrainConfig bad;
  bad.sampler.order = 5;
  EXPECT_THROW(bad.check(), ConfigError);
  bad = PretrainConfig{};
  bad.use_cgp = bad.use_mlm = false;
  EXPECT_THROW(bad.check(), ConfigError);
  bad = PretrainConfig{};
  bad.warmup_steps = bad.total_steps + 1;
  EXPECT_THROW(bad.check(), ConfigError);
}

TEST(PretrainConfigTest, FullSizePresetSettings) {
  const PretrainConfig p = PretrainConfig::full_size_preset();
  EXPECT_EQ(p.warmup_steps, 8000);
  EXPECT_EQ(p.total_steps, 80000);
  EXPECT_DOUBLE_EQ(p.peak_lr_lm, 6e-5);
  EXPECT_DOUBLE_EQ(p.lr_gnn, 1e-4);
  EXPECT_DOUBLE_EQ(p.weight_decay, 0.01);
  EXPECT_DOUBLE_EQ(p.dropout, 0.1);
  EXPECT_EQ(p.batch_size, 32);
  EXPECT_EQ(p.max_len, 512);
  EXPECT_EQ(p.sampler.negative_ratio, 5);
  EXPECT_EQ(p.d_tok, 768);
  EXPECT_EQ(p.gnn_layers, 2);
}

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(warmup_linear_lr(0, 10, 110, 1.0), 0.1);
  EXPECT_DOUBLE_EQ(warmup_linear_lr(10, 10, 110, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(warmup_linear_lr(60, 10, 110, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(warmup_linear_lr(110, 10, 110, 1.0), 0.0);
  for (long s = 1; s < 10; ++s) EXPECT_GT(warmup_linear_lr(s, 10, 110, 1.0), warmup_linear_lr(s - 1, 10, 110, 1.0));
}

TEST(Optimizer, AdamWMatchesHandComputation) {
  Tensor w = Tensor::parameter(Matrix::Constant(1, 1, 2.0));
  AdamW opt({{"w", w, 0, true}}, AdamWOptions{0.9, 0.999, 1e-8, 0.1});
  double m = 0, v = 0, p = 2.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 3.0 * t;
    w.mutable_grad() = Matrix::Constant(1, 1, g);
    opt.step({0.01});
    opt.zero_grad();
    p *= 1.0 - 0.01 * 0.1;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    p -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(w.value()(0, 0), p, 1e-15);
  }
}

TEST(Optimizer, ClipScalesToMaxNorm) {
  Tensor a = Tensor::parameter(Matrix::Zero(1, 2)), b = Tensor::parameter(Matrix::Zero(1, 1));
  a.mutable_grad() = (Matrix(1, 2) << 3, 0).finished();
  b.mutable_grad() = Matrix::Constant(1, 1, 4);
  const std::vector<ParamRef> ps{{"a", a}, {"b", b}};
  EXPECT_DOUBLE_EQ(clip_grad_norm(ps, 1.0), 5.0);
  EXPECT_NEAR(std::sqrt(a.grad().squaredNorm() + b.grad().squaredNorm()), 1.0, 1e-12);
}

TEST(Losses, CgpZeroRepresentationIsLn2PerCandidate) {
  const testkit::TinySetup t;
  const Tensor hg = hgnn_encode(t.model, t.adj, t.features);
  for (const Example& ex : t.examples) {
    ASSERT_FALSE(ex.cgp.skippable());
    const double l = cgp_loss(t.model, t.graph, ex.cgp, Tensor::constant(Matrix::Zero(1, 4)), hg).item();
    EXPECT_NEAR(l, static_cast<double>(ex.cgp.positives.size() + ex.cgp.negatives.size()) * std::log(2.0), 1e-12);
  }
}

TEST(Losses, CgpClosedFormPair) {
  testkit::TinySetup t;
  for (auto& w : t.model.score_w) w.mutable_value() = Matrix::Identity(4, 4);
  Matrix hg = Matrix::Zero(5, 4);
  hg(1, 0) = std::log(9.0);
  hg(3, 0) = -std::log(9.0);
  CgpSample s;
  s.positives = {1};
  s.negatives = {3};
  const Matrix hu = (Matrix(1, 4) << 1, 0, 0, 0).finished();
  const double l = cgp_loss(t.model, t.graph, s, Tensor::constant(hu), Tensor::constant(hg)).item();
  EXPECT_NEAR(l, -2.0 * std::log(0.9), 1e-12);
  EXPECT_NEAR(l, 0.21072, 1e-5);
  s.positives.clear();
  EXPECT_THROW(cgp_loss(t.model, t.graph, s, Tensor::constant(hu), Tensor::constant(hg)), std::invalid_argument);
}

TEST(Losses, MlmUniformHeadIsLnV) {
  testkit::TinySetup t;
  t.model.mlm_w.mutable_value().setZero();
  t.model.mlm_b.mutable_value().setZero();
  const double V = static_cast<double>(t.vocab.size());
  for (const Example& ex : t.examples) EXPECT_NEAR(mlm_loss(t.model, ex.masked).item(), std::log(V), 1e-9);
  EXPECT_THROW(mlm_loss(t.model, MaskedSequence{{2, 3}, {}}), std::invalid_argument);
}

TEST(Losses, MlmNearCertainTarget) {
  testkit::TinySetup t;
  t.model.mlm_w.mutable_value().setZero();
  const double V = static_cast<double>(t.vocab.size());
  const TokenId target = 7;
  const double gap = std::log((V - 1) * (1 - 1e-9) / 1e-9);
  t.model.mlm_b.mutable_value().setZero();
  t.model.mlm_b.mutable_value()(0, target) = gap;
  MaskedSequence ms{{2, 4, 3}, {{1, target}}};
  EXPECT_NEAR(mlm_loss(t.model, ms).item(), 1e-9, 1e-15);
}

TEST(Losses, MlmInvariantUnderVocabularyRelabeling) {
  testkit::TinySetup t;
  const Index V = static_cast<Index>(t.vocab.size());
  std::vector<Index> perm(V);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin() + 5, perm.end());
  ModelState p = t.model.clone();
  for (Index i = 0; i < V; ++i) {
    p.mlm_w.mutable_value().col(perm[i]) = t.model.mlm_w.value().col(i);
    p.mlm_b.mutable_value()(0, perm[i]) = t.model.mlm_b.value()(0, i);
  }
  for (const Example& ex : t.examples) {
    MaskedSequence relabeled = ex.masked;
    for (auto& tg : relabeled.targets) tg.original = static_cast<TokenId>(perm[tg.original]);
    EXPECT_NEAR(mlm_loss(p, relabeled).item(), mlm_loss(t.model, ex.masked).item(), 1e-12);
  }
}

TEST(Features, ShapeDeterminismAndRandomVariant) {
  SmallRun r;
  const ModelState m = ModelState::init(r.cfg.model_config(r.vocab.size(), r.synth.graph), 1);
  const Tensor a = init_node_features(r.synth.graph, m, r.vocab, r.cfg);
  EXPECT_EQ(a.rows(), static_cast<Index>(r.synth.graph.num_nodes()));
  EXPECT_EQ(a.cols(), r.cfg.d);
  EXPECT_TRUE(a.value().allFinite());
  EXPECT_EQ(a.value(), init_node_features(r.synth.graph, m, r.vocab, r.cfg).value());
  r.cfg.random_feats = true;
  const Matrix rf = init_node_features(r.synth.graph, m, r.vocab, r.cfg).value();
  const double mean = rf.mean();
  const double sd = std::sqrt((rf.array() - mean).square().mean());
  EXPECT_NEAR(mean, 0.0, 0.005);
  EXPECT_NEAR(sd, 0.02, 0.002);
}

TEST(Trainer, ZeroLearningRateIsNoOp) {
  SmallRun r(4);
  r.cfg.peak_lr_lm = 0.0;
  r.cfg.lr_gnn = 0.0;
  Pretrainer t(r.synth.graph, r.vocab, r.cfg);
  const auto before = t.model().checksum();
  const TrainTrace trace = t.run();
  EXPECT_EQ(trace.steps.size(), 4u);
  EXPECT_EQ(t.model().checksum(), before);
}

TEST(Trainer, OneStepMovesBothEncoders) {
  SmallRun r(1);
  r.cfg.warmup_steps = 0;
  Pretrainer t(r.synth.graph, r.vocab, r.cfg);
  const ModelState before = t.model().clone();
  t.run();
  EXPECT_GT((t.model().tok_emb.value() - before.tok_emb.value()).norm(), 0.0);
  EXPECT_GT((t.model().blocks[0].wq.value() - before.blocks[0].wq.value()).norm(), 0.0);
  EXPECT_GT((t.model().gnn_self[0].value() - before.gnn_self[0].value()).norm(), 0.0);
  EXPECT_GT((t.model().score_w[0].value() - before.score_w[0].value()).norm(), 0.0);
}

TEST(Trainer, FeaturesStayFrozen) {
  SmallRun r(3);
  Pretrainer t(r.synth.graph, r.vocab, r.cfg);
  const Matrix f = t.features().value();
  t.run();
  EXPECT_EQ(t.features().value(), f);
}

TEST(Trainer, TaskFlagsSelectLosses) {
  SmallRun r(3);
  r.cfg.use_cgp = false;
  TrainTrace trace = Pretrainer(r.synth.graph, r.vocab, r.cfg).run();
  for (const auto& s : trace.steps) {
    EXPECT_TRUE(s.mlm_loss.has_value());
    EXPECT_FALSE(s.cgp_loss.has_value());
  }
  r.cfg.use_cgp = true;
  r.cfg.use_mlm = false;
  trace = Pretrainer(r.synth.graph, r.vocab, r.cfg).run();
  for (const auto& s : trace.steps) {
    EXPECT_FALSE(s.mlm_loss.has_value());
    EXPECT_TRUE(s.cgp_loss.has_value());
  }
  std::ostringstream out;
  write_trace_jsonl(out, trace);
  const auto first = nlohmann::json::parse(out.str().substr(0, out.str().find('\n')));
  EXPECT_FALSE(first.contains("mlm_loss"));
  EXPECT_TRUE(first.contains("cgp_loss"));
}

TEST(Trainer, DeterministicAcrossRunsAndWorkerCounts) {
  SmallRun r(4);
  const auto a = pretrain(r.cfg, r.synth.graph, r.vocab);
  const auto b = pretrain(r.cfg, r.synth.graph, r.vocab);
  EXPECT_EQ(a.trace.final_checksum, b.trace.final_checksum);
  r.cfg.workers = 3;
  const auto c = pretrain(r.cfg, r.synth.graph, r.vocab);
  EXPECT_EQ(a.trace.final_checksum, c.trace.final_checksum);
  r.cfg.seed = 1;
  r.cfg.workers = 1;
  EXPECT_NE(pretrain(r.cfg, r.synth.graph, r.vocab).trace.final_checksum, a.trace.final_checksum);
}

TEST(Trainer, IsolatedAnchorsAreSkippedAndCounted) {
  SmallRun r(4);
  TahGraphBuilder b;
  for (NodeId u = 0; u < static_cast<NodeId>(r.synth.graph.num_nodes()); ++u) {
    b.add_node(r.synth.graph.external_id(u), r.synth.graph.type_name(r.synth.graph.type_of(u)), r.synth.graph.text(u));
  }
  for (const Edge& e : r.synth.graph.edges()) b.add_edge(e.src, e.dst, r.synth.graph.rel_name(e.rel));
  for (int i = 0; i < 20; ++i) b.add_node("iso" + std::to_string(i), "paper", "lonely words");
  const TahGraph g = std::move(b).build({"paper"});
  const Vocab v = build_vocab(g, 1);
  r.cfg.total_steps = 12;
  const TrainTrace trace = Pretrainer(g, v, r.cfg).run();
  EXPECT_GT(trace.skipped_anchors, 0u);
  for (const auto& s : trace.steps) EXPECT_TRUE(std::isfinite(s.loss));
}

TEST(Trainer, StopFlagInterrupts) {
  SmallRun r(50);
  std::atomic<bool> stop{false};
  Pretrainer t(r.synth.graph, r.vocab, r.cfg);
  const TrainTrace trace = t.run(&stop, [&](const StepRecord& s) {
    if (s.step == 2) stop = true;
  });
  EXPECT_TRUE(trace.interrupted);
  EXPECT_EQ(trace.steps.size(), 3u);
  EXPECT_EQ(t.step(), 3);
}

TEST(Trainer, LossDropsOnPlantedSixtyNodeGraph) {
  SmallRun r(200);
  r.cfg.warmup_steps = 20;
  r.cfg.use_mlm = false;
  const TrainTrace trace = pretrain(r.cfg, r.synth.graph, r.vocab).trace;
  const double head = window_mean(trace, true, 0, 10);
  const double tail = window_mean(trace, true, trace.steps.size() - 10, 10);
  EXPECT_LE(tail, 0.7 * head);
}

TEST(Trainer, VocabularyMismatchRejected) {
  SmallRun r(1);
  const ModelState m = ModelState::init(r.cfg.model_config(r.vocab.size() + 1, r.synth.graph), 0);
  EXPECT_THROW(Pretrainer(r.synth.graph, r.vocab, r.cfg, m.clone()), ConfigError);
}
