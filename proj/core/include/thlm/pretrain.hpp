#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "thlm/graph.hpp"
#include "thlm/model.hpp"
#include "thlm/sampler.hpp"
#include "thlm/textseq.hpp"

namespace thlm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PretrainConfig {
  SamplerConfig sampler;  // K, k, negative_ratio, noise_distribution

  // text side
  int k_neighbors = 3;
  int max_len = 64;
  double mask_rate = 0.4;
  MlmPolicy mlm_policy = MlmPolicy::kMaskOnly;
  AugmentMode aug_mode = AugmentMode::kFull;
  int min_freq = 1;

  // optimization
  int batch_size = 16;
  long total_steps = 200;
  long warmup_steps = 20;
  double peak_lr_lm = 5e-3;
  double lr_gnn = 5e-3;
  double weight_decay = 0.01;
  double dropout = 0.1;
  double clip_norm = 1.0;  // <= 0 disables clipping
  double w_mlm = 1.0;
  double w_cgp = 1.0;
  bool use_cgp = true;
  bool use_mlm = true;
  bool random_feats = false;
  int workers = 1;
  std::uint64_t seed = 0;

  // model dimensions
  int d_tok = 64;
  int d = 32;
  int lm_layers = 2;
  int heads = 2;
  int ffn_dim = 128;
  int gnn_layers = 2;
  bool tie_mlm_head = false;

  // Throws ConfigError.
  void check() const;
  ModelConfig model_config(std::size_t vocab_size, const TahGraph& g) const;

  // Full-size settings: 512-token inputs, 768-wide encoder, 8,000 warmup
  // steps to 6e-5 over 80,000 steps, constant 1e-4 for the graph network.
  static PretrainConfig full_size_preset();
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
// Unknown keys and ill-typed values raise ConfigError.
void from_json(const nlohmann::json& j, PretrainConfig& c);

struct StepRecord {
  long step = 0;
  std::optional<double> mlm_loss;  // mean over anchors with MLM targets
  std::optional<double> cgp_loss;  // mean over anchors with positives
  double loss = 0.0;
  double lr_lm = 0.0;
  double lr_gnn = 0.0;
  double grad_norm = 0.0;
  int anchors = 0;
  int skipped = 0;
};

struct TrainTrace {
  std::vector<StepRecord> steps;
  double wall_seconds = 0.0;
  std::uint64_t final_checksum = 0;
  std::size_t skipped_anchors = 0;
  std::size_t parameter_count = 0;
  bool interrupted = false;
};

void write_trace_jsonl(std::ostream& out, const TrainTrace& trace);

// Mean of a loss component over steps [first, first + window).
double window_mean(const TrainTrace& trace, bool cgp, std::size_t first, std::size_t window);

// One pretraining unit.
struct Example {
  NodeId anchor = 0;
  CgpSample cgp;
  TokenSequence seq;      // clean input, used for the anchor representation
  MaskedSequence masked;  // corrupted input for MLM
};

Example make_example(const TahGraph& g, const Vocab& v, const PretrainConfig& cfg, NodeId anchor,
                     std::uint64_t epoch);

// N x d constant features for the graph network, computed once with `m`.
nn::Tensor init_node_features(const TahGraph& g, const ModelState& m, const Vocab& v,
                              const PretrainConfig& cfg);

// -sum log s(u,v+) - sum log(1 - s(u,v-)). Throws if the sample has no positives.
nn::Tensor cgp_loss(const ModelState& m, const TahGraph& g, const CgpSample& sample, const nn::Tensor& h_u,
                    const nn::Tensor& hg);
// Mean cross-entropy over the masked positions. Throws if there are none.
nn::Tensor mlm_loss(const ModelState& m, const MaskedSequence& masked, ForwardContext ctx = {});

class Pretrainer {
 public:
  // Builds a fresh model from cfg when `initial` is empty.
  Pretrainer(const TahGraph& g, const Vocab& v, PretrainConfig cfg,
             std::optional<ModelState> initial = std::nullopt);

  // Joint forward, backward, clipping and AdamW update on one batch.
  StepRecord train_step(const std::vector<Example>& batch);

  // Runs the remaining steps over shuffled anchor batches. Stops early, with
  // trace.interrupted set, when *stop becomes true.
  TrainTrace run(const std::atomic<bool>* stop = nullptr,
                 const std::function<void(const StepRecord&)>& on_step = {});

  const ModelState& model() const { return model_; }
  const nn::Tensor& features() const { return features_; }
  long step() const { return step_; }
  const PretrainConfig& config() const { return cfg_; }

 private:
  std::vector<Example> make_batch(const std::vector<NodeId>& anchors, std::uint64_t epoch) const;

  const TahGraph& g_;
  const Vocab& v_;
  PretrainConfig cfg_;
  ModelState model_;
  nn::Tensor features_;
  RelationalAdjacency adj_;
  std::vector<ParamRef> params_;
  AdamW opt_;
  long step_ = 0;
  std::size_t skipped_total_ = 0;
};

struct PretrainResult {
  ModelState model;
  TrainTrace trace;
};

PretrainResult pretrain(const PretrainConfig& cfg, const TahGraph& g, const Vocab& v,
                        const std::atomic<bool>* stop = nullptr);

}  // namespace thlm
