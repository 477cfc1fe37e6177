#include "thlm/pretrain.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "thlm/log.hpp"

namespace thlm {

namespace {

// Stream tags for derive_seed.
constexpr std::uint64_t kModelTag = 1;
constexpr std::uint64_t kFeatureTag = 2;
constexpr std::uint64_t kEpochTag = 3;
constexpr std::uint64_t kExampleTag = 4;
constexpr std::uint64_t kDropoutTag = 5;

}  // namespace

// ---------------------------------------------------------------- config

void PretrainConfig::check() const {
  auto fail = [](const std::string& msg) { throw ConfigError("pretrain config: " + msg); };
  try {
    sampler.check();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (sampler.order < 1 || sampler.order > 4) fail("K must be in 1..4");
  if (k_neighbors < 0) fail("k_neighbors must be >= 0");
  if (max_len < 8) fail("max_len must be >= 8");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail("mask_rate must be in (0,1)");
  if (min_freq < 1) fail("min_freq must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (warmup_steps < 0 || total_steps < warmup_steps) fail("need total_steps >= warmup_steps >= 0");
  if (peak_lr_lm < 0.0 || lr_gnn < 0.0) fail("learning rates must be >= 0");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0,1)");
  if (w_mlm < 0.0 || w_cgp < 0.0) fail("loss weights must be >= 0");
  if (!use_cgp && !use_mlm) fail("at least one of use_cgp, use_mlm must be set");
  if (workers < 1) fail("workers must be >= 1");
  if (d_tok < 1 || d < 1 || heads < 1 || d_tok % heads != 0) fail("d_tok must be a positive multiple of heads");
  if (lm_layers < 0 || gnn_layers < 1 || ffn_dim < 1) fail("layer sizes out of range");
}

ModelConfig PretrainConfig::model_config(std::size_t vocab_size, const TahGraph& g) const {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.max_len = max_len;
  m.d_tok = d_tok;
  m.d = d;
  m.lm_layers = lm_layers;
  m.heads = heads;
  m.ffn_dim = ffn_dim;
  m.gnn_layers = gnn_layers;
  m.num_types = static_cast<int>(g.num_types());
  m.num_relations = static_cast<int>(g.num_relations());
  m.dropout = dropout;
  m.tie_mlm_head = tie_mlm_head;
  return m;
}

PretrainConfig PretrainConfig::full_size_preset() {
  PretrainConfig c;
  c.max_len = 512;
  c.batch_size = 32;
  c.total_steps = 80000;
  c.warmup_steps = 8000;
  c.peak_lr_lm = 6e-5;
  c.lr_gnn = 1e-4;
  c.d_tok = 768;
  c.d = 768;
  c.lm_layers = 12;
  c.heads = 12;
  c.ffn_dim = 3072;
  return c;
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = nlohmann::json{{"K", c.sampler.order},
                     {"k", c.sampler.fanout},
                     {"negative_ratio", c.sampler.negative_ratio},
                     {"noise_distribution", to_string(c.sampler.noise)},
                     {"k_neighbors", c.k_neighbors},
                     {"max_len", c.max_len},
                     {"mask_rate", c.mask_rate},
                     {"mlm_policy", to_string(c.mlm_policy)},
                     {"aug_mode", to_string(c.aug_mode)},
                     {"min_freq", c.min_freq},
                     {"batch_size", c.batch_size},
                     {"total_steps", c.total_steps},
                     {"warmup_steps", c.warmup_steps},
                     {"peak_lr_lm", c.peak_lr_lm},
                     {"lr_gnn", c.lr_gnn},
                     {"weight_decay", c.weight_decay},
                     {"dropout", c.dropout},
                     {"clip_norm", c.clip_norm},
                     {"loss_weights", {{"mlm", c.w_mlm}, {"cgp", c.w_cgp}}},
                     {"task_flags", {{"use_cgp", c.use_cgp}, {"use_mlm", c.use_mlm}}},
                     {"random_feats", c.random_feats},
                     {"workers", c.workers},
                     {"seed", c.seed},
                     {"d_tok", c.d_tok},
                     {"d", c.d},
                     {"lm_layers", c.lm_layers},
                     {"heads", c.heads},
                     {"ffn_dim", c.ffn_dim},
                     {"gnn_layers", c.gnn_layers},
                     {"tie_mlm_head", c.tie_mlm_head}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  if (!j.is_object()) throw ConfigError("pretrain config must be a JSON object");
  static const std::set<std::string> known = {
      "K",          "k",           "negative_ratio", "noise_distribution", "k_neighbors", "max_len",
      "mask_rate",  "mlm_policy",  "aug_mode",       "min_freq",           "batch_size",  "total_steps",
      "warmup_steps", "peak_lr_lm", "lr_gnn",        "weight_decay",       "dropout",     "clip_norm",
      "loss_weights", "task_flags", "random_feats",  "workers",            "seed",        "d_tok",
      "d",          "lm_layers",   "heads",          "ffn_dim",            "gnn_layers",  "tie_mlm_head"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("pretrain config: unknown key \"" + key + "\"");
  }
  try {
    c.sampler.order = j.value("K", c.sampler.order);
    c.sampler.fanout = j.value("k", c.sampler.fanout);
    c.sampler.negative_ratio = j.value("negative_ratio", c.sampler.negative_ratio);
    if (j.contains("noise_distribution")) {
      c.sampler.noise = parse_noise_distribution(j.at("noise_distribution").get<std::string>());
    }
    c.k_neighbors = j.value("k_neighbors", c.k_neighbors);
    c.max_len = j.value("max_len", c.max_len);
    c.mask_rate = j.value("mask_rate", c.mask_rate);
    if (j.contains("mlm_policy")) c.mlm_policy = parse_mlm_policy(j.at("mlm_policy").get<std::string>());
    if (j.contains("aug_mode")) c.aug_mode = parse_augment_mode(j.at("aug_mode").get<std::string>());
    c.min_freq = j.value("min_freq", c.min_freq);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.peak_lr_lm = j.value("peak_lr_lm", c.peak_lr_lm);
    c.lr_gnn = j.value("lr_gnn", c.lr_gnn);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.dropout = j.value("dropout", c.dropout);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    if (j.contains("loss_weights")) {
      const auto& w = j.at("loss_weights");
      for (const auto& [key, _] : w.items()) {
        if (key != "mlm" && key != "cgp") throw ConfigError("pretrain config: unknown loss weight \"" + key + "\"");
      }
      c.w_mlm = w.value("mlm", c.w_mlm);
      c.w_cgp = w.value("cgp", c.w_cgp);
    }
    if (j.contains("task_flags")) {
      const auto& f = j.at("task_flags");
      for (const auto& [key, _] : f.items()) {
        if (key != "use_mlm" && key != "use_cgp") throw ConfigError("pretrain config: unknown task flag \"" + key + "\"");
      }
      c.use_cgp = f.value("use_cgp", c.use_cgp);
      c.use_mlm = f.value("use_mlm", c.use_mlm);
    }
    c.random_feats = j.value("random_feats", c.random_feats);
    c.workers = j.value("workers", c.workers);
    c.seed = j.value("seed", c.seed);
    c.d_tok = j.value("d_tok", c.d_tok);
    c.d = j.value("d", c.d);
    c.lm_layers = j.value("lm_layers", c.lm_layers);
    c.heads = j.value("heads", c.heads);
    c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
    c.gnn_layers = j.value("gnn_layers", c.gnn_layers);
    c.tie_mlm_head = j.value("tie_mlm_head", c.tie_mlm_head);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pretrain config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("pretrain config: ") + e.what());
  }
}

// ---------------------------------------------------------------- trace

void write_trace_jsonl(std::ostream& out, const TrainTrace& trace) {
  for (const auto& r : trace.steps) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    if (r.mlm_loss) j["mlm_loss"] = *r.mlm_loss;
    if (r.cgp_loss) j["cgp_loss"] = *r.cgp_loss;
    j["loss"] = r.loss;
    j["lr"] = r.lr_lm;
    j["lr_gnn"] = r.lr_gnn;
    j["grad_norm"] = r.grad_norm;
    j["anchors"] = r.anchors;
    j["skipped"] = r.skipped;
    out << j.dump() << '\n';
  }
}

double window_mean(const TrainTrace& trace, bool cgp, std::size_t first, std::size_t window) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = first; i < trace.steps.size() && i < first + window; ++i) {
    const auto& v = cgp ? trace.steps[i].cgp_loss : trace.steps[i].mlm_loss;
    if (v) {
      s += *v;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument("window_mean: no recorded values in window");
  return s / static_cast<double>(n);
}

// ---------------------------------------------------------------- examples and losses

Example make_example(const TahGraph& g, const Vocab& v, const PretrainConfig& cfg, NodeId anchor,
                     std::uint64_t epoch) {
  const std::uint64_t seed = derive_seed(cfg.seed, {kExampleTag, epoch, static_cast<std::uint64_t>(anchor)});
  Example ex;
  ex.anchor = anchor;
  if (cfg.use_cgp) ex.cgp = make_cgp_sample(g, anchor, cfg.sampler, seed);
  ex.cgp.anchor = anchor;
  Rng rng(mix64(seed));
  ex.seq = assemble_input(g, v, anchor, cfg.k_neighbors, cfg.max_len, rng, cfg.aug_mode);
  if (cfg.use_mlm) ex.masked = mask_sequence(ex.seq, cfg.mask_rate, rng, cfg.mlm_policy, v.size());
  return ex;
}

nn::Tensor init_node_features(const TahGraph& g, const ModelState& m, const Vocab& v, const PretrainConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  nn::Matrix feats(n, m.config.d);
  if (cfg.random_feats) {
    Rng rng(derive_seed(cfg.seed, {kFeatureTag}));
    std::normal_distribution<double> normal(0.0, 0.02);
    for (Eigen::Index i = 0; i < feats.size(); ++i) feats.data()[i] = normal(rng);
    return nn::Tensor::constant(std::move(feats));
  }
  for (Eigen::Index u = 0; u < n; ++u) {
    const auto id = static_cast<NodeId>(u);
    Rng rng(derive_seed(cfg.seed, {kFeatureTag, static_cast<std::uint64_t>(u)}));
    const TokenSequence seq = assemble_input(g, v, id, cfg.k_neighbors, cfg.max_len, rng, cfg.aug_mode);
    feats.row(u) = node_semantic(m, seq.ids, g.type_of(id)).value();
  }
  return nn::Tensor::constant(std::move(feats));
}

nn::Tensor cgp_loss(const ModelState& m, const TahGraph& g, const CgpSample& sample, const nn::Tensor& h_u,
                    const nn::Tensor& hg) {
  if (sample.positives.empty()) throw std::invalid_argument("cgp_loss: sample has no positives");
  std::vector<NodeId> cand(sample.positives);
  cand.insert(cand.end(), sample.negatives.begin(), sample.negatives.end());
  nn::Matrix labels = nn::Matrix::Zero(static_cast<Eigen::Index>(cand.size()), 1);
  labels.topRows(static_cast<Eigen::Index>(sample.positives.size())).setOnes();
  return nn::bce_with_logits_sum(pair_logits(m, g, h_u, cand, hg), labels);
}

nn::Tensor mlm_loss(const ModelState& m, const MaskedSequence& masked, ForwardContext ctx) {
  if (masked.targets.empty()) throw std::invalid_argument("mlm_loss: no masked positions");
  std::vector<std::size_t> positions;
  std::vector<nn::Index> targets;
  for (const auto& t : masked.targets) {
    positions.push_back(t.position);
    targets.push_back(t.original);
  }
  const nn::Tensor reps = lm_encode(m, masked.ids, ctx);
  return nn::cross_entropy(mlm_logits(m, reps, positions), targets);
}

// ---------------------------------------------------------------- trainer

Pretrainer::Pretrainer(const TahGraph& g, const Vocab& v, PretrainConfig cfg, std::optional<ModelState> initial)
    : g_(g),
      v_(v),
      cfg_((cfg.check(), std::move(cfg))),
      model_(initial ? std::move(*initial)
                     : ModelState::init(cfg_.model_config(v.size(), g), derive_seed(cfg_.seed, {kModelTag}))),
      features_(init_node_features(g, model_, v, cfg_)),
      adj_(RelationalAdjacency::from_graph(g)),
      params_(model_.parameters()),
      opt_(params_, AdamWOptions{0.9, 0.999, 1e-8, cfg_.weight_decay}) {
  if (model_.config.vocab_size != v.size()) throw ConfigError("model vocabulary size differs from the vocabulary");
  log_info("pretrainer: " + std::to_string(model_.parameter_count()) + " parameters, " +
           std::to_string(g.num_nodes()) + " nodes");
}

StepRecord Pretrainer::train_step(const std::vector<Example>& batch) {
  StepRecord rec;
  rec.step = step_;
  rec.lr_lm = warmup_linear_lr(step_, cfg_.warmup_steps, cfg_.total_steps, cfg_.peak_lr_lm);
  rec.lr_gnn = cfg_.lr_gnn;

  Rng drop_rng(derive_seed(cfg_.seed, {kDropoutTag, static_cast<std::uint64_t>(step_)}));
  const ForwardContext train_ctx{true, &drop_rng};

  nn::Tensor hg;
  if (cfg_.use_cgp) hg = hgnn_encode(model_, adj_, features_, train_ctx);

  std::vector<nn::Tensor> per_anchor;
  double mlm_sum = 0.0, cgp_sum = 0.0;
  int mlm_n = 0, cgp_n = 0;
  for (const Example& ex : batch) {
    if (cfg_.use_cgp && ex.cgp.skippable()) {
      ++rec.skipped;
      continue;
    }
    nn::Tensor total;
    if (cfg_.use_cgp) {
      const nn::Tensor h_u = node_semantic(model_, ex.seq.ids, g_.type_of(ex.anchor), train_ctx);
      const nn::Tensor l = cgp_loss(model_, g_, ex.cgp, h_u, hg);
      cgp_sum += l.item();
      ++cgp_n;
      total = nn::scale(l, cfg_.w_cgp);
    }
    if (cfg_.use_mlm && !ex.masked.targets.empty()) {
      const nn::Tensor l = mlm_loss(model_, ex.masked, train_ctx);
      mlm_sum += l.item();
      ++mlm_n;
      total = total.defined() ? nn::add(total, nn::scale(l, cfg_.w_mlm)) : nn::scale(l, cfg_.w_mlm);
    }
    if (total.defined()) per_anchor.push_back(total);
  }
  rec.anchors = static_cast<int>(per_anchor.size());
  skipped_total_ += static_cast<std::size_t>(rec.skipped);
  if (mlm_n > 0) rec.mlm_loss = mlm_sum / mlm_n;
  if (cgp_n > 0) rec.cgp_loss = cgp_sum / cgp_n;
  ++step_;
  if (per_anchor.empty()) return rec;

  nn::Tensor loss = per_anchor[0];
  for (std::size_t i = 1; i < per_anchor.size(); ++i) loss = nn::add(loss, per_anchor[i]);
  loss = nn::scale(loss, 1.0 / static_cast<double>(per_anchor.size()));
  rec.loss = loss.item();
  if (!std::isfinite(rec.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << rec.step << " (mlm " << (rec.mlm_loss ? *rec.mlm_loss : 0.0) << ", cgp "
        << (rec.cgp_loss ? *rec.cgp_loss : 0.0) << ", anchors";
    for (const Example& ex : batch) msg << ' ' << g_.external_id(ex.anchor);
    msg << ")";
    throw std::runtime_error(msg.str());
  }

  nn::backward(loss);
  rec.grad_norm = clip_grad_norm(params_, cfg_.clip_norm);
  opt_.step({rec.lr_lm, rec.lr_gnn});
  opt_.zero_grad();
  return rec;
}

std::vector<Example> Pretrainer::make_batch(const std::vector<NodeId>& anchors, std::uint64_t epoch) const {
  std::vector<Example> batch(anchors.size());
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg_.workers), anchors.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < anchors.size(); ++i) batch[i] = make_example(g_, v_, cfg_, anchors[i], epoch);
    return batch;
  }
  // Examples depend only on (seed, epoch, anchor), so the split across
  // workers does not change the result.
  std::vector<std::future<void>> jobs;
  for (std::size_t w = 0; w < workers; ++w) {
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = w; i < anchors.size(); i += workers) {
        batch[i] = make_example(g_, v_, cfg_, anchors[i], epoch);
      }
    }));
  }
  for (auto& j : jobs) j.get();
  return batch;
}

TrainTrace Pretrainer::run(const std::atomic<bool>* stop, const std::function<void(const StepRecord&)>& on_step) {
  const auto start = std::chrono::steady_clock::now();
  TrainTrace trace;
  trace.parameter_count = model_.parameter_count();
  std::vector<NodeId> order(g_.num_nodes());
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t batches_per_epoch = (order.size() + bs - 1) / bs;

  while (step_ < cfg_.total_steps) {
    if (stop && stop->load()) {
      trace.interrupted = true;
      break;
    }
    const auto epoch = static_cast<std::uint64_t>(step_) / batches_per_epoch;
    const std::size_t b = static_cast<std::size_t>(step_) % batches_per_epoch;
    std::vector<NodeId> shuffled(order);
    Rng epoch_rng(derive_seed(cfg_.seed, {kEpochTag, epoch}));
    std::shuffle(shuffled.begin(), shuffled.end(), epoch_rng);
    const std::size_t lo = b * bs, hi = std::min(shuffled.size(), lo + bs);
    std::vector<NodeId> anchors(shuffled.begin() + static_cast<std::ptrdiff_t>(lo),
                                shuffled.begin() + static_cast<std::ptrdiff_t>(hi));
    StepRecord rec = train_step(make_batch(anchors, epoch));
    if (on_step) on_step(rec);
    trace.steps.push_back(rec);
  }
  if (!model_.all_finite()) throw std::runtime_error("pretraining produced non-finite parameters");
  trace.skipped_anchors = skipped_total_;
  trace.final_checksum = model_.checksum();
  trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return trace;
}

PretrainResult pretrain(const PretrainConfig& cfg, const TahGraph& g, const Vocab& v,
                        const std::atomic<bool>* stop) {
  Pretrainer trainer(g, v, cfg);
  TrainTrace trace = trainer.run(stop);
  return {trainer.model().clone(), std::move(trace)};
}

}  // namespace thlm
