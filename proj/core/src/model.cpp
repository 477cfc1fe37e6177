#include "thlm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace thlm {

using nn::Matrix;
using nn::Tensor;

// ---------------------------------------------------------------- config

void ModelConfig::check() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (vocab_size <= special::kCount) fail("vocab_size must exceed the special tokens");
  if (max_len < 8) fail("max_len must be >= 8");
  if (d_tok < 1 || d < 1) fail("dimensions must be positive");
  if (heads < 1 || d_tok % heads != 0) fail("d_tok must be divisible by heads");
  if (lm_layers < 0 || gnn_layers < 1) fail("layer counts out of range");
  if (ffn_dim < 1) fail("ffn_dim must be positive");
  if (num_types < 1) fail("num_types must be >= 1");
  if (num_relations < 0) fail("num_relations must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0,1)");
}

ModelConfig ModelConfig::full_size_preset(std::size_t vocab_size, int num_types, int num_relations) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.max_len = 512;
  c.d_tok = 768;
  c.d = 768;
  c.lm_layers = 12;
  c.heads = 12;
  c.ffn_dim = 3072;
  c.gnn_layers = 2;
  c.num_types = num_types;
  c.num_relations = num_relations;
  c.dropout = 0.1;
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size}, {"max_len", c.max_len},
                     {"d_tok", c.d_tok},           {"d", c.d},
                     {"lm_layers", c.lm_layers},   {"heads", c.heads},
                     {"ffn_dim", c.ffn_dim},       {"gnn_layers", c.gnn_layers},
                     {"num_types", c.num_types},   {"num_relations", c.num_relations},
                     {"dropout", c.dropout},       {"tie_mlm_head", c.tie_mlm_head}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_len = j.value("max_len", c.max_len);
  c.d_tok = j.value("d_tok", c.d_tok);
  c.d = j.value("d", c.d);
  c.lm_layers = j.value("lm_layers", c.lm_layers);
  c.heads = j.value("heads", c.heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.gnn_layers = j.value("gnn_layers", c.gnn_layers);
  c.num_types = j.value("num_types", c.num_types);
  c.num_relations = j.value("num_relations", c.num_relations);
  c.dropout = j.value("dropout", c.dropout);
  c.tie_mlm_head = j.value("tie_mlm_head", c.tie_mlm_head);
}

// ---------------------------------------------------------------- init

namespace {

Matrix trunc_normal(Eigen::Index r, Eigen::Index c, double std, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double z;
    do {
      z = normal(rng);
    } while (std::abs(z) > 2.0);
    m.data()[i] = z * std;
  }
  return m;
}

Matrix glorot(Eigen::Index r, Eigen::Index c, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
  std::uniform_real_distribution<double> unif(-limit, limit);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
  return m;
}

Tensor param(Matrix m) { return Tensor::parameter(std::move(m)); }
Tensor zeros(Eigen::Index r, Eigen::Index c) { return param(Matrix::Zero(r, c)); }
Tensor ones(Eigen::Index r, Eigen::Index c) { return param(Matrix::Ones(r, c)); }

}  // namespace

ModelState ModelState::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.check();
  Rng rng(seed);
  const auto V = static_cast<Eigen::Index>(cfg.vocab_size);
  const Eigen::Index dt = cfg.d_tok, d = cfg.d, ff = cfg.ffn_dim;
  constexpr double kStd = 0.02;

  ModelState m;
  m.config = cfg;
  m.tok_emb = param(trunc_normal(V, dt, kStd, rng));
  m.pos_emb = param(trunc_normal(cfg.max_len, dt, kStd, rng));
  m.emb_ln_gain = ones(1, dt);
  m.emb_ln_bias = zeros(1, dt);
  for (int l = 0; l < cfg.lm_layers; ++l) {
    TransformerBlock b;
    b.wq = param(trunc_normal(dt, dt, kStd, rng));
    b.bq = zeros(1, dt);
    b.wk = param(trunc_normal(dt, dt, kStd, rng));
    b.bk = zeros(1, dt);
    b.wv = param(trunc_normal(dt, dt, kStd, rng));
    b.bv = zeros(1, dt);
    b.wo = param(trunc_normal(dt, dt, kStd, rng));
    b.bo = zeros(1, dt);
    b.ln1_gain = ones(1, dt);
    b.ln1_bias = zeros(1, dt);
    b.w1 = param(trunc_normal(dt, ff, kStd, rng));
    b.b1 = zeros(1, ff);
    b.w2 = param(trunc_normal(ff, dt, kStd, rng));
    b.b2 = zeros(1, dt);
    b.ln2_gain = ones(1, dt);
    b.ln2_bias = zeros(1, dt);
    m.blocks.push_back(std::move(b));
  }
  for (int t = 0; t < cfg.num_types; ++t) m.type_proj.push_back(param(glorot(dt, d, rng)));
  for (int l = 0; l < cfg.gnn_layers; ++l) {
    m.gnn_self.push_back(param(glorot(d, d, rng)));
    std::vector<Tensor> rels;
    for (int r = 0; r < cfg.num_relations; ++r) rels.push_back(param(glorot(d, d, rng)));
    m.gnn_rel.push_back(std::move(rels));
  }
  for (int t = 0; t < cfg.num_types; ++t) m.score_w.push_back(param(glorot(d, d, rng)));
  if (!cfg.tie_mlm_head) m.mlm_w = param(trunc_normal(dt, V, kStd, rng));
  m.mlm_b = zeros(1, V);
  return m;
}

std::vector<ParamRef> ModelState::parameters() const {
  std::vector<ParamRef> out;
  auto add = [&](std::string name, const Tensor& t, int group, bool decay) {
    out.push_back(ParamRef{std::move(name), t, group, decay});
  };
  add("lm.tok_emb", tok_emb, kLmGroup, true);
  add("lm.pos_emb", pos_emb, kLmGroup, true);
  add("lm.emb_ln.gain", emb_ln_gain, kLmGroup, false);
  add("lm.emb_ln.bias", emb_ln_bias, kLmGroup, false);
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const auto& b = blocks[l];
    const std::string p = "lm.block" + std::to_string(l) + ".";
    add(p + "wq", b.wq, kLmGroup, true);
    add(p + "bq", b.bq, kLmGroup, false);
    add(p + "wk", b.wk, kLmGroup, true);
    add(p + "bk", b.bk, kLmGroup, false);
    add(p + "wv", b.wv, kLmGroup, true);
    add(p + "bv", b.bv, kLmGroup, false);
    add(p + "wo", b.wo, kLmGroup, true);
    add(p + "bo", b.bo, kLmGroup, false);
    add(p + "ln1.gain", b.ln1_gain, kLmGroup, false);
    add(p + "ln1.bias", b.ln1_bias, kLmGroup, false);
    add(p + "w1", b.w1, kLmGroup, true);
    add(p + "b1", b.b1, kLmGroup, false);
    add(p + "w2", b.w2, kLmGroup, true);
    add(p + "b2", b.b2, kLmGroup, false);
    add(p + "ln2.gain", b.ln2_gain, kLmGroup, false);
    add(p + "ln2.bias", b.ln2_bias, kLmGroup, false);
  }
  for (std::size_t t = 0; t < type_proj.size(); ++t) {
    add("lm.proj.type" + std::to_string(t), type_proj[t], kLmGroup, true);
  }
  if (mlm_w.defined()) add("mlm.w", mlm_w, kLmGroup, true);
  add("mlm.b", mlm_b, kLmGroup, false);
  for (std::size_t l = 0; l < gnn_self.size(); ++l) {
    const std::string p = "gnn.layer" + std::to_string(l) + ".";
    add(p + "self", gnn_self[l], kGnnGroup, true);
    for (std::size_t r = 0; r < gnn_rel[l].size(); ++r) {
      add(p + "rel" + std::to_string(r), gnn_rel[l][r], kGnnGroup, true);
    }
  }
  for (std::size_t t = 0; t < score_w.size(); ++t) {
    add("cgp.score.type" + std::to_string(t), score_w[t], kGnnGroup, true);
  }
  return out;
}

ModelState ModelState::clone() const {
  ModelState m = *this;
  auto copy = [](Tensor& t) {
    if (t.defined()) t = t.clone_parameter();
  };
  copy(m.tok_emb);
  copy(m.pos_emb);
  copy(m.emb_ln_gain);
  copy(m.emb_ln_bias);
  for (auto& b : m.blocks) {
    for (Tensor* t : {&b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln1_gain,
                      &b.ln1_bias, &b.w1, &b.b1, &b.w2, &b.b2, &b.ln2_gain, &b.ln2_bias}) {
      copy(*t);
    }
  }
  for (auto& t : m.type_proj) copy(t);
  for (auto& t : m.gnn_self) copy(t);
  for (auto& layer : m.gnn_rel) {
    for (auto& t : layer) copy(t);
  }
  for (auto& t : m.score_w) copy(t);
  copy(m.mlm_w);
  copy(m.mlm_b);
  return m;
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.tensor.size());
  return n;
}

bool ModelState::all_finite() const {
  for (const auto& p : parameters()) {
    if (!p.tensor.value().allFinite()) return false;
  }
  return true;
}

std::uint64_t ModelState::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : parameters()) {
    feed(p.name.data(), p.name.size());
    feed(p.tensor.value().data(), static_cast<std::size_t>(p.tensor.size()) * sizeof(double));
  }
  return h;
}

// ---------------------------------------------------------------- text encoder

Tensor lm_encode(const ModelState& m, std::span<const TokenId> ids, ForwardContext ctx) {
  const auto& cfg = m.config;
  const auto len = static_cast<Eigen::Index>(ids.size());
  if (len == 0) throw std::invalid_argument("lm_encode: empty sequence");
  if (len > cfg.max_len) throw std::invalid_argument("lm_encode: sequence longer than max_len");
  const bool train = ctx.train && cfg.dropout > 0.0;
  if (train && ctx.rng == nullptr) throw std::invalid_argument("lm_encode: training mode needs an rng");
  Rng dummy;
  Rng& rng = ctx.rng ? *ctx.rng : dummy;

  std::vector<nn::Index> tok_rows(ids.size()), pos_rows(ids.size());
  bool any_pad = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= cfg.vocab_size) {
      throw std::out_of_range("lm_encode: token id " + std::to_string(ids[i]) + " out of range");
    }
    tok_rows[i] = ids[i];
    pos_rows[i] = static_cast<nn::Index>(i);
    any_pad = any_pad || ids[i] == special::kPad;
  }

  Tensor x = nn::add(nn::gather_rows(m.tok_emb, tok_rows), nn::gather_rows(m.pos_emb, pos_rows));
  x = nn::layer_norm(x, m.emb_ln_gain, m.emb_ln_bias);
  x = nn::dropout(x, cfg.dropout, train, rng);

  Matrix attn_mask;
  if (any_pad) {
    attn_mask = Matrix::Zero(len, len);
    for (Eigen::Index j = 0; j < len; ++j) {
      if (ids[static_cast<std::size_t>(j)] == special::kPad) attn_mask.col(j).setConstant(-1e9);
    }
  }

  const int heads = cfg.heads;
  const Eigen::Index dh = cfg.d_tok / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& b : m.blocks) {
    Tensor q = nn::add_row(nn::matmul(x, b.wq), b.bq);
    Tensor k = nn::add_row(nn::matmul(x, b.wk), b.bk);
    Tensor v = nn::add_row(nn::matmul(x, b.wv), b.bv);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Tensor qh = heads == 1 ? q : nn::slice_cols(q, h * dh, dh);
      Tensor kh = heads == 1 ? k : nn::slice_cols(k, h * dh, dh);
      Tensor vh = heads == 1 ? v : nn::slice_cols(v, h * dh, dh);
      Tensor scores = nn::scale(nn::matmul_nt(qh, kh), inv_sqrt);
      if (any_pad) scores = nn::add_constant(scores, attn_mask);
      Tensor probs = nn::dropout(nn::softmax_rows(scores), cfg.dropout, train, rng);
      outs.push_back(nn::matmul(probs, vh));
    }
    Tensor attn = heads == 1 ? outs[0] : nn::concat_cols(outs);
    attn = nn::add_row(nn::matmul(attn, b.wo), b.bo);
    attn = nn::dropout(attn, cfg.dropout, train, rng);
    x = nn::layer_norm(nn::add(x, attn), b.ln1_gain, b.ln1_bias);

    Tensor f = nn::gelu(nn::add_row(nn::matmul(x, b.w1), b.b1));
    f = nn::add_row(nn::matmul(f, b.w2), b.b2);
    f = nn::dropout(f, cfg.dropout, train, rng);
    x = nn::layer_norm(nn::add(x, f), b.ln2_gain, b.ln2_bias);
  }
  return x;
}

Tensor pool_and_project(const ModelState& m, const Tensor& token_reps, std::span<const TokenId> ids,
                        TypeId t) {
  if (t < 0 || static_cast<std::size_t>(t) >= m.type_proj.size()) {
    throw std::out_of_range("node type " + std::to_string(t) + " has no projection head");
  }
  std::vector<bool> keep(ids.size());
  bool any = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    keep[i] = ids[i] != special::kPad;
    any = any || keep[i];
  }
  if (!any) throw std::invalid_argument("node_semantic: sequence has no non-pad tokens");
  return nn::matmul(nn::mean_rows(token_reps, keep), m.type_proj[static_cast<std::size_t>(t)]);
}

Tensor node_semantic(const ModelState& m, std::span<const TokenId> ids, TypeId t, ForwardContext ctx) {
  if (t < 0 || static_cast<std::size_t>(t) >= m.type_proj.size()) {
    throw std::out_of_range("node type " + std::to_string(t) + " has no projection head");
  }
  return pool_and_project(m, lm_encode(m, ids, ctx), ids, t);
}

Tensor mlm_logits(const ModelState& m, const Tensor& token_reps, std::span<const std::size_t> positions) {
  std::vector<nn::Index> rows(positions.begin(), positions.end());
  Tensor sel = nn::gather_rows(token_reps, rows);
  Tensor logits = m.mlm_w.defined() ? nn::matmul(sel, m.mlm_w) : nn::matmul_nt(sel, m.tok_emb);
  return nn::add_row(logits, m.mlm_b);
}

// ---------------------------------------------------------------- graph network

namespace {

RelationalAdjacency build_adjacency(const TahGraph& g, RelId skip_rel,
                                    const std::vector<std::pair<NodeId, NodeId>>& removed) {
  std::vector<std::pair<NodeId, NodeId>> drop;
  for (auto [a, b] : removed) {
    drop.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::sort(drop.begin(), drop.end());
  auto dropped = [&](NodeId a, NodeId b) {
    return std::binary_search(drop.begin(), drop.end(), std::make_pair(std::min(a, b), std::max(a, b)));
  };

  RelationalAdjacency adj;
  adj.num_nodes = g.num_nodes();
  const auto n = static_cast<Eigen::Index>(g.num_nodes());
  for (std::size_t r = 0; r < g.num_relations(); ++r) {
    std::vector<Eigen::Triplet<double>> trip;
    for (Eigen::Index v = 0; v < n; ++v) {
      auto nb = g.neighbors(static_cast<NodeId>(v), static_cast<RelId>(r));
      std::vector<NodeId> kept;
      for (NodeId w : nb) {
        if (static_cast<RelId>(r) == skip_rel && dropped(static_cast<NodeId>(v), w)) continue;
        kept.push_back(w);
      }
      for (NodeId w : kept) trip.emplace_back(v, w, 1.0 / static_cast<double>(kept.size()));
    }
    auto a = std::make_shared<nn::SparseMatrix>(n, n);
    a->setFromTriplets(trip.begin(), trip.end());
    adj.per_relation.push_back(std::move(a));
  }
  return adj;
}

}  // namespace

RelationalAdjacency RelationalAdjacency::from_graph(const TahGraph& g) {
  return build_adjacency(g, -1, {});
}

RelationalAdjacency RelationalAdjacency::from_graph_without(
    const TahGraph& g, RelId rel, const std::vector<std::pair<NodeId, NodeId>>& removed) {
  return build_adjacency(g, rel, removed);
}

Tensor relational_layer(const RelationalAdjacency& adj, const Tensor& h, const Tensor& w_self,
                        const std::vector<Tensor>& w_rel) {
  if (static_cast<std::size_t>(h.rows()) != adj.num_nodes) {
    throw std::invalid_argument("relational_layer: feature rows differ from node count");
  }
  if (w_rel.size() != adj.per_relation.size()) {
    throw std::invalid_argument("relational_layer: one weight per relation required");
  }
  Tensor out = nn::matmul(h, w_self);
  for (std::size_t r = 0; r < w_rel.size(); ++r) {
    if (adj.per_relation[r]->nonZeros() == 0) continue;
    out = nn::add(out, nn::matmul(nn::spmm(adj.per_relation[r], h), w_rel[r]));
  }
  return out;
}

Tensor hgnn_encode(const ModelState& m, const RelationalAdjacency& adj, const Tensor& features,
                   ForwardContext ctx) {
  if (features.cols() != m.config.d) throw std::invalid_argument("hgnn_encode: feature width differs from d");
  const bool train = ctx.train && m.config.dropout > 0.0;
  if (train && ctx.rng == nullptr) throw std::invalid_argument("hgnn_encode: training mode needs an rng");
  Tensor h = features;
  const std::size_t layers = m.gnn_self.size();
  for (std::size_t l = 0; l < layers; ++l) {
    h = relational_layer(adj, h, m.gnn_self[l], m.gnn_rel[l]);
    if (l + 1 < layers) {
      h = nn::relu(h);
      if (train) h = nn::dropout(h, m.config.dropout, true, *ctx.rng);
    }
  }
  return h;
}

Tensor pair_logits(const ModelState& m, const TahGraph& g, const Tensor& h_u,
                   std::span<const NodeId> candidates, const Tensor& hg) {
  if (h_u.rows() != 1 || h_u.cols() != m.config.d) throw std::invalid_argument("pair_logits: h_u must be 1 x d");
  // Group candidates by type so each W_t is applied once.
  std::vector<std::vector<std::size_t>> slots(m.score_w.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    slots.at(static_cast<std::size_t>(g.type_of(candidates[i]))).push_back(i);
  }
  std::vector<Tensor> parts;
  std::vector<std::size_t> order;
  for (std::size_t t = 0; t < slots.size(); ++t) {
    if (slots[t].empty()) continue;
    std::vector<nn::Index> rows;
    for (std::size_t i : slots[t]) rows.push_back(candidates[i]);
    Tensor query = nn::matmul(h_u, m.score_w[t]);                  // 1 x d
    parts.push_back(nn::matmul_nt(nn::gather_rows(hg, rows), query));  // n_t x 1
    order.insert(order.end(), slots[t].begin(), slots[t].end());
  }
  if (parts.empty()) throw std::invalid_argument("pair_logits: no candidates");
  Tensor grouped = parts.size() == 1 ? parts[0] : nn::concat_rows(parts);
  // Restore candidate order.
  std::vector<nn::Index> inverse(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) inverse[order[pos]] = static_cast<nn::Index>(pos);
  return nn::gather_rows(grouped, inverse);
}

double score_pair(const ModelState& m, const Matrix& h_u, TypeId type_v, const Matrix& hg_v) {
  const Matrix& w = m.score_w.at(static_cast<std::size_t>(type_v)).value();
  const double z = (h_u * w * hg_v.transpose())(0, 0);
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// ---------------------------------------------------------------- gradient check

GradCheckResult grad_check(const std::vector<ParamRef>& params, const std::function<Tensor()>& loss_fn,
                           double eps, std::size_t subset, std::uint64_t seed, double floor) {
  for (const auto& p : params) p.tensor.node()->grad.resize(0, 0);
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw std::runtime_error("grad_check: non-finite loss");
  nn::backward(loss);
  std::vector<Matrix> analytic;
  for (const auto& p : params) analytic.push_back(p.tensor.grad());

  std::vector<std::pair<std::size_t, nn::Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (nn::Index j = 0; j < params[i].tensor.size(); ++j) coords.emplace_back(i, j);
  }
  Rng rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > subset) coords.resize(subset);

  GradCheckResult res;
  for (auto [i, j] : coords) {
    Tensor t = params[i].tensor;
    double& w = t.mutable_value().data()[j];
    const double orig = w;
    w = orig + eps;
    const double up = loss_fn().item();
    w = orig - eps;
    const double down = loss_fn().item();
    w = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) throw std::runtime_error("grad_check: non-finite loss");
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[i].data()[j];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_param = params[i].name;
      res.worst_analytic = a;
      res.worst_numeric = numeric;
    }
    ++res.checked;
  }
  for (const auto& p : params) p.tensor.node()->grad.resize(0, 0);
  return res;
}

GradCheckResult grad_check(const ModelState& m, const std::function<Tensor()>& loss_fn, double eps,
                           std::size_t subset, std::uint64_t seed) {
  return grad_check(m.parameters(), loss_fn, eps, subset, seed);
}

}  // namespace thlm
