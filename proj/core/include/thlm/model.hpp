#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "thlm/graph.hpp"
#include "thlm/optim.hpp"
#include "thlm/tensor.hpp"
#include "thlm/textseq.hpp"

namespace thlm {

struct ModelConfig {
  std::size_t vocab_size = 0;
  int max_len = 128;
  int d_tok = 64;      // LM width
  int d = 32;          // graph / node representation width
  int lm_layers = 2;
  int heads = 2;
  int ffn_dim = 128;
  int gnn_layers = 2;
  int num_types = 0;
  int num_relations = 0;
  double dropout = 0.1;
  bool tie_mlm_head = false;

  void check() const;
  // BERT-base-sized transformer with a 768-wide two-layer graph network.
  static ModelConfig full_size_preset(std::size_t vocab_size, int num_types, int num_relations);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum ParamGroup : int { kLmGroup = 0, kGnnGroup = 1 };

struct TransformerBlock {
  nn::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  nn::Tensor ln1_gain, ln1_bias;
  nn::Tensor w1, b1, w2, b2;
  nn::Tensor ln2_gain, ln2_bias;
};

// Every trainable parameter: the text encoder with its per-type projection
// heads and MLM head, plus the auxiliary relation-aware graph network and the
// per-type context scoring matrices.
struct ModelState {
  ModelConfig config;

  nn::Tensor tok_emb;  // V x d_tok
  nn::Tensor pos_emb;  // max_len x d_tok
  nn::Tensor emb_ln_gain, emb_ln_bias;
  std::vector<TransformerBlock> blocks;
  std::vector<nn::Tensor> type_proj;              // per type, d_tok x d
  std::vector<nn::Tensor> gnn_self;               // per layer, d x d
  std::vector<std::vector<nn::Tensor>> gnn_rel;   // [layer][relation], d x d
  std::vector<nn::Tensor> score_w;                // per type, d x d
  nn::Tensor mlm_w;                               // d_tok x V (absent when tied)
  nn::Tensor mlm_b;                               // 1 x V

  static ModelState init(const ModelConfig& cfg, std::uint64_t seed);
  ModelState clone() const;

  std::vector<ParamRef> parameters() const;
  std::size_t parameter_count() const;
  bool all_finite() const;
  std::uint64_t checksum() const;
};

struct ForwardContext {
  bool train = false;
  Rng* rng = nullptr;  // required when train and dropout > 0
};

// Token representations (len x d_tok). [PAD] keys are masked out of attention.
nn::Tensor lm_encode(const ModelState& m, std::span<const TokenId> ids, ForwardContext ctx = {});

// Mean over non-[PAD] rows of `token_reps`, projected by the head of type t. 1 x d.
nn::Tensor pool_and_project(const ModelState& m, const nn::Tensor& token_reps,
                            std::span<const TokenId> ids, TypeId t);
nn::Tensor node_semantic(const ModelState& m, std::span<const TokenId> ids, TypeId t,
                         ForwardContext ctx = {});

// Vocabulary logits at the given positions (n x V).
nn::Tensor mlm_logits(const ModelState& m, const nn::Tensor& token_reps,
                      std::span<const std::size_t> positions);

// Row-normalized adjacency per relation; row v averages over N_v^rel.
struct RelationalAdjacency {
  std::size_t num_nodes = 0;
  std::vector<std::shared_ptr<const nn::SparseMatrix>> per_relation;

  static RelationalAdjacency from_graph(const TahGraph& g);
  // Same, but without the listed undirected edges of relation `rel`.
  static RelationalAdjacency from_graph_without(const TahGraph& g, RelId rel,
                                                const std::vector<std::pair<NodeId, NodeId>>& removed);
};

// h W_self + sum_rel A_rel h W_rel.
nn::Tensor relational_layer(const RelationalAdjacency& adj, const nn::Tensor& h,
                            const nn::Tensor& w_self, const std::vector<nn::Tensor>& w_rel);

// Stacked relational layers with ReLU between them; the last layer is linear.
nn::Tensor hgnn_encode(const ModelState& m, const RelationalAdjacency& adj,
                       const nn::Tensor& features, ForwardContext ctx = {});

// Logits h_u^T W_{type(v)} Hg[v] for each candidate v (n x 1).
nn::Tensor pair_logits(const ModelState& m, const TahGraph& g, const nn::Tensor& h_u,
                       std::span<const NodeId> candidates, const nn::Tensor& hg);

// sigmoid(h_u^T W_t hg_v) for a single pair.
double score_pair(const ModelState& m, const nn::Matrix& h_u, TypeId type_v, const nn::Matrix& hg_v);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of loss_fn against central differences on
// a random subset of scalar parameters. Relative error uses
// max(|analytic|, |numeric|, floor) as the denominator.
GradCheckResult grad_check(const std::vector<ParamRef>& params,
                           const std::function<nn::Tensor()>& loss_fn, double eps,
                           std::size_t subset, std::uint64_t seed, double floor = 1e-6);
GradCheckResult grad_check(const ModelState& m, const std::function<nn::Tensor()>& loss_fn,
                           double eps, std::size_t subset = 100, std::uint64_t seed = 0);

}  // namespace thlm
