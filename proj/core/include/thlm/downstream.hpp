#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "thlm/graph.hpp"
#include "thlm/model.hpp"
#include "thlm/textseq.hpp"

namespace thlm {

// ---------------------------------------------------------------- embeddings

struct EmbeddingTable {
  nn::Matrix values;       // |V| x d
  std::string provenance;  // checkpoint identifier

  std::uint64_t checksum() const;
};

struct EmbedOptions {
  int k_neighbors = 3;
  int max_len = 64;
  AugmentMode aug_mode = AugmentMode::kFull;
  std::uint64_t seed = 0;
};

// Frozen forward pass of the text encoder for every node, with the same
// augmentation rules as pretraining. Throws when the vocabulary does not
// match the model.
EmbeddingTable export_embeddings(const ModelState& m, const TahGraph& g, const Vocab& v,
                                 const EmbedOptions& opt, std::string provenance);

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& t);
EmbeddingTable load_embeddings(const std::filesystem::path& path);

// ---------------------------------------------------------------- splits

struct LinkExample {
  NodeId src = 0;
  NodeId dst = 0;
  double label = 0.0;

  friend bool operator==(const LinkExample&, const LinkExample&) = default;
};

struct LinkSplitConfig {
  double train = 0.3;
  double valid = 0.1;
  double test = 0.1;
  int neg_train = 5;
  int neg_valid = 1;
  int neg_test = 1;
};

struct LinkSplit {
  RelId rel = 0;
  std::vector<LinkExample> train, valid, test;  // positives first, then negatives

  // Positive valid and test edges, hidden from relational headers.
  std::vector<std::pair<NodeId, NodeId>> held_out_edges() const;
};

// Uniform edge sampling into disjoint splits; each positive gets negatives by
// corrupting one endpoint to a node of the same type, rejecting true edges.
// Throws when the relation has fewer than 10 edges.
LinkSplit make_link_split(const TahGraph& g, RelId rel, const LinkSplitConfig& cfg, std::uint64_t seed);

struct LabelSplit {
  std::vector<std::string> classes;  // dense id -> label name
  bool multi_label = false;
  std::vector<NodeId> nodes;
  std::vector<std::vector<int>> labels;  // per entry of `nodes`
  std::vector<std::size_t> train, valid, test;  // indices into `nodes`
};

struct LabelSplitConfig {
  double train = 0.7;
  double valid = 0.15;
};

LabelSplit make_label_split(const TahGraph& g, const std::vector<std::pair<std::string, std::vector<std::string>>>& labels,
                            const LabelSplitConfig& cfg, std::uint64_t seed);
// Reads {"id": ..., "labels": [...]} lines.
std::vector<std::pair<std::string, std::vector<std::string>>> read_label_file(const std::filesystem::path& path);

nlohmann::json link_split_to_json(const LinkSplit& s, const TahGraph& g);
LinkSplit link_split_from_json(const nlohmann::json& j, const TahGraph& g);
nlohmann::json label_split_to_json(const LabelSplit& s, const TahGraph& g);
LabelSplit label_split_from_json(const nlohmann::json& j, const TahGraph& g);

// ---------------------------------------------------------------- headers

enum class HeaderKind { kMlp, kRgcn };
std::string to_string(HeaderKind k);
HeaderKind parse_header_kind(const std::string& name);

struct HeaderConfig {
  HeaderKind kind = HeaderKind::kMlp;
  int hidden = 64;
  double lr = 5e-3;
  double weight_decay = 0.0;
  int max_steps = 2000;
  int eval_every = 10;
  int patience = 20;        // evaluations without improvement
  bool standardize = true;  // z-score embedding columns before the header
};

void to_json(nlohmann::json& j, const HeaderConfig& c);
void from_json(const nlohmann::json& j, HeaderConfig& c);

// MLP: two dense layers. RGCN: two relational layers with ReLU, then the MLP.
// A pair task feeds the concatenated pair representation to a scalar output.
struct Header {
  HeaderKind kind = HeaderKind::kMlp;
  bool pair = false;
  std::vector<nn::Tensor> rel_self;               // per relational layer
  std::vector<std::vector<nn::Tensor>> rel_w;     // [layer][relation]
  nn::Tensor w1, b1, w2, b2;

  static Header init(HeaderKind kind, bool pair, int d_in, int hidden, int out_dim, int num_relations,
                     std::uint64_t seed);
  std::vector<ParamRef> parameters() const;
};

// Node representations entering the MLP (identity for kMlp). `adj` is
// required for kRgcn.
nn::Tensor header_node_repr(const Header& h, const RelationalAdjacency* adj, const nn::Tensor& x);
// Pair logits (n x 1) or class logits (n x C).
nn::Tensor header_pair_logits(const Header& h, const nn::Tensor& reprs, const std::vector<std::pair<NodeId, NodeId>>& pairs);
nn::Tensor header_class_logits(const Header& h, const nn::Tensor& reprs, const std::vector<NodeId>& nodes);

// Pair task: probabilities. Classification: logits.
nn::Matrix header_forward(const Header& h, const EmbeddingTable& emb, const TahGraph& g,
                          const std::vector<std::pair<NodeId, NodeId>>& pairs);
nn::Matrix header_forward(const Header& h, const EmbeddingTable& emb, const TahGraph& g,
                          const std::vector<NodeId>& nodes);

// ---------------------------------------------------------------- reports

struct MetricReport {
  std::string task;    // "link" or "classification"
  std::string header;  // "mlp" or "rgcn"
  std::optional<std::uint64_t> seed;  // empty for a seed mean
  std::map<std::string, double> metrics;
  bool failed = false;
  std::uint64_t embedding_checksum = 0;
};

void to_json(nlohmann::json& j, const MetricReport& r);
MetricReport mean_report(const std::vector<MetricReport>& reports);

MetricReport run_link_prediction(const EmbeddingTable& emb, const TahGraph& g, const LinkSplit& split,
                                 const HeaderConfig& cfg, std::uint64_t seed);
MetricReport run_node_classification(const EmbeddingTable& emb, const TahGraph& g, const LabelSplit& split,
                                     const HeaderConfig& cfg, std::uint64_t seed);

}  // namespace thlm
