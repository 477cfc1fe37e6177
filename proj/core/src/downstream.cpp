#include "thlm/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "thlm/checkpoint.hpp"
#include "thlm/log.hpp"
#include "thlm/metrics.hpp"

namespace thlm {

using nn::Matrix;
using nn::Tensor;

namespace {

constexpr std::uint64_t kHeaderTag = 11;
constexpr std::uint64_t kEmbedTag = 12;

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------- embeddings

std::uint64_t EmbeddingTable::checksum() const {
  std::uint64_t h = fnv1a(values.data(), static_cast<std::size_t>(values.size()) * sizeof(double));
  const std::int64_t shape[2] = {values.rows(), values.cols()};
  return fnv1a(shape, sizeof(shape), h);
}

EmbeddingTable export_embeddings(const ModelState& m, const TahGraph& g, const Vocab& v, const EmbedOptions& opt,
                                 std::string provenance) {
  if (v.size() != m.config.vocab_size) {
    throw std::invalid_argument("vocabulary has " + std::to_string(v.size()) + " tokens but the checkpoint expects " +
                                std::to_string(m.config.vocab_size));
  }
  if (g.num_types() != static_cast<std::size_t>(m.config.num_types)) {
    throw std::invalid_argument("graph node types differ from the checkpoint's type heads");
  }
  const int max_len = std::min(opt.max_len, m.config.max_len);
  EmbeddingTable t;
  t.provenance = std::move(provenance);
  t.values.resize(static_cast<Eigen::Index>(g.num_nodes()), m.config.d);
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    const auto id = static_cast<NodeId>(u);
    Rng rng(derive_seed(opt.seed, {kEmbedTag, static_cast<std::uint64_t>(u)}));
    const TokenSequence seq = assemble_input(g, v, id, opt.k_neighbors, max_len, rng, opt.aug_mode);
    t.values.row(static_cast<Eigen::Index>(u)) = node_semantic(m, seq.ids, g.type_of(id)).value();
  }
  if (!t.values.allFinite()) throw std::runtime_error("export_embeddings: non-finite embedding");
  return t;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingTable& t) {
  Container c;
  c.header = {{"kind", "embeddings"}, {"provenance", t.provenance}};
  c.blobs.push_back({"embeddings", t.values});
  write_container(path, c);
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "embeddings") throw FormatError(path.string() + ": not an embedding table");
  const NamedBlob* b = c.find("embeddings");
  if (!b) throw FormatError(path.string() + ": missing embeddings blob");
  return {b->value, c.header.value("provenance", "")};
}

// ---------------------------------------------------------------- link split

std::vector<std::pair<NodeId, NodeId>> LinkSplit::held_out_edges() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (const auto* part : {&valid, &test}) {
    for (const auto& e : *part) {
      if (e.label > 0.5) out.emplace_back(e.src, e.dst);
    }
  }
  return out;
}

LinkSplit make_link_split(const TahGraph& g, RelId rel, const LinkSplitConfig& cfg, std::uint64_t seed) {
  g.check_relation(rel);
  if (cfg.train < 0 || cfg.valid < 0 || cfg.test < 0 || cfg.train + cfg.valid + cfg.test > 1.0 + 1e-12) {
    throw std::invalid_argument("link split ratios must be nonnegative and sum to at most 1");
  }
  if (cfg.neg_train < 0 || cfg.neg_valid < 0 || cfg.neg_test < 0) {
    throw std::invalid_argument("negative counts must be nonnegative");
  }
  std::vector<Edge> edges;
  for (const Edge& e : g.edges()) {
    if (e.rel == rel) edges.push_back(e);
  }
  if (edges.size() < 10) {
    throw std::invalid_argument("relation \"" + g.rel_name(rel) + "\" has " + std::to_string(edges.size()) +
                                " edges; link prediction needs at least 10");
  }
  Rng rng(seed);
  std::shuffle(edges.begin(), edges.end(), rng);
  const auto n = static_cast<double>(edges.size());
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train * n));
  const auto n_valid = static_cast<std::size_t>(std::llround(cfg.valid * n));
  const auto n_test = std::min(static_cast<std::size_t>(std::llround(cfg.test * n)), edges.size() - n_train - n_valid);

  auto corrupt = [&](const Edge& e) {
    std::bernoulli_distribution coin(0.5);
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const bool flip_dst = coin(rng);
      const NodeId keep = flip_dst ? e.src : e.dst;
      const NodeId old = flip_dst ? e.dst : e.src;
      const auto& pool = g.nodes_of_type(g.type_of(old));
      const NodeId cand = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      if (cand == keep || g.has_edge(keep, cand, rel)) continue;
      return flip_dst ? LinkExample{keep, cand, 0.0} : LinkExample{cand, keep, 0.0};
    }
    throw std::runtime_error("make_link_split: could not find a negative pair for relation " + g.rel_name(rel));
  };
  auto fill = [&](std::vector<LinkExample>& out, std::size_t lo, std::size_t count, int negs) {
    for (std::size_t i = lo; i < lo + count; ++i) out.push_back({edges[i].src, edges[i].dst, 1.0});
    for (std::size_t i = lo; i < lo + count; ++i) {
      for (int k = 0; k < negs; ++k) out.push_back(corrupt(edges[i]));
    }
  };
  LinkSplit s;
  s.rel = rel;
  fill(s.train, 0, n_train, cfg.neg_train);
  fill(s.valid, n_train, n_valid, cfg.neg_valid);
  fill(s.test, n_train + n_valid, n_test, cfg.neg_test);
  return s;
}

// ---------------------------------------------------------------- label split

std::vector<std::pair<std::string, std::vector<std::string>>> read_label_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::pair<std::string, std::vector<std::string>>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.emplace_back(j.at("id").get<std::string>(), j.at("labels").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw GraphError(path.string() + " line " + std::to_string(lineno) + ": " + e.what(), lineno);
    }
  }
  return out;
}

LabelSplit make_label_split(const TahGraph& g,
                            const std::vector<std::pair<std::string, std::vector<std::string>>>& labels,
                            const LabelSplitConfig& cfg, std::uint64_t seed) {
  if (cfg.train <= 0 || cfg.valid < 0 || cfg.train + cfg.valid >= 1.0) {
    throw std::invalid_argument("label split ratios must leave a nonempty test set");
  }
  std::set<std::string> names;
  for (const auto& [id, ls] : labels) names.insert(ls.begin(), ls.end());
  LabelSplit s;
  s.classes.assign(names.begin(), names.end());
  std::optional<TypeId> type;
  for (const auto& [id, ls] : labels) {
    const auto node = g.find(id);
    if (!node) throw std::invalid_argument("label file references unknown node \"" + id + "\"");
    if (type && *type != g.type_of(*node)) throw std::invalid_argument("labeled nodes must share one type");
    type = g.type_of(*node);
    if (ls.empty()) throw std::invalid_argument("node \"" + id + "\" has an empty label set");
    std::vector<int> ids;
    for (const auto& l : ls) {
      ids.push_back(static_cast<int>(std::lower_bound(s.classes.begin(), s.classes.end(), l) - s.classes.begin()));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    s.multi_label = s.multi_label || ids.size() > 1;
    s.nodes.push_back(*node);
    s.labels.push_back(std::move(ids));
  }
  if (s.nodes.size() < 3) throw std::invalid_argument("need at least 3 labeled nodes");
  std::vector<std::size_t> order(s.nodes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(order.size());
  const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.train * n)));
  const auto n_valid = static_cast<std::size_t>(std::llround(cfg.valid * n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_train ? s.train : i < n_train + n_valid ? s.valid : s.test).push_back(order[i]);
  }
  return s;
}

// ---------------------------------------------------------------- split serialization

nlohmann::json link_split_to_json(const LinkSplit& s, const TahGraph& g) {
  auto part = [&](const std::vector<LinkExample>& xs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : xs) arr.push_back({g.external_id(e.src), g.external_id(e.dst), e.label > 0.5 ? 1 : 0});
    return arr;
  };
  return {{"relation", g.rel_name(s.rel)}, {"train", part(s.train)}, {"valid", part(s.valid)}, {"test", part(s.test)}};
}

LinkSplit link_split_from_json(const nlohmann::json& j, const TahGraph& g) {
  LinkSplit s;
  const auto rel = g.rel_id(j.at("relation").get<std::string>());
  if (!rel) throw std::invalid_argument("link split references an unknown relation");
  s.rel = *rel;
  auto node = [&](const nlohmann::json& x) {
    const auto id = g.find(x.get<std::string>());
    if (!id) throw std::invalid_argument("link split references unknown node " + x.dump());
    return *id;
  };
  for (auto [name, out] : {std::pair{"train", &s.train}, {"valid", &s.valid}, {"test", &s.test}}) {
    for (const auto& e : j.at(name)) out->push_back({node(e.at(0)), node(e.at(1)), e.at(2).get<double>()});
  }
  return s;
}

nlohmann::json label_split_to_json(const LabelSplit& s, const TahGraph& g) {
  auto part = [&](const std::vector<std::size_t>& idx) {
    nlohmann::json arr = nlohmann::json::array();
    for (std::size_t i : idx) {
      nlohmann::json ls = nlohmann::json::array();
      for (int c : s.labels[i]) ls.push_back(s.classes[static_cast<std::size_t>(c)]);
      arr.push_back({{"id", g.external_id(s.nodes[i])}, {"labels", ls}});
    }
    return arr;
  };
  return {{"classes", s.classes}, {"train", part(s.train)}, {"valid", part(s.valid)}, {"test", part(s.test)}};
}

LabelSplit label_split_from_json(const nlohmann::json& j, const TahGraph& g) {
  LabelSplit s;
  s.classes = j.at("classes").get<std::vector<std::string>>();
  for (auto [name, out] : {std::pair{"train", &s.train}, {"valid", &s.valid}, {"test", &s.test}}) {
    for (const auto& e : j.at(name)) {
      const auto id = g.find(e.at("id").get<std::string>());
      if (!id) throw std::invalid_argument("label split references unknown node");
      std::vector<int> ls;
      for (const auto& l : e.at("labels")) {
        auto it = std::find(s.classes.begin(), s.classes.end(), l.get<std::string>());
        if (it == s.classes.end()) throw std::invalid_argument("label split references an unknown class");
        ls.push_back(static_cast<int>(it - s.classes.begin()));
      }
      s.multi_label = s.multi_label || ls.size() > 1;
      out->push_back(s.nodes.size());
      s.nodes.push_back(*id);
      s.labels.push_back(std::move(ls));
    }
  }
  return s;
}

// ---------------------------------------------------------------- headers

std::string to_string(HeaderKind k) { return k == HeaderKind::kMlp ? "mlp" : "rgcn"; }

HeaderKind parse_header_kind(const std::string& name) {
  if (name == "mlp" || name == "MLP") return HeaderKind::kMlp;
  if (name == "rgcn" || name == "RGCN") return HeaderKind::kRgcn;
  throw std::invalid_argument("unknown header kind \"" + name + "\"");
}

void to_json(nlohmann::json& j, const HeaderConfig& c) {
  j = nlohmann::json{{"header", to_string(c.kind)}, {"hidden", c.hidden},         {"lr", c.lr},
                     {"weight_decay", c.weight_decay}, {"max_steps", c.max_steps}, {"eval_every", c.eval_every},
                     {"patience", c.patience},         {"standardize", c.standardize}};
}

void from_json(const nlohmann::json& j, HeaderConfig& c) {
  static const std::set<std::string> known = {"header",    "hidden",     "lr",       "weight_decay",
                                              "max_steps", "eval_every", "patience", "standardize"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("header config: unknown key \"" + key + "\"");
  }
  if (j.contains("header")) c.kind = parse_header_kind(j.at("header").get<std::string>());
  c.hidden = j.value("hidden", c.hidden);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.eval_every = j.value("eval_every", c.eval_every);
  c.patience = j.value("patience", c.patience);
  c.standardize = j.value("standardize", c.standardize);
  if (c.hidden < 1 || c.lr < 0 || c.max_steps < 1 || c.eval_every < 1 || c.patience < 1) {
    throw std::invalid_argument("header config: values out of range");
  }
}

Header Header::init(HeaderKind kind, bool pair, int d_in, int hidden, int out_dim, int num_relations,
                    std::uint64_t seed) {
  Rng rng(seed);
  auto glorot = [&rng](int r, int c) {
    const double limit = std::sqrt(6.0 / static_cast<double>(r + c));
    std::uniform_real_distribution<double> unif(-limit, limit);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = unif(rng);
    return Tensor::parameter(std::move(m));
  };
  Header h;
  h.kind = kind;
  h.pair = pair;
  int width = d_in;
  if (kind == HeaderKind::kRgcn) {
    for (int l = 0; l < 2; ++l) {
      h.rel_self.push_back(glorot(width, hidden));
      std::vector<Tensor> rels;
      for (int r = 0; r < num_relations; ++r) rels.push_back(glorot(width, hidden));
      h.rel_w.push_back(std::move(rels));
      width = hidden;
    }
  }
  const int mlp_in = pair ? 2 * width : width;
  h.w1 = glorot(mlp_in, hidden);
  h.b1 = Tensor::parameter(Matrix::Zero(1, hidden));
  h.w2 = glorot(hidden, out_dim);
  h.b2 = Tensor::parameter(Matrix::Zero(1, out_dim));
  return h;
}

std::vector<ParamRef> Header::parameters() const {
  std::vector<ParamRef> out;
  for (std::size_t l = 0; l < rel_self.size(); ++l) {
    out.push_back({"rgcn" + std::to_string(l) + ".self", rel_self[l], 0, true});
    for (std::size_t r = 0; r < rel_w[l].size(); ++r) {
      out.push_back({"rgcn" + std::to_string(l) + ".rel" + std::to_string(r), rel_w[l][r], 0, true});
    }
  }
  out.push_back({"mlp.w1", w1, 0, true});
  out.push_back({"mlp.b1", b1, 0, false});
  out.push_back({"mlp.w2", w2, 0, true});
  out.push_back({"mlp.b2", b2, 0, false});
  return out;
}

Tensor header_node_repr(const Header& h, const RelationalAdjacency* adj, const Tensor& x) {
  if (h.kind == HeaderKind::kMlp) return x;
  if (!adj) throw std::invalid_argument("RGCN header needs the graph adjacency");
  Tensor out = x;
  for (std::size_t l = 0; l < h.rel_self.size(); ++l) out = nn::relu(relational_layer(*adj, out, h.rel_self[l], h.rel_w[l]));
  return out;
}

namespace {

Tensor mlp_head(const Header& h, const Tensor& in) {
  Tensor z = nn::relu(nn::add_row(nn::matmul(in, h.w1), h.b1));
  return nn::add_row(nn::matmul(z, h.w2), h.b2);
}

}  // namespace

Tensor header_pair_logits(const Header& h, const Tensor& reprs, const std::vector<std::pair<NodeId, NodeId>>& pairs) {
  if (!h.pair) throw std::invalid_argument("header was built for classification");
  std::vector<nn::Index> a, b;
  for (auto [s, d] : pairs) {
    a.push_back(s);
    b.push_back(d);
  }
  return mlp_head(h, nn::concat_cols({nn::gather_rows(reprs, a), nn::gather_rows(reprs, b)}));
}

Tensor header_class_logits(const Header& h, const Tensor& reprs, const std::vector<NodeId>& nodes) {
  if (h.pair) throw std::invalid_argument("header was built for the pair task");
  std::vector<nn::Index> rows(nodes.begin(), nodes.end());
  return mlp_head(h, nn::gather_rows(reprs, rows));
}

Matrix header_forward(const Header& h, const EmbeddingTable& emb, const TahGraph& g,
                      const std::vector<std::pair<NodeId, NodeId>>& pairs) {
  const RelationalAdjacency adj = RelationalAdjacency::from_graph(g);
  const Tensor reprs = header_node_repr(h, &adj, Tensor::constant(emb.values));
  return nn::sigmoid(header_pair_logits(h, reprs, pairs)).value();
}

Matrix header_forward(const Header& h, const EmbeddingTable& emb, const TahGraph& g, const std::vector<NodeId>& nodes) {
  const RelationalAdjacency adj = RelationalAdjacency::from_graph(g);
  const Tensor reprs = header_node_repr(h, &adj, Tensor::constant(emb.values));
  return header_class_logits(h, reprs, nodes).value();
}

// ---------------------------------------------------------------- reports

void to_json(nlohmann::json& j, const MetricReport& r) {
  nlohmann::ordered_json o;
  o["task"] = r.task;
  o["header"] = r.header;
  if (r.seed) {
    o["seed"] = *r.seed;
  } else {
    o["seed"] = "mean";
  }
  o["metrics"] = r.metrics;
  o["failed"] = r.failed;
  o["embedding_checksum"] = r.embedding_checksum;
  j = nlohmann::json::parse(o.dump());
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
  MetricReport out;
  out.task = reports.front().task;
  out.header = reports.front().header;
  out.embedding_checksum = reports.front().embedding_checksum;
  std::size_t ok = 0;
  for (const auto& r : reports) {
    if (r.failed) {
      out.failed = true;
      continue;
    }
    ++ok;
    for (const auto& [k, v] : r.metrics) out.metrics[k] += v;
  }
  for (auto& [k, v] : out.metrics) v /= static_cast<double>(ok);
  return out;
}

namespace {

Matrix standardized(const Matrix& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Matrix c = x.rowwise() - mean;
  Eigen::RowVectorXd sd = (c.array().square().colwise().sum() / std::max<double>(1.0, x.rows())).sqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd[j] < 1e-12) sd[j] = 1.0;
  }
  return c.array().rowwise() / sd.array();
}

// Full-batch AdamW with periodic validation, early stopping on `score`
// (higher is better) and restoration of the best parameters. Returns false on
// a non-finite training loss.
// Model selection on (validation metric, -validation loss), compared lexicographically.
using Score = std::pair<double, double>;

bool fit(const std::vector<ParamRef>& params, const HeaderConfig& cfg, const std::function<Tensor()>& train_loss,
         const std::function<Score()>& score) {
  AdamW opt(params, AdamWOptions{0.9, 0.999, 1e-8, cfg.weight_decay});
  Score best{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  std::vector<Matrix> snapshot;
  int bad = 0;
  for (int step = 0; step < cfg.max_steps; ++step) {
    Tensor loss = train_loss();
    if (!std::isfinite(loss.item())) return false;
    nn::backward(loss);
    opt.step({cfg.lr});
    opt.zero_grad();
    if ((step + 1) % cfg.eval_every != 0 && step + 1 != cfg.max_steps) continue;
    const Score s = score();
    if (s > best) {
      best = s;
      snapshot.clear();
      for (const auto& p : params) snapshot.push_back(p.tensor.value());
      bad = 0;
    } else if (++bad >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < snapshot.size(); ++i) {
    Tensor t = params[i].tensor;
    t.mutable_value() = snapshot[i];
  }
  return true;
}

void check_frozen(const EmbeddingTable& emb, std::uint64_t before) {
  if (emb.checksum() != before) throw std::logic_error("embedding table changed during downstream training");
}

}  // namespace

MetricReport run_link_prediction(const EmbeddingTable& emb, const TahGraph& g, const LinkSplit& split,
                                 const HeaderConfig& cfg, std::uint64_t seed) {
  const std::uint64_t before = emb.checksum();
  if (static_cast<std::size_t>(emb.values.rows()) != g.num_nodes()) {
    throw std::invalid_argument("embedding table rows differ from the graph's node count");
  }
  if (split.train.empty() || split.valid.empty() || split.test.empty()) throw std::invalid_argument("empty link split");
  MetricReport rep;
  rep.task = "link";
  rep.header = to_string(cfg.kind);
  rep.seed = seed;

  const Tensor x = Tensor::constant(cfg.standardize ? standardized(emb.values) : emb.values);
  const RelationalAdjacency adj = RelationalAdjacency::from_graph_without(g, split.rel, split.held_out_edges());
  const Header h = Header::init(cfg.kind, true, static_cast<int>(emb.values.cols()), cfg.hidden, 1,
                                static_cast<int>(g.num_relations()), derive_seed(seed, {kHeaderTag}));

  auto unpack = [](const std::vector<LinkExample>& xs) {
    std::vector<std::pair<NodeId, NodeId>> pairs;
    Matrix labels(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      pairs.emplace_back(xs[i].src, xs[i].dst);
      labels(static_cast<Eigen::Index>(i), 0) = xs[i].label;
    }
    return std::pair{pairs, labels};
  };
  const auto [train_pairs, train_labels] = unpack(split.train);
  const auto [valid_pairs, valid_labels] = unpack(split.valid);
  const auto [test_pairs, test_labels] = unpack(split.test);

  auto predict = [&](const std::vector<std::pair<NodeId, NodeId>>& pairs) {
    return nn::sigmoid(header_pair_logits(h, header_node_repr(h, &adj, x), pairs)).value();
  };
  auto as_span = [](const Matrix& m) { return std::span<const double>(m.data(), static_cast<std::size_t>(m.size())); };

  const bool ok = fit(
      h.parameters(), cfg,
      [&] { return nn::bce_with_logits_mean(header_pair_logits(h, header_node_repr(h, &adj, x), train_pairs), train_labels); },
      [&] {
        const Tensor z = header_pair_logits(h, header_node_repr(h, &adj, x), valid_pairs);
        const Matrix p = nn::sigmoid(z).value();
        return Score{-rmse(as_span(p), as_span(valid_labels)), -nn::bce_with_logits_mean(z, valid_labels).item()};
      });
  check_frozen(emb, before);
  rep.embedding_checksum = before;
  if (!ok) {
    rep.failed = true;
    return rep;
  }
  const Matrix p = predict(test_pairs);
  if (!p.allFinite()) {
    rep.failed = true;
    return rep;
  }
  rep.metrics["rmse"] = rmse(as_span(p), as_span(test_labels));
  rep.metrics["mae"] = mae(as_span(p), as_span(test_labels));
  return rep;
}

MetricReport run_node_classification(const EmbeddingTable& emb, const TahGraph& g, const LabelSplit& split,
                                     const HeaderConfig& cfg, std::uint64_t seed) {
  const std::uint64_t before = emb.checksum();
  if (static_cast<std::size_t>(emb.values.rows()) != g.num_nodes()) {
    throw std::invalid_argument("embedding table rows differ from the graph's node count");
  }
  if (split.train.empty() || split.test.empty()) throw std::invalid_argument("empty label split");
  const int n_classes = static_cast<int>(split.classes.size());
  {
    std::vector<char> seen(static_cast<std::size_t>(n_classes), 0);
    for (std::size_t i : split.train) {
      for (int c : split.labels[i]) seen[static_cast<std::size_t>(c)] = 1;
    }
    for (int c = 0; c < n_classes; ++c) {
      if (!seen[static_cast<std::size_t>(c)]) log_warning("class \"" + split.classes[c] + "\" has no training node");
    }
  }
  MetricReport rep;
  rep.task = "classification";
  rep.header = to_string(cfg.kind);
  rep.seed = seed;

  const Tensor x = Tensor::constant(cfg.standardize ? standardized(emb.values) : emb.values);
  const RelationalAdjacency adj = RelationalAdjacency::from_graph(g);
  const Header h = Header::init(cfg.kind, false, static_cast<int>(emb.values.cols()), cfg.hidden, n_classes,
                                static_cast<int>(g.num_relations()), derive_seed(seed, {kHeaderTag}));

  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<NodeId> nodes;
    std::vector<std::vector<int>> truth;
    for (std::size_t i : idx) {
      nodes.push_back(split.nodes[i]);
      truth.push_back(split.labels[i]);
    }
    return std::pair{nodes, truth};
  };
  const auto [train_nodes, train_truth] = gather(split.train);
  const auto [valid_nodes, valid_truth] = gather(split.valid.empty() ? split.train : split.valid);
  const auto [test_nodes, test_truth] = gather(split.test);

  Matrix multi_hot = Matrix::Zero(static_cast<Eigen::Index>(train_nodes.size()), n_classes);
  std::vector<nn::Index> single;
  for (std::size_t i = 0; i < train_truth.size(); ++i) {
    for (int c : train_truth[i]) multi_hot(static_cast<Eigen::Index>(i), c) = 1.0;
    single.push_back(train_truth[i].front());
  }
  Matrix valid_multi_hot = Matrix::Zero(static_cast<Eigen::Index>(valid_nodes.size()), n_classes);
  std::vector<nn::Index> valid_single;
  for (std::size_t i = 0; i < valid_truth.size(); ++i) {
    for (int c : valid_truth[i]) valid_multi_hot(static_cast<Eigen::Index>(i), c) = 1.0;
    valid_single.push_back(valid_truth[i].front());
  }
  auto logits_for = [&](const std::vector<NodeId>& nodes) {
    return header_class_logits(h, header_node_repr(h, &adj, x), nodes);
  };
  auto probabilities = [&](const std::vector<NodeId>& nodes) {
    Tensor z = logits_for(nodes);
    return (split.multi_label ? nn::sigmoid(z) : nn::softmax_rows(z)).value();
  };

  const bool ok = fit(
      h.parameters(), cfg,
      [&] {
        Tensor z = logits_for(train_nodes);
        return split.multi_label ? nn::bce_with_logits_mean(z, multi_hot) : nn::cross_entropy(z, single);
      },
      [&] {
        const Tensor z = logits_for(valid_nodes);
        RankedPrediction rp{rank_rows(z.value()), valid_truth, n_classes};
        const double loss = split.multi_label ? nn::bce_with_logits_mean(z, valid_multi_hot).item()
                                              : nn::cross_entropy(z, valid_single).item();
        return Score{micro_pr_at_k(rp, 1).precision, -loss};
      });
  check_frozen(emb, before);
  rep.embedding_checksum = before;
  if (!ok) {
    rep.failed = true;
    return rep;
  }
  const Matrix probs = probabilities(test_nodes);
  if (!probs.allFinite()) {
    rep.failed = true;
    return rep;
  }
  RankedPrediction rp{rank_rows(probs), test_truth, n_classes};
  for (int k : {1, 3, 5}) {
    const std::string at = "@" + std::to_string(k);
    const auto micro = micro_pr_at_k(rp, k);
    const auto macro = macro_pr_at_k(rp, k);
    rep.metrics["micro_precision" + at] = micro.precision;
    rep.metrics["micro_recall" + at] = micro.recall;
    rep.metrics["macro_precision" + at] = macro.precision;
    rep.metrics["macro_recall" + at] = macro.recall;
    rep.metrics["ndcg" + at] = ndcg_at_k(rp, k);
  }
  Matrix truth = Matrix::Zero(probs.rows(), probs.cols());
  for (std::size_t i = 0; i < test_truth.size(); ++i) {
    for (int c : test_truth[i]) truth(static_cast<Eigen::Index>(i), c) = 1.0;
  }
  const std::span<const double> ps(probs.data(), static_cast<std::size_t>(probs.size()));
  const std::span<const double> ts(truth.data(), static_cast<std::size_t>(truth.size()));
  rep.metrics["rmse"] = rmse(ps, ts);
  rep.metrics["mae"] = mae(ps, ts);
  return rep;
}

}  // namespace thlm
