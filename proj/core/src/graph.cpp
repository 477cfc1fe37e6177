#include "thlm/graph.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "thlm/log.hpp"

namespace thlm {

namespace {

template <typename Names>
std::int32_t intern(Names& names, std::string_view name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it != names.end()) return static_cast<std::int32_t>(it - names.begin());
  names.emplace_back(name);
  return static_cast<std::int32_t>(names.size() - 1);
}

template <typename Names>
std::optional<std::int32_t> lookup(const Names& names, std::string_view name) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::int32_t>(it - names.begin());
}

std::string require_string(const nlohmann::json& rec, const char* key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end() || !it->is_string()) {
    throw GraphError("line " + std::to_string(line) + ": missing or non-string field \"" +
                         key + "\"",
                     line);
  }
  return it->get<std::string>();
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

// ---------------------------------------------------------------- builder

TypeId TahGraphBuilder::declare_type(std::string_view name) { return intern(type_names_, name); }

RelId TahGraphBuilder::declare_relation(std::string_view name) {
  return intern(rel_names_, name);
}

NodeId TahGraphBuilder::add_node(std::string external_id, std::string_view type_name,
                                 std::string text) {
  const auto id = static_cast<NodeId>(types_.size());
  auto [it, inserted] = id_lookup_.emplace(external_id, id);
  if (!inserted) throw GraphError("duplicate node id \"" + external_id + "\"");
  external_ids_.push_back(std::move(external_id));
  types_.push_back(declare_type(type_name));
  texts_.push_back(std::move(text));
  return id;
}

void TahGraphBuilder::add_edge(std::string_view src_id, std::string_view dst_id,
                               std::string_view rel_name) {
  auto find = [&](std::string_view ext) {
    auto it = id_lookup_.find(std::string(ext));
    if (it == id_lookup_.end()) throw GraphError("edge references unknown node \"" +
                                                 std::string(ext) + "\"");
    return it->second;
  };
  add_edge(find(src_id), find(dst_id), rel_name);
}

void TahGraphBuilder::add_edge(NodeId src, NodeId dst, std::string_view rel_name) {
  const auto n = static_cast<NodeId>(types_.size());
  if (src < 0 || src >= n || dst < 0 || dst >= n) {
    throw GraphError("edge endpoint out of range");
  }
  if (src == dst) {
    throw GraphError("self-loop on node \"" + external_ids_[src] + "\"");
  }
  edges_.push_back(Edge{src, dst, declare_relation(rel_name)});
}

TahGraph TahGraphBuilder::build(const std::vector<std::string>& rich_text_types) && {
  TahGraph g;
  const std::size_t n = types_.size();

  g.type_names_ = std::move(type_names_);
  g.rel_names_ = std::move(rel_names_);
  g.external_ids_ = std::move(external_ids_);
  g.node_type_ = std::move(types_);
  g.texts_ = std::move(texts_);
  g.id_lookup_ = std::move(id_lookup_);

  g.rich_mask_.assign(g.type_names_.size(), false);
  for (const auto& name : rich_text_types) {
    auto t = lookup(g.type_names_, name);
    if (!t) throw GraphError("rich-text type \"" + name + "\" does not occur in the graph");
    if (!g.rich_mask_[*t]) g.rich_types_.push_back(*t);
    g.rich_mask_[*t] = true;
  }
  std::sort(g.rich_types_.begin(), g.rich_types_.end());

  g.by_type_.assign(g.type_names_.size(), {});
  for (std::size_t u = 0; u < n; ++u) g.by_type_[g.node_type_[u]].push_back(static_cast<NodeId>(u));

  // Deduplicate parallel edges, keeping the first-seen orientation.
  struct Key {
    NodeId lo, hi;
    RelId rel;
    auto operator<=>(const Key&) const = default;
  };
  std::vector<std::pair<Key, std::size_t>> keyed;
  keyed.reserve(edges_.size());
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    keyed.push_back({Key{std::min(e.src, e.dst), std::max(e.src, e.dst), e.rel}, i});
  }
  std::stable_sort(keyed.begin(), keyed.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    if (i == 0 || !(keyed[i].first == keyed[i - 1].first)) keep.push_back(keyed[i].second);
  }
  std::sort(keep.begin(), keep.end());
  g.edges_.reserve(keep.size());
  for (std::size_t i : keep) g.edges_.push_back(edges_[i]);

  const std::size_t num_rel = g.rel_names_.size();
  g.offsets_.assign(num_rel, std::vector<std::size_t>(n + 1, 0));
  g.targets_.assign(num_rel, {});
  for (const Edge& e : g.edges_) {
    ++g.offsets_[e.rel][e.src + 1];
    ++g.offsets_[e.rel][e.dst + 1];
  }
  for (std::size_t r = 0; r < num_rel; ++r) {
    auto& off = g.offsets_[r];
    std::partial_sum(off.begin(), off.end(), off.begin());
    g.targets_[r].resize(off[n]);
  }
  std::vector<std::vector<std::size_t>> cursor(num_rel);
  for (std::size_t r = 0; r < num_rel; ++r) cursor[r].assign(g.offsets_[r].begin(), g.offsets_[r].end() - 1);
  for (const Edge& e : g.edges_) {
    g.targets_[e.rel][cursor[e.rel][e.src]++] = e.dst;
    g.targets_[e.rel][cursor[e.rel][e.dst]++] = e.src;
  }
  for (std::size_t r = 0; r < num_rel; ++r) {
    for (std::size_t u = 0; u < n; ++u) {
      auto first = g.targets_[r].begin() + static_cast<std::ptrdiff_t>(g.offsets_[r][u]);
      auto last = g.targets_[r].begin() + static_cast<std::ptrdiff_t>(g.offsets_[r][u + 1]);
      std::sort(first, last);
    }
  }
  return g;
}

// ---------------------------------------------------------------- accessors

void TahGraph::check_node(NodeId u) const {
  if (u < 0 || static_cast<std::size_t>(u) >= node_type_.size()) {
    throw std::out_of_range("invalid node id " + std::to_string(u));
  }
}

void TahGraph::check_relation(RelId r) const {
  if (r < 0 || static_cast<std::size_t>(r) >= rel_names_.size()) {
    throw std::out_of_range("invalid relation id " + std::to_string(r));
  }
}

TypeId TahGraph::type_of(NodeId u) const {
  check_node(u);
  return node_type_[u];
}

const std::string& TahGraph::text(NodeId u) const {
  check_node(u);
  return texts_[u];
}

const std::string& TahGraph::external_id(NodeId u) const {
  check_node(u);
  return external_ids_[u];
}

std::optional<NodeId> TahGraph::find(std::string_view external_id) const {
  auto it = id_lookup_.find(std::string(external_id));
  if (it == id_lookup_.end()) return std::nullopt;
  return it->second;
}

const std::string& TahGraph::type_name(TypeId t) const { return type_names_.at(t); }
const std::string& TahGraph::rel_name(RelId r) const { return rel_names_.at(r); }
std::optional<TypeId> TahGraph::type_id(std::string_view name) const { return lookup(type_names_, name); }
std::optional<RelId> TahGraph::rel_id(std::string_view name) const { return lookup(rel_names_, name); }

bool TahGraph::is_rich_type(TypeId t) const {
  return t >= 0 && static_cast<std::size_t>(t) < rich_mask_.size() && rich_mask_[t];
}

std::span<const NodeId> TahGraph::neighbors(NodeId u, RelId rel) const {
  check_node(u);
  check_relation(rel);
  const auto& off = offsets_[rel];
  return {targets_[rel].data() + off[u], off[u + 1] - off[u]};
}

std::vector<NodeId> TahGraph::neighbors(NodeId u) const {
  check_node(u);
  std::vector<NodeId> out;
  for (std::size_t r = 0; r < rel_names_.size(); ++r) {
    auto nb = neighbors(u, static_cast<RelId>(r));
    out.insert(out.end(), nb.begin(), nb.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t TahGraph::degree(NodeId u) const {
  check_node(u);
  std::size_t d = 0;
  for (std::size_t r = 0; r < rel_names_.size(); ++r) d += offsets_[r][u + 1] - offsets_[r][u];
  return d;
}

bool TahGraph::has_edge(NodeId a, NodeId b, RelId rel) const {
  auto nb = neighbors(a, rel);
  return std::binary_search(nb.begin(), nb.end(), b);
}

const std::vector<NodeId>& TahGraph::nodes_of_type(TypeId t) const { return by_type_.at(t); }

// ---------------------------------------------------------------- validation

ValidationReport validate(const TahGraph& g) {
  ValidationReport rep;
  rep.num_nodes = g.num_nodes();
  rep.num_edges = g.num_edges();
  for (std::size_t t = 0; t < g.num_types(); ++t) {
    rep.nodes_per_type[g.type_name(static_cast<TypeId>(t))] =
        g.nodes_of_type(static_cast<TypeId>(t)).size();
  }
  for (std::size_t r = 0; r < g.num_relations(); ++r) rep.edges_per_relation[g.rel_name(static_cast<RelId>(r))] = 0;
  for (const Edge& e : g.edges()) ++rep.edges_per_relation[g.rel_name(e.rel)];
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    const auto id = static_cast<NodeId>(u);
    if (blank(g.text(id))) ++rep.empty_text_nodes;
    if (g.degree(id) == 0) ++rep.isolated_nodes;
  }
  if (g.num_types() + g.num_relations() <= 2) {
    std::ostringstream msg;
    msg << "|U|+|R| <= 2 (" << g.num_types() << " node types, " << g.num_relations()
        << " relations): not a heterogeneous graph";
    rep.violations.push_back(msg.str());
  }
  if (g.num_nodes() == 0) rep.violations.emplace_back("graph has no nodes");
  return rep;
}

void to_json(nlohmann::json& j, const ValidationReport& r) {
  j = nlohmann::json{{"num_nodes", r.num_nodes},
                     {"num_edges", r.num_edges},
                     {"nodes_per_type", r.nodes_per_type},
                     {"edges_per_relation", r.edges_per_relation},
                     {"empty_text_nodes", r.empty_text_nodes},
                     {"isolated_nodes", r.isolated_nodes},
                     {"violations", r.violations},
                     {"ok", r.ok()}};
}

// ---------------------------------------------------------------- file I/O

namespace {

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw GraphError(path.filename().string() + " line " + std::to_string(lineno) +
                           ": malformed JSON (" + e.what() + ")",
                       lineno);
    }
    if (!rec.is_object()) {
      throw GraphError(path.filename().string() + " line " + std::to_string(lineno) +
                           ": expected a JSON object",
                       lineno);
    }
    try {
      fn(rec, lineno);
    } catch (const GraphError& e) {
      if (e.line() != 0) throw;
      throw GraphError(path.filename().string() + " line " + std::to_string(lineno) + ": " +
                           e.what(),
                       lineno);
    }
  }
}

}  // namespace

TahGraph load_graph(const std::filesystem::path& nodes_path,
                    const std::filesystem::path& edges_path,
                    const std::vector<std::string>& rich_text_types) {
  TahGraphBuilder builder;
  for_each_record(nodes_path, [&](const nlohmann::json& rec, std::size_t line) {
    builder.add_node(require_string(rec, "id", line), require_string(rec, "type", line),
                     require_string(rec, "text", line));
  });
  for_each_record(edges_path, [&](const nlohmann::json& rec, std::size_t line) {
    builder.add_edge(require_string(rec, "src", line), require_string(rec, "dst", line),
                     require_string(rec, "rel", line));
  });
  TahGraph g = std::move(builder).build(rich_text_types);
  for (const auto& v : validate(g).violations) log_warning("graph validation: " + v);
  return g;
}

void save_graph(const TahGraph& g, const std::filesystem::path& nodes_path,
                const std::filesystem::path& edges_path) {
  std::ofstream nodes(nodes_path, std::ios::binary);
  if (!nodes) throw GraphError("cannot write " + nodes_path.string());
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    const auto id = static_cast<NodeId>(u);
    nlohmann::ordered_json rec;
    rec["id"] = g.external_id(id);
    rec["type"] = g.type_name(g.type_of(id));
    rec["text"] = g.text(id);
    nodes << rec.dump() << '\n';
  }
  std::ofstream edges(edges_path, std::ios::binary);
  if (!edges) throw GraphError("cannot write " + edges_path.string());
  for (const Edge& e : g.edges()) {
    nlohmann::ordered_json rec;
    rec["src"] = g.external_id(e.src);
    rec["dst"] = g.external_id(e.dst);
    rec["rel"] = g.rel_name(e.rel);
    edges << rec.dump() << '\n';
  }
}

}  // namespace thlm
