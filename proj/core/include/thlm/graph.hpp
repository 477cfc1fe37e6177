#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace thlm {

using NodeId = std::int32_t;
using TypeId = std::int32_t;
using RelId = std::int32_t;

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  RelId rel = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

// Malformed input files or inconsistent graph construction. line() is 1-based
// when the error comes from a file, 0 otherwise.
class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class TahGraph;

// Collects nodes and edges, then freezes them into an immutable TahGraph.
class TahGraphBuilder {
 public:
  NodeId add_node(std::string external_id, std::string_view type_name, std::string text);
  void add_edge(std::string_view src_id, std::string_view dst_id, std::string_view rel_name);
  void add_edge(NodeId src, NodeId dst, std::string_view rel_name);

  // Declares a node or relation type even if no instance uses it yet, fixing
  // its id. Returns the id.
  TypeId declare_type(std::string_view name);
  RelId declare_relation(std::string_view name);

  std::size_t num_nodes() const { return types_.size(); }

  TahGraph build(const std::vector<std::string>& rich_text_types) &&;

 private:
  friend class TahGraph;
  std::vector<std::string> external_ids_;
  std::vector<TypeId> types_;
  std::vector<std::string> texts_;
  std::vector<Edge> edges_;
  std::vector<std::string> type_names_;
  std::vector<std::string> rel_names_;
  std::unordered_map<std::string, NodeId> id_lookup_;
};

// Immutable text-attributed heterogeneous graph. Edges are undirected and
// deduplicated per (unordered pair, relation); adjacency is stored as one CSR
// block per relation with sorted neighbor lists. Safe for concurrent reads.
class TahGraph {
 public:
  TahGraph() = default;

  std::size_t num_nodes() const { return node_type_.size(); }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_types() const { return type_names_.size(); }
  std::size_t num_relations() const { return rel_names_.size(); }

  TypeId type_of(NodeId u) const;
  const std::string& text(NodeId u) const;
  const std::string& external_id(NodeId u) const;
  std::optional<NodeId> find(std::string_view external_id) const;

  const std::string& type_name(TypeId t) const;
  const std::string& rel_name(RelId r) const;
  std::optional<TypeId> type_id(std::string_view name) const;
  std::optional<RelId> rel_id(std::string_view name) const;

  bool is_rich_type(TypeId t) const;
  bool is_rich(NodeId u) const { return is_rich_type(type_of(u)); }
  const std::vector<TypeId>& rich_text_types() const { return rich_types_; }

  // Neighbors of u under one relation: sorted, deduplicated.
  std::span<const NodeId> neighbors(NodeId u, RelId rel) const;
  // Union over all relations: sorted, deduplicated.
  std::vector<NodeId> neighbors(NodeId u) const;
  // Sum of per-relation neighbor counts.
  std::size_t degree(NodeId u) const;

  const std::vector<Edge>& edges() const { return edges_; }
  bool has_edge(NodeId a, NodeId b, RelId rel) const;

  // Dense ids of every node with the given type, ascending.
  const std::vector<NodeId>& nodes_of_type(TypeId t) const;

  void check_node(NodeId u) const;
  void check_relation(RelId r) const;

 private:
  friend class TahGraphBuilder;

  std::vector<std::string> external_ids_;
  std::vector<TypeId> node_type_;
  std::vector<std::string> texts_;
  std::vector<Edge> edges_;
  std::vector<std::string> type_names_;
  std::vector<std::string> rel_names_;
  std::vector<TypeId> rich_types_;
  std::vector<bool> rich_mask_;
  std::unordered_map<std::string, NodeId> id_lookup_;
  std::vector<std::vector<NodeId>> by_type_;
  // adjacency_[rel] is CSR: offsets_[rel][u]..offsets_[rel][u+1] into targets_[rel].
  std::vector<std::vector<std::size_t>> offsets_;
  std::vector<std::vector<NodeId>> targets_;
};

struct ValidationReport {
  std::size_t num_nodes = 0;
  std::size_t num_edges = 0;
  std::map<std::string, std::size_t> nodes_per_type;
  std::map<std::string, std::size_t> edges_per_relation;
  std::size_t empty_text_nodes = 0;
  std::size_t isolated_nodes = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

ValidationReport validate(const TahGraph& g);
void to_json(nlohmann::json& j, const ValidationReport& report);

// Reads the JSON-lines node and edge files. Logs a warning when validation
// finds violations; throws GraphError on malformed input.
TahGraph load_graph(const std::filesystem::path& nodes_path,
                    const std::filesystem::path& edges_path,
                    const std::vector<std::string>& rich_text_types);

void save_graph(const TahGraph& g, const std::filesystem::path& nodes_path,
                const std::filesystem::path& edges_path);

}  // namespace thlm
