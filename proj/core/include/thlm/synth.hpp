#pragma once

// Planted-partition generator for small text-attributed heterogeneous graphs.
// Three node types ("paper" carries long text; "author" and "term" carry
// short names) and two relations ("writes": paper-author, "has_term":
// paper-term). Every node belongs to one of `communities` groups; papers draw
// part of their words from a community vocabulary and edges form mostly
// within a community.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "thlm/graph.hpp"

namespace thlm {

struct SynthConfig {
  int num_rich = 200;
  int num_a = 100;
  int num_b = 50;
  int communities = 4;
  double p_in = 0.08;
  double p_out = 0.005;
  int community_vocab = 40;    // words per community vocabulary
  int background_vocab = 300;  // shared words
  int name_vocab = 150;        // shared words for textless names
  int min_words = 20;
  int max_words = 40;
  double topic_fraction = 0.25;  // chance a paper word comes from its community vocabulary
  double empty_text_fraction = 0.0;
  std::uint64_t seed = 0;

  void check() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthGraph {
  TahGraph graph;
  std::vector<std::string> rich_types;                       // {"paper"}
  std::vector<int> community;                                // per node
  std::vector<std::pair<std::string, std::string>> labels;   // paper external id -> label name
  std::size_t planted_empty_texts = 0;
};

SynthGraph generate_synthetic_tahg(const SynthConfig& cfg);

// Writes nodes.jsonl, edges.jsonl, labels.jsonl and synth.json into dir.
void write_synthetic(const SynthGraph& s, const SynthConfig& cfg, const std::filesystem::path& dir);

}  // namespace thlm
