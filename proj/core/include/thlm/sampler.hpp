#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "thlm/graph.hpp"
#include "thlm/rng.hpp"

namespace thlm {

// Node membership of the K-order context graph of an anchor.
struct ContextSet {
  NodeId anchor = 0;
  int order = 0;
  std::vector<NodeId> members;               // sorted, includes anchor
  std::vector<std::vector<NodeId>> per_hop;  // order + 1 entries; per_hop[h] = nodes first reached at hop h

  bool contains(NodeId v) const;
};

enum class NoiseDistribution { kUniform, kUnigram75 };

struct SamplerConfig {
  int order = 2;           // K
  int fanout = 3;          // k neighbors drawn per (frontier node, relation) per hop
  int negative_ratio = 5;  // negatives per positive
  NoiseDistribution noise = NoiseDistribution::kUniform;

  void check() const;
};

void to_json(nlohmann::json& j, const SamplerConfig& cfg);
void from_json(const nlohmann::json& j, SamplerConfig& cfg);
std::string to_string(NoiseDistribution d);
NoiseDistribution parse_noise_distribution(const std::string& name);

struct CgpSample {
  NodeId anchor = 0;
  std::vector<NodeId> positives;  // sampled context members, anchor excluded
  std::vector<NodeId> negatives;
  std::uint64_t seed = 0;

  bool skippable() const { return positives.empty(); }
  friend bool operator==(const CgpSample&, const CgpSample&) = default;
};

// BFS within K hops. Throws std::out_of_range for an invalid anchor.
ContextSet extract_context_exact(const TahGraph& g, NodeId u, int order);

// Frontier expansion drawing at most `fanout` neighbors uniformly without
// replacement per (frontier node, relation) per hop. Always a subset of the
// exact context.
ContextSet sample_context(const TahGraph& g, NodeId u, int order, int fanout, Rng& rng);

// Draws ratio * num_positives nodes without replacement from V minus the
// exact context. Returns every remaining node when too few remain.
std::vector<NodeId> sample_negatives(const TahGraph& g, const ContextSet& exact,
                                     std::size_t num_positives, int ratio, Rng& rng,
                                     NoiseDistribution noise = NoiseDistribution::kUniform);

CgpSample make_cgp_sample(const TahGraph& g, NodeId u, const SamplerConfig& cfg,
                          std::uint64_t seed);

}  // namespace thlm
