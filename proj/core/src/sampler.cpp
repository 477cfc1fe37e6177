#include "thlm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include <nlohmann/json.hpp>

namespace thlm {

bool ContextSet::contains(NodeId v) const {
  return std::binary_search(members.begin(), members.end(), v);
}

void SamplerConfig::check() const {
  if (order < 0) throw std::invalid_argument("sampler: order K must be >= 0");
  if (fanout < 1) throw std::invalid_argument("sampler: fanout k must be >= 1");
  if (negative_ratio < 1) throw std::invalid_argument("sampler: negative_ratio must be >= 1");
}

std::string to_string(NoiseDistribution d) {
  return d == NoiseDistribution::kUniform ? "uniform" : "unigram75";
}

NoiseDistribution parse_noise_distribution(const std::string& name) {
  if (name == "uniform") return NoiseDistribution::kUniform;
  if (name == "unigram75") return NoiseDistribution::kUnigram75;
  throw std::invalid_argument("unknown noise distribution \"" + name + "\"");
}

void to_json(nlohmann::json& j, const SamplerConfig& cfg) {
  j = nlohmann::json{{"K", cfg.order},
                     {"k", cfg.fanout},
                     {"negative_ratio", cfg.negative_ratio},
                     {"noise_distribution", to_string(cfg.noise)}};
}

void from_json(const nlohmann::json& j, SamplerConfig& cfg) {
  cfg.order = j.value("K", cfg.order);
  cfg.fanout = j.value("k", cfg.fanout);
  cfg.negative_ratio = j.value("negative_ratio", cfg.negative_ratio);
  if (j.contains("noise_distribution")) {
    cfg.noise = parse_noise_distribution(j.at("noise_distribution").get<std::string>());
  }
}

ContextSet extract_context_exact(const TahGraph& g, NodeId u, int order) {
  g.check_node(u);
  if (order < 0) throw std::invalid_argument("context order must be >= 0");
  ContextSet ctx;
  ctx.anchor = u;
  ctx.order = order;
  std::vector<bool> seen(g.num_nodes(), false);
  seen[u] = true;
  ctx.per_hop.push_back({u});
  for (int hop = 1; hop <= order; ++hop) {
    std::vector<NodeId> next;
    for (NodeId f : ctx.per_hop.back()) {
      for (std::size_t r = 0; r < g.num_relations(); ++r) {
        for (NodeId w : g.neighbors(f, static_cast<RelId>(r))) {
          if (!seen[w]) {
            seen[w] = true;
            next.push_back(w);
          }
        }
      }
    }
    std::sort(next.begin(), next.end());
    ctx.per_hop.push_back(std::move(next));
  }
  for (const auto& hop : ctx.per_hop) ctx.members.insert(ctx.members.end(), hop.begin(), hop.end());
  std::sort(ctx.members.begin(), ctx.members.end());
  return ctx;
}

ContextSet sample_context(const TahGraph& g, NodeId u, int order, int fanout, Rng& rng) {
  g.check_node(u);
  if (order < 1) throw std::invalid_argument("sample_context: K must be >= 1");
  if (fanout < 1) throw std::invalid_argument("sample_context: k must be >= 1");
  ContextSet ctx;
  ctx.anchor = u;
  ctx.order = order;
  std::unordered_set<NodeId> seen{u};
  ctx.per_hop.push_back({u});
  std::vector<NodeId> pool;
  for (int hop = 1; hop <= order; ++hop) {
    std::vector<NodeId> next;
    for (NodeId f : ctx.per_hop.back()) {
      for (std::size_t r = 0; r < g.num_relations(); ++r) {
        auto nb = g.neighbors(f, static_cast<RelId>(r));
        pool.assign(nb.begin(), nb.end());
        const std::size_t take = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(fanout));
        // Partial Fisher-Yates: the first `take` slots are a uniform draw.
        for (std::size_t i = 0; i < take && pool.size() > take; ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
          std::swap(pool[i], pool[pick(rng)]);
        }
        for (std::size_t i = 0; i < take; ++i) {
          if (seen.insert(pool[i]).second) next.push_back(pool[i]);
        }
      }
    }
    ctx.per_hop.push_back(std::move(next));
  }
  for (const auto& h : ctx.per_hop) ctx.members.insert(ctx.members.end(), h.begin(), h.end());
  std::sort(ctx.members.begin(), ctx.members.end());
  return ctx;
}

std::vector<NodeId> sample_negatives(const TahGraph& g, const ContextSet& exact,
                                     std::size_t num_positives, int ratio, Rng& rng,
                                     NoiseDistribution noise) {
  if (ratio < 1) throw std::invalid_argument("sample_negatives: ratio must be >= 1");
  const std::size_t n = g.num_nodes();
  const std::size_t available = n - exact.members.size();
  const std::size_t want = num_positives * static_cast<std::size_t>(ratio);
  if (want == 0 || available == 0) return {};

  if (want >= available) {
    std::vector<NodeId> all;
    all.reserve(available);
    for (std::size_t v = 0; v < n; ++v) {
      if (!exact.contains(static_cast<NodeId>(v))) all.push_back(static_cast<NodeId>(v));
    }
    return all;
  }

  std::vector<NodeId> out;
  out.reserve(want);
  if (noise == NoiseDistribution::kUniform) {
    if (want * 2 <= available) {
      // Sparse regime: rejection sampling.
      std::unordered_set<NodeId> chosen;
      std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(n - 1));
      while (out.size() < want) {
        NodeId v = pick(rng);
        if (exact.contains(v) || !chosen.insert(v).second) continue;
        out.push_back(v);
      }
    } else {
      std::vector<NodeId> rest;
      rest.reserve(available);
      for (std::size_t v = 0; v < n; ++v) {
        if (!exact.contains(static_cast<NodeId>(v))) rest.push_back(static_cast<NodeId>(v));
      }
      for (std::size_t i = 0; i < want; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
        std::swap(rest[i], rest[pick(rng)]);
      }
      out.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(want));
    }
    return out;
  }

  // Weighted without replacement (Efraimidis-Spirakis): key = log(u) / w,
  // keep the largest keys. Zero-degree nodes rank last.
  std::vector<std::pair<double, NodeId>> keyed;
  keyed.reserve(available);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t v = 0; v < n; ++v) {
    const auto id = static_cast<NodeId>(v);
    if (exact.contains(id)) continue;
    const double w = std::pow(static_cast<double>(g.degree(id)), 0.75);
    double r = unif(rng);
    while (r <= 0.0) r = unif(rng);
    const double key = w > 0.0 ? std::log(r) / w : -std::numeric_limits<double>::infinity();
    keyed.emplace_back(key, id);
  }
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(want), keyed.end(),
                    [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first : a.second < b.second;
                    });
  for (std::size_t i = 0; i < want; ++i) out.push_back(keyed[i].second);
  return out;
}

CgpSample make_cgp_sample(const TahGraph& g, NodeId u, const SamplerConfig& cfg,
                          std::uint64_t seed) {
  cfg.check();
  if (cfg.order < 1 || cfg.order > 4) {
    throw std::invalid_argument("make_cgp_sample: K must be in 1..4");
  }
  CgpSample sample;
  sample.anchor = u;
  sample.seed = seed;
  Rng rng(seed);
  const ContextSet exact = extract_context_exact(g, u, cfg.order);
  const ContextSet sampled = sample_context(g, u, cfg.order, cfg.fanout, rng);
  for (std::size_t h = 1; h < sampled.per_hop.size(); ++h) {
    sample.positives.insert(sample.positives.end(), sampled.per_hop[h].begin(),
                            sampled.per_hop[h].end());
  }
  if (sample.positives.empty()) return sample;
  sample.negatives =
      sample_negatives(g, exact, sample.positives.size(), cfg.negative_ratio, rng, cfg.noise);
  return sample;
}

}  // namespace thlm
