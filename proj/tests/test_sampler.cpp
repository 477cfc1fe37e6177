#include <map>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "testkit.hpp"
#include "thlm/sampler.hpp"
#include "thlm/synth.hpp"

using namespace thlm;

TEST(Context, PathByHand) {
  const TahGraph g = testkit::path_graph(4);
  const ContextSet c = extract_context_exact(g, 0, 2);
  EXPECT_EQ(c.members, (std::vector<NodeId>{0, 1, 2}));
  ASSERT_EQ(c.per_hop.size(), 3u);
  EXPECT_EQ(c.per_hop[0], std::vector<NodeId>{0});
  EXPECT_EQ(c.per_hop[1], std::vector<NodeId>{1});
  EXPECT_EQ(c.per_hop[2], std::vector<NodeId>{2});
}

TEST(Context, OrderZeroAndOne) {
  const TahGraph g = testkit::random_graph(30, 0.1, 1);
  for (NodeId u = 0; u < 30; ++u) {
    EXPECT_EQ(extract_context_exact(g, u, 0).members, std::vector<NodeId>{u});
    auto expected = g.neighbors(u);
    expected.push_back(u);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(extract_context_exact(g, u, 1).members, expected);
  }
  EXPECT_THROW(extract_context_exact(g, 30, 1), std::out_of_range);
}

TEST(Context, MatchesMatrixPowerOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TahGraph g = testkit::random_graph(60, 0.02, seed);
    const auto hop = testkit::reach_oracle(g, 4);
    for (int K = 0; K <= 4; ++K) {
      for (NodeId u = 0; u < 60; ++u) {
        const ContextSet c = extract_context_exact(g, u, K);
        std::vector<NodeId> expected;
        for (NodeId v = 0; v < 60; ++v) {
          if (hop[u][v] >= 0 && hop[u][v] <= K) expected.push_back(v);
        }
        ASSERT_EQ(c.members, expected);
        ASSERT_EQ(c.per_hop.size(), static_cast<std::size_t>(K) + 1);
        for (std::size_t h = 0; h < c.per_hop.size(); ++h) {
          for (NodeId v : c.per_hop[h]) EXPECT_EQ(hop[u][v], static_cast<int>(h));
        }
      }
    }
  }
}

TEST(Context, MonotoneInOrder) {
  const TahGraph g = testkit::random_graph(50, 0.03, 9);
  for (NodeId u = 0; u < 50; ++u) {
    for (int K = 1; K <= 4; ++K) {
      const auto small = extract_context_exact(g, u, K - 1).members;
      const auto big = extract_context_exact(g, u, K).members;
      EXPECT_TRUE(std::includes(big.begin(), big.end(), small.begin(), small.end()));
    }
  }
}

TEST(Sampling, SaturatesToExactWhenFanoutCoversDegree) {
  const TahGraph g = testkit::path_graph(6);
  Rng rng(1);
  for (NodeId u = 0; u < 6; ++u) {
    EXPECT_EQ(sample_context(g, u, 3, 2, rng).members, extract_context_exact(g, u, 3).members);
  }
}

TEST(Sampling, FanoutOneForcesTwoMembers) {
  TahGraphBuilder b;
  b.add_node("c", "paper", "c");
  for (int i = 0; i < 10; ++i) {
    b.add_node("l" + std::to_string(i), "author", "l");
    b.add_edge("c", "l" + std::to_string(i), "writes");
  }
  const TahGraph g = std::move(b).build({"paper"});
  Rng rng(5);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_context(g, 0, 1, 1, rng).members.size(), 2u);
}

TEST(Sampling, UniformNeighborFrequency) {
  TahGraphBuilder b;
  b.add_node("c", "paper", "c");
  for (int i = 0; i < 4; ++i) {
    b.add_node("l" + std::to_string(i), "author", "l");
    b.add_edge("c", "l" + std::to_string(i), "writes");
  }
  const TahGraph g = std::move(b).build({"paper"});
  Rng rng(11);
  std::map<NodeId, int> count;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto m = sample_context(g, 0, 1, 1, rng).members;
    ++count[m[1]];
  }
  for (NodeId v = 1; v <= 4; ++v) EXPECT_NEAR(count[v] / double(draws), 0.25, 0.02);
}

TEST(Sampling, NegativesExcludeExactContext) {
  SynthConfig sc;
  sc.communities = 2;
  const TahGraph g = generate_synthetic_tahg(sc).graph;
  Rng rng(2);
  std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(g.num_nodes() - 1));
  for (int t = 0; t < 1000; ++t) {
    const NodeId u = pick(rng);
    const ContextSet exact = extract_context_exact(g, u, 2);
    const auto neg = sample_negatives(g, exact, 4, 5, rng);
    EXPECT_EQ(neg.size(), 20u);
    std::set<NodeId> uniq(neg.begin(), neg.end());
    EXPECT_EQ(uniq.size(), neg.size());
    for (NodeId v : neg) EXPECT_FALSE(exact.contains(v));
  }
}

TEST(Sampling, NegativesEmptyWhenContextCoversGraph) {
  const TahGraph g = testkit::path_graph(3);
  Rng rng(0);
  const ContextSet exact = extract_context_exact(g, 1, 1);
  EXPECT_TRUE(sample_negatives(g, exact, 2, 5, rng).empty());
  const ContextSet partial = extract_context_exact(testkit::path_graph(5), 0, 1);
  EXPECT_EQ(sample_negatives(testkit::path_graph(5), partial, 1, 5, rng).size(), 3u);
}

TEST(Sampling, Unigram75NoiseStillExcludesContext) {
  const TahGraph g = testkit::random_graph(60, 0.05, 4);
  Rng rng(3);
  for (NodeId u = 0; u < 60; ++u) {
    const ContextSet exact = extract_context_exact(g, u, 1);
    for (NodeId v : sample_negatives(g, exact, 2, 3, rng, NoiseDistribution::kUnigram75)) {
      EXPECT_FALSE(exact.contains(v));
    }
  }
}

TEST(CgpSampleTest, IsolatedAnchorIsSkippable) {
  TahGraphBuilder b;
  b.add_node("a", "paper", "a");
  b.add_node("b", "author", "b");
  b.add_node("c", "author", "c");
  b.add_edge("b", "c", "writes");
  const TahGraph g = std::move(b).build({"paper"});
  const CgpSample s = make_cgp_sample(g, 0, SamplerConfig{}, 1);
  EXPECT_TRUE(s.skippable());
  EXPECT_TRUE(s.negatives.empty());
}

TEST(CgpSampleTest, DeterministicAndWellFormed) {
  const TahGraph g = testkit::random_graph(80, 0.03, 5);
  SamplerConfig cfg;
  for (NodeId u = 0; u < 80; ++u) {
    const CgpSample a = make_cgp_sample(g, u, cfg, 42);
    EXPECT_EQ(a, make_cgp_sample(g, u, cfg, 42));
    const ContextSet exact = extract_context_exact(g, u, cfg.order);
    for (NodeId v : a.positives) {
      EXPECT_NE(v, u);
      EXPECT_TRUE(exact.contains(v));
    }
    const std::size_t remaining = g.num_nodes() - exact.members.size();
    EXPECT_EQ(a.negatives.size(), std::min(remaining, a.positives.size() * cfg.negative_ratio));
  }
}

TEST(SamplerConfigTest, DefaultsAndJson) {
  SamplerConfig cfg;
  EXPECT_EQ(cfg.order, 2);
  EXPECT_EQ(cfg.negative_ratio, 5);
  nlohmann::json j = cfg;
  j["noise_distribution"] = "unigram75";
  const SamplerConfig back = j.get<SamplerConfig>();
  EXPECT_EQ(back.noise, NoiseDistribution::kUnigram75);
  EXPECT_THROW(parse_noise_distribution("normal"), std::invalid_argument);
  cfg.negative_ratio = 0;
  EXPECT_THROW(cfg.check(), std::invalid_argument);
}
