#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "thlm/synth.hpp"
#include "thlm/tensor.hpp"
#include "thlm/textseq.hpp"

namespace fs = std::filesystem;
using namespace thlm;
using nn::Index;
using nn::Matrix;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t components(const TahGraph& g) {
  std::vector<NodeId> parent(g.num_nodes());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](NodeId x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const Edge& e : g.edges()) parent[find(e.src)] = find(e.dst);
  std::size_t n = 0;
  for (NodeId u = 0; u < static_cast<NodeId>(g.num_nodes()); ++u) n += find(u) == u;
  return n;
}

}  // namespace

TEST(Synth, DefaultGraphValidates) {
  const SynthGraph s = generate_synthetic_tahg(SynthConfig{});
  EXPECT_EQ(s.graph.num_nodes(), 350u);
  EXPECT_EQ(s.graph.num_types(), 3u);
  EXPECT_EQ(s.graph.num_relations(), 2u);
  const auto rep = validate(s.graph);
  EXPECT_TRUE(rep.ok());
  EXPECT_EQ(rep.isolated_nodes, 0u);
  EXPECT_EQ(s.labels.size(), 200u);
  for (const auto& [id, label] : s.labels) {
    const NodeId u = *s.graph.find(id);
    EXPECT_TRUE(s.graph.is_rich(u));
    EXPECT_EQ(label, "community_" + std::to_string(s.community[u]));
  }
}

TEST(Synth, NoCrossEdgesGivesOneComponentPerCommunity) {
  for (int c : {2, 3, 4}) {
    SynthConfig cfg;
    cfg.communities = c;
    cfg.p_out = 0.0;
    cfg.seed = static_cast<std::uint64_t>(c);
    const SynthGraph s = generate_synthetic_tahg(cfg);
    EXPECT_EQ(components(s.graph), static_cast<std::size_t>(c));
    for (const Edge& e : s.graph.edges()) EXPECT_EQ(s.community[e.src], s.community[e.dst]);
  }
}

TEST(Synth, TextLengthsAndNames) {
  const SynthGraph s = generate_synthetic_tahg(SynthConfig{});
  for (NodeId u = 0; u < static_cast<NodeId>(s.graph.num_nodes()); ++u) {
    const auto tokens = split_words(s.graph.text(u));
    const auto n = static_cast<std::size_t>(std::count_if(tokens.begin(), tokens.end(), [](const std::string& t) { return t != "."; }));
    if (s.graph.is_rich(u)) {
      EXPECT_GE(n, 20u);
      EXPECT_LE(n, 40u);
    } else {
      EXPECT_GE(n, 1u);
      EXPECT_LE(n, 3u);
    }
  }
}

TEST(Synth, SameSeedSameFiles) {
  const fs::path a = fs::temp_directory_path() / "thlm_synth_a", b = fs::temp_directory_path() / "thlm_synth_b";
  fs::remove_all(a);
  fs::remove_all(b);
  SynthConfig cfg;
  cfg.seed = 17;
  write_synthetic(generate_synthetic_tahg(cfg), cfg, a);
  write_synthetic(generate_synthetic_tahg(cfg), cfg, b);
  for (const char* f : {"nodes.jsonl", "edges.jsonl", "labels.jsonl", "synth.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_FALSE(slurp(a / f).empty()) << f;
  }
  cfg.seed = 18;
  write_synthetic(generate_synthetic_tahg(cfg), cfg, b);
  EXPECT_NE(slurp(a / "edges.jsonl"), slurp(b / "edges.jsonl"));
}

TEST(Synth, ConfigValidation) {
  SynthConfig cfg;
  cfg.p_in = 0.01;
  cfg.p_out = 0.01;
  EXPECT_THROW(generate_synthetic_tahg(cfg), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.communities = 1;
  EXPECT_THROW(cfg.check(), std::invalid_argument);
  EXPECT_THROW(nlohmann::json({{"p_inn", 0.1}}).get<SynthConfig>(), std::invalid_argument);
  const nlohmann::json j = SynthConfig{};
  EXPECT_EQ(j.get<SynthConfig>().num_rich, 200);
}

// Softmax regression on bag-of-words must recover the planted communities.
TEST(Synth, BagOfWordsSignalIsLearnable) {
  const SynthGraph s = generate_synthetic_tahg(SynthConfig{});
  const Vocab v = build_vocab(s.graph, 1);
  const auto& papers = s.graph.nodes_of_type(*s.graph.type_id("paper"));
  const Index n = static_cast<Index>(papers.size()), V = static_cast<Index>(v.size()), C = 4;
  Matrix x = Matrix::Zero(n, V);
  Matrix y = Matrix::Zero(n, C);
  for (Index i = 0; i < n; ++i) {
    for (TokenId t : tokenize(v, s.graph.text(papers[i]))) x(i, t) += 1.0;
    x.row(i) /= x.row(i).sum();
    y(i, s.community[papers[i]]) = 1.0;
  }
  const Index train = n * 7 / 10;
  Matrix w = Matrix::Zero(V, C);
  for (int it = 0; it < 300; ++it) {
    Matrix logits = x.topRows(train) * w;
    for (Index i = 0; i < train; ++i) {
      logits.row(i).array() -= logits.row(i).maxCoeff();
      logits.row(i) = logits.row(i).array().exp();
      logits.row(i) /= logits.row(i).sum();
    }
    w -= 20.0 * x.topRows(train).transpose() * (logits - y.topRows(train)) / static_cast<double>(train);
  }
  const Matrix scores = x.bottomRows(n - train) * w;
  int correct = 0;
  for (Index i = 0; i < n - train; ++i) {
    Index best = 0;
    scores.row(i).maxCoeff(&best);
    correct += y(train + i, best) == 1.0;
  }
  EXPECT_GT(correct / static_cast<double>(n - train), 0.9);
}
