#include "thlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "thlm/rng.hpp"

namespace thlm {

void SynthConfig::check() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synth config: " + msg); };
  if (communities < 2) fail("communities must be >= 2");
  if (!(p_in > p_out) || p_out < 0.0 || p_in > 1.0) fail("need 0 <= p_out < p_in <= 1");
  if (num_rich < communities || num_a < communities || num_b < communities) {
    fail("every community needs at least one node of each type");
  }
  if (community_vocab < 1 || background_vocab < 1 || name_vocab < 1) fail("vocabulary sizes must be positive");
  if (min_words < 1 || max_words < min_words) fail("need 1 <= min_words <= max_words");
  if (topic_fraction < 0.0 || topic_fraction > 1.0) fail("topic_fraction must be in [0,1]");
  if (empty_text_fraction < 0.0 || empty_text_fraction > 1.0) fail("empty_text_fraction must be in [0,1]");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"num_rich", c.num_rich},
                     {"num_a", c.num_a},
                     {"num_b", c.num_b},
                     {"communities", c.communities},
                     {"p_in", c.p_in},
                     {"p_out", c.p_out},
                     {"community_vocab", c.community_vocab},
                     {"background_vocab", c.background_vocab},
                     {"name_vocab", c.name_vocab},
                     {"min_words", c.min_words},
                     {"max_words", c.max_words},
                     {"topic_fraction", c.topic_fraction},
                     {"empty_text_fraction", c.empty_text_fraction},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  for (const auto& [key, _] : j.items()) {
    static const std::set<std::string> known = {
        "num_rich",   "num_a",          "num_b",          "communities", "p_in",      "p_out",
        "community_vocab", "background_vocab", "name_vocab", "min_words", "max_words", "topic_fraction",
        "empty_text_fraction", "seed"};
    if (!known.count(key)) throw std::invalid_argument("synth config: unknown key \"" + key + "\"");
  }
  c.num_rich = j.value("num_rich", c.num_rich);
  c.num_a = j.value("num_a", c.num_a);
  c.num_b = j.value("num_b", c.num_b);
  c.communities = j.value("communities", c.communities);
  c.p_in = j.value("p_in", c.p_in);
  c.p_out = j.value("p_out", c.p_out);
  c.community_vocab = j.value("community_vocab", c.community_vocab);
  c.background_vocab = j.value("background_vocab", c.background_vocab);
  c.name_vocab = j.value("name_vocab", c.name_vocab);
  c.min_words = j.value("min_words", c.min_words);
  c.max_words = j.value("max_words", c.max_words);
  c.topic_fraction = j.value("topic_fraction", c.topic_fraction);
  c.empty_text_fraction = j.value("empty_text_fraction", c.empty_text_fraction);
  c.seed = j.value("seed", c.seed);
}

namespace {

// Distinct pronounceable pseudo-words.
std::vector<std::string> make_words(std::size_t n, Rng& rng, std::set<std::string>& used) {
  static const char* kOnset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                                 "br", "dr", "gl", "kr", "pl", "st", "tr", "sh", "ch", "th"};
  static const char* kVowel[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
  static const char* kCoda[] = {"", "n", "r", "s", "l", "x", "m", "k"};
  std::uniform_int_distribution<int> on(0, std::size(kOnset) - 1), vo(0, std::size(kVowel) - 1),
      co(0, std::size(kCoda) - 1), syl(2, 3);
  std::vector<std::string> out;
  while (out.size() < n) {
    std::string w;
    const int s = syl(rng);
    for (int i = 0; i < s; ++i) w += std::string(kOnset[on(rng)]) + kVowel[vo(rng)];
    w += kCoda[co(rng)];
    if (used.insert(w).second) out.push_back(std::move(w));
  }
  return out;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

SynthGraph generate_synthetic_tahg(const SynthConfig& cfg) {
  cfg.check();
  Rng rng(cfg.seed);
  const int c = cfg.communities;

  std::set<std::string> used;
  std::vector<std::vector<std::string>> topic(static_cast<std::size_t>(c));
  for (auto& t : topic) t = make_words(static_cast<std::size_t>(cfg.community_vocab), rng, used);
  const auto background = make_words(static_cast<std::size_t>(cfg.background_vocab), rng, used);
  const auto names = make_words(static_cast<std::size_t>(cfg.name_vocab), rng, used);

  SynthGraph out;
  out.rich_types = {"paper"};
  TahGraphBuilder b;
  b.declare_type("paper");
  b.declare_type("author");
  b.declare_type("term");
  const RelId writes = b.declare_relation("writes");
  const RelId has_term = b.declare_relation("has_term");

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> len(cfg.min_words, cfg.max_words);
  // Zipfian word frequencies (weight 1/rank) within every vocabulary.
  auto zipf = [](std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t r = 0; r < n; ++r) w[r] = 1.0 / static_cast<double>(r + 1);
    return std::discrete_distribution<std::size_t>(w.begin(), w.end());
  };
  auto pick_bg = zipf(background.size());
  auto pick_topic = zipf(static_cast<std::size_t>(cfg.community_vocab));
  auto pick_name = zipf(names.size());
  std::uniform_int_distribution<int> name_len(1, 3);

  std::vector<NodeId> papers, authors, terms;
  for (int i = 0; i < cfg.num_rich; ++i) {
    const int comm = i % c;
    std::string text;
    const int n = len(rng);
    for (int w = 0; w < n; ++w) {
      if (!text.empty()) text += ' ';
      text += unif(rng) < cfg.topic_fraction ? topic[comm][pick_topic(rng)] : background[pick_bg(rng)];
    }
    if (i % 7 == 3) text += '.';
    papers.push_back(b.add_node("p" + std::to_string(i), "paper", std::move(text)));
    out.community.push_back(comm);
    out.labels.emplace_back("p" + std::to_string(i), "community_" + std::to_string(comm));
  }
  auto add_named = [&](const std::string& prefix, const char* type, int count, std::vector<NodeId>& ids) {
    for (int i = 0; i < count; ++i) {
      std::string text;
      const int n = name_len(rng);
      for (int w = 0; w < n; ++w) {
        if (!text.empty()) text += ' ';
        text += names[pick_name(rng)];
      }
      ids.push_back(b.add_node(prefix + std::to_string(i), type, std::move(text)));
      out.community.push_back(i % c);
    }
  };
  add_named("a", "author", cfg.num_a, authors);
  add_named("t", "term", cfg.num_b, terms);

  const std::size_t n_nodes = out.community.size();
  UnionFind uf(n_nodes);
  std::vector<int> deg(n_nodes, 0);
  std::vector<std::vector<char>> linked_a(papers.size(), std::vector<char>(authors.size(), 0));
  std::vector<std::vector<char>> linked_t(papers.size(), std::vector<char>(terms.size(), 0));
  auto wire = [&](std::size_t pi, const std::vector<NodeId>& others, std::vector<std::vector<char>>& linked,
                  std::size_t oi, RelId rel) {
    if (linked[pi][oi]) return;
    linked[pi][oi] = 1;
    b.add_edge(papers[pi], others[oi], rel == writes ? "writes" : "has_term");
    uf.unite(papers[pi], others[oi]);
    ++deg[papers[pi]];
    ++deg[others[oi]];
  };
  for (std::size_t pi = 0; pi < papers.size(); ++pi) {
    const int cp = out.community[papers[pi]];
    for (std::size_t ai = 0; ai < authors.size(); ++ai) {
      const double p = out.community[authors[ai]] == cp ? cfg.p_in : cfg.p_out;
      if (unif(rng) < p) wire(pi, authors, linked_a, ai, writes);
    }
    for (std::size_t ti = 0; ti < terms.size(); ++ti) {
      const double p = out.community[terms[ti]] == cp ? cfg.p_in : cfg.p_out;
      if (unif(rng) < p) wire(pi, terms, linked_t, ti, has_term);
    }
  }

  // Join the pieces of every community into one component with intra-community
  // edges so no node is isolated and p_out = 0 leaves exactly c components.
  for (int comm = 0; comm < c; ++comm) {
    std::vector<std::size_t> cp, ca, ct;
    for (std::size_t i = 0; i < papers.size(); ++i) {
      if (out.community[papers[i]] == comm) cp.push_back(i);
    }
    for (std::size_t i = 0; i < authors.size(); ++i) {
      if (out.community[authors[i]] == comm) ca.push_back(i);
    }
    for (std::size_t i = 0; i < terms.size(); ++i) {
      if (out.community[terms[i]] == comm) ct.push_back(i);
    }
    auto rand_of = [&](const std::vector<std::size_t>& v) {
      return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
    };
    // Every author and term gets a paper of its own community if it has none.
    for (std::size_t ai : ca) {
      if (deg[authors[ai]] == 0) {
        wire(rand_of(cp), authors, linked_a, ai, writes);
      }
    }
    for (std::size_t ti : ct) {
      if (deg[terms[ti]] == 0) {
        wire(rand_of(cp), terms, linked_t, ti, has_term);
      }
    }
    // Merge the remaining pieces through the component of the first paper.
    const NodeId root_paper = papers[cp.front()];
    for (std::size_t pi : cp) {
      if (uf.find(papers[pi]) == uf.find(root_paper)) continue;
      // Connect to an author already in the root component, else any author.
      std::vector<std::size_t> anchors;
      for (std::size_t ai : ca) {
        if (uf.find(authors[ai]) == uf.find(root_paper)) anchors.push_back(ai);
      }
      if (anchors.empty()) {
        // The root paper has no author yet: give it one, then link.
        const std::size_t ai = rand_of(ca);
        wire(cp.front(), authors, linked_a, ai, writes);
        anchors.push_back(ai);
      }
      wire(pi, authors, linked_a, rand_of(anchors), writes);
    }
    for (std::size_t ai : ca) {
      if (uf.find(authors[ai]) != uf.find(root_paper)) wire(cp.front(), authors, linked_a, ai, writes);
    }
    for (std::size_t ti : ct) {
      if (uf.find(terms[ti]) != uf.find(root_paper)) wire(cp.front(), terms, linked_t, ti, has_term);
    }
  }

  out.graph = std::move(b).build(out.rich_types);

  if (cfg.empty_text_fraction > 0.0) {
    // Rebuild with a planted set of blank texts.
    const auto n_empty = static_cast<std::size_t>(std::llround(cfg.empty_text_fraction * static_cast<double>(n_nodes)));
    std::vector<NodeId> order(n_nodes);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<char> blank(n_nodes, 0);
    for (std::size_t i = 0; i < n_empty; ++i) blank[order[i]] = 1;
    const TahGraph& g = out.graph;
    TahGraphBuilder rb;
    for (std::size_t t = 0; t < g.num_types(); ++t) rb.declare_type(g.type_name(static_cast<TypeId>(t)));
    for (std::size_t r = 0; r < g.num_relations(); ++r) rb.declare_relation(g.rel_name(static_cast<RelId>(r)));
    for (std::size_t u = 0; u < n_nodes; ++u) {
      const auto id = static_cast<NodeId>(u);
      rb.add_node(g.external_id(id), g.type_name(g.type_of(id)), blank[u] ? std::string() : g.text(id));
    }
    for (const Edge& e : g.edges()) rb.add_edge(e.src, e.dst, g.rel_name(e.rel));
    out.graph = std::move(rb).build(out.rich_types);
    out.planted_empty_texts = n_empty;
  }
  return out;
}

void write_synthetic(const SynthGraph& s, const SynthConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_graph(s.graph, dir / "nodes.jsonl", dir / "edges.jsonl");
  std::ofstream labels(dir / "labels.jsonl", std::ios::binary | std::ios::trunc);
  if (!labels) throw std::runtime_error("cannot write " + (dir / "labels.jsonl").string());
  for (const auto& [id, label] : s.labels) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["labels"] = nlohmann::json::array({label});
    labels << j.dump() << '\n';
  }
  std::ofstream meta(dir / "synth.json", std::ios::binary | std::ios::trunc);
  nlohmann::json j = cfg;
  j["rich_text_types"] = s.rich_types;
  meta << j.dump(2) << '\n';
}

}  // namespace thlm
