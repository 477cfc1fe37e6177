#include "thlm/textseq.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "thlm/log.hpp"

namespace thlm {

namespace {

constexpr const char* kSpecialTokens[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }
bool is_space(unsigned char c) { return c < 0x80 && std::isspace(c); }

}  // namespace

// ---------------------------------------------------------------- vocab

Vocab::Vocab() {
  for (const char* tok : kSpecialTokens) add(tok);
}

TokenId Vocab::add(std::string token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
  return id;
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? special::kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Vocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    if (lineno < special::kCount) {
      if (line != kSpecialTokens[lineno]) {
        throw std::runtime_error("vocab line " + std::to_string(lineno + 1) + ": expected " +
                                 kSpecialTokens[lineno]);
      }
    } else {
      if (v.contains(line)) {
        throw std::runtime_error("vocab line " + std::to_string(lineno + 1) + ": duplicate token");
      }
      v.add(line);
    }
    ++lineno;
  }
  if (lineno < special::kCount) throw std::runtime_error("vocab file is missing special tokens");
  return v;
}

// ---------------------------------------------------------------- tokenizer

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

Vocab build_vocab(const TahGraph& g, int min_freq) {
  if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
  if (g.num_nodes() == 0) throw std::invalid_argument("build_vocab: empty corpus (graph has no nodes)");
  std::map<std::string, std::size_t> freq;
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    for (auto& w : split_words(g.text(static_cast<NodeId>(u)))) ++freq[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, c] : freq) {
    if (c >= static_cast<std::size_t>(min_freq)) kept.emplace_back(w, c);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (auto& [w, c] : kept) v.add(w);
  if (kept.empty()) log_warning("build_vocab: corpus has no tokens; vocabulary holds specials only");
  return v;
}

std::vector<TokenId> tokenize(const Vocab& v, std::string_view text) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(v.id(w));
  return ids;
}

std::string detokenize(const Vocab& v, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out.push_back(' ');
    out += v.token(id);
  }
  return out;
}

// ---------------------------------------------------------------- enums

std::string to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::kFull: return "full";
    case AugmentMode::kNeighborsOnly: return "neighbors_only";
    case AugmentMode::kTextlessOnly: return "textless_only";
  }
  return "full";
}

AugmentMode parse_augment_mode(const std::string& name) {
  if (name == "full") return AugmentMode::kFull;
  if (name == "neighbors_only") return AugmentMode::kNeighborsOnly;
  if (name == "textless_only") return AugmentMode::kTextlessOnly;
  throw std::invalid_argument("unknown augmentation mode \"" + name + "\"");
}

std::string to_string(MlmPolicy p) {
  return p == MlmPolicy::kMaskOnly ? "mask_only" : "bert_80_10_10";
}

MlmPolicy parse_mlm_policy(const std::string& name) {
  if (name == "mask_only") return MlmPolicy::kMaskOnly;
  if (name == "bert_80_10_10") return MlmPolicy::kBert801010;
  throw std::invalid_argument("unknown mlm policy \"" + name + "\"");
}

// ---------------------------------------------------------------- assembly

TokenSequence assemble_input(const TahGraph& g, const Vocab& v, NodeId u, int k, int max_len,
                             Rng& rng, AugmentMode mode) {
  g.check_node(u);
  if (k < 0) throw std::invalid_argument("assemble_input: k must be >= 0");
  if (max_len < 8) throw std::invalid_argument("assemble_input: max_len must be >= 8");

  std::vector<TokenId> own = tokenize(v, g.text(u));
  std::vector<NodeId> chosen;
  const bool augment = !g.is_rich(u) && mode != AugmentMode::kTextlessOnly && k > 0;
  if (augment) {
    std::vector<NodeId> rich, poor;
    for (NodeId w : g.neighbors(u)) (g.is_rich(w) ? rich : poor).push_back(w);
    std::shuffle(rich.begin(), rich.end(), rng);
    std::shuffle(poor.begin(), poor.end(), rng);
    for (NodeId w : rich) {
      if (chosen.size() == static_cast<std::size_t>(k)) break;
      chosen.push_back(w);
    }
    for (NodeId w : poor) {
      if (chosen.size() == static_cast<std::size_t>(k)) break;
      chosen.push_back(w);
    }
    if (mode == AugmentMode::kNeighborsOnly) own.clear();
  }

  std::vector<std::vector<TokenId>> segments;
  std::vector<NodeId> seg_nodes;
  for (NodeId w : chosen) {
    auto toks = tokenize(v, g.text(w));
    if (toks.empty()) continue;
    segments.push_back(std::move(toks));
    seg_nodes.push_back(w);
  }

  TokenSequence seq;
  const std::size_t budget = static_cast<std::size_t>(max_len) - 1;  // after [CLS]
  std::size_t own_cap = budget - 1;
  if (!segments.empty()) own_cap = budget / 2 - 1;
  if (own.size() > own_cap) own.resize(own_cap);

  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(special::kCls);
  seq.ids.insert(seq.ids.end(), own.begin(), own.end());
  seq.segment_boundaries.push_back(seq.ids.size());
  seq.ids.push_back(special::kSep);
  seq.source_nodes.push_back(u);

  for (std::size_t i = 0; i < segments.size(); ++i) {
    const std::size_t remaining = static_cast<std::size_t>(max_len) - seq.ids.size();
    if (remaining < 2) break;
    auto& toks = segments[i];
    const bool truncated = toks.size() + 1 > remaining;
    if (truncated) toks.resize(remaining - 1);
    seq.ids.insert(seq.ids.end(), toks.begin(), toks.end());
    seq.segment_boundaries.push_back(seq.ids.size());
    seq.ids.push_back(special::kSep);
    seq.source_nodes.push_back(seg_nodes[i]);
    if (truncated) break;
  }
  return seq;
}

MaskedSequence mask_sequence(const TokenSequence& seq, double rate, Rng& rng, MlmPolicy policy,
                             std::size_t vocab_size) {
  if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("mask_sequence: rate must be in (0,1)");
  if (policy == MlmPolicy::kBert801010 && vocab_size <= special::kCount) {
    throw std::invalid_argument("mask_sequence: bert_80_10_10 needs the vocabulary size");
  }
  MaskedSequence out;
  out.ids = seq.ids;
  std::vector<std::size_t> maskable;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (!Vocab::is_special(seq.ids[i])) maskable.push_back(i);
  }
  if (maskable.empty()) return out;

  std::bernoulli_distribution select(rate);
  std::vector<std::size_t> picked;
  for (int attempt = 0; attempt < 2 && picked.empty(); ++attempt) {
    for (std::size_t pos : maskable) {
      if (select(rng)) picked.push_back(pos);
    }
  }
  if (picked.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, maskable.size() - 1);
    picked.push_back(maskable[pick(rng)]);
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_token(
      special::kCount, static_cast<TokenId>(std::max<std::size_t>(vocab_size, special::kCount + 1) - 1));
  for (std::size_t pos : picked) {
    out.targets.push_back({pos, seq.ids[pos]});
    if (policy == MlmPolicy::kMaskOnly) {
      out.ids[pos] = special::kMask;
    } else {
      const double r = unif(rng);
      if (r < 0.8) {
        out.ids[pos] = special::kMask;
      } else if (r < 0.9) {
        out.ids[pos] = random_token(rng);
      }
    }
  }
  return out;
}

}  // namespace thlm
