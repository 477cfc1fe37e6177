#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "thlm/graph.hpp"
#include "thlm/rng.hpp"

namespace thlm {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kCls = 2;
inline constexpr TokenId kSep = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
}  // namespace special

// Word-level vocabulary. Ids 0..4 are [PAD] [UNK] [CLS] [SEP] [MASK].
class Vocab {
 public:
  Vocab();

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // [UNK] when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  TokenId add(std::string token);

  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Lowercased words; every ASCII punctuation character is its own token.
std::vector<std::string> split_words(std::string_view text);

// Keeps words whose corpus frequency is >= min_freq, ordered by descending
// frequency then lexicographically. Throws on a graph without nodes.
Vocab build_vocab(const TahGraph& g, int min_freq);

std::vector<TokenId> tokenize(const Vocab& v, std::string_view text);
std::string detokenize(const Vocab& v, std::span<const TokenId> ids);

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::size_t> segment_boundaries;  // positions of [SEP]
  std::vector<NodeId> source_nodes;             // one per segment

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

struct MlmTarget {
  std::size_t position = 0;
  TokenId original = 0;
  friend bool operator==(const MlmTarget&, const MlmTarget&) = default;
};

struct MaskedSequence {
  std::vector<TokenId> ids;
  std::vector<MlmTarget> targets;
  friend bool operator==(const MaskedSequence&, const MaskedSequence&) = default;
};

// full: own text plus neighbor texts for textless nodes.
// neighbors_only: textless nodes drop their own text.
// textless_only: no neighbor augmentation at all.
enum class AugmentMode { kFull, kNeighborsOnly, kTextlessOnly };
std::string to_string(AugmentMode m);
AugmentMode parse_augment_mode(const std::string& name);

enum class MlmPolicy { kMaskOnly, kBert801010 };
std::string to_string(MlmPolicy p);
MlmPolicy parse_mlm_policy(const std::string& name);

// Builds [CLS] X_u [SEP] for rich-text nodes and
// [CLS] X_u [SEP] X_n1 [SEP] ... [SEP] X_nk [SEP] for textless ones, drawing
// rich-text neighbors first. With neighbors present the anchor's own text
// keeps at most half the budget; the remainder is filled greedily.
TokenSequence assemble_input(const TahGraph& g, const Vocab& v, NodeId u, int k, int max_len,
                             Rng& rng, AugmentMode mode = AugmentMode::kFull);

// Tokens with id >= 5 are maskable; each is selected with probability rate.
MaskedSequence mask_sequence(const TokenSequence& seq, double rate, Rng& rng,
                             MlmPolicy policy = MlmPolicy::kMaskOnly, std::size_t vocab_size = 0);

}  // namespace thlm
