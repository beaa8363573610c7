#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace wavecap::text {

using TokenId = int64_t;
using Merge = std::pair<std::string, std::string>;

// Suffix that marks the last symbol of a word.
inline constexpr std::string_view kEndOfWord = "</w>";
// Emitted by decode for every unknown token.
inline constexpr std::string_view kReplacementMark = "\xEF\xBF\xBD";

/// Byte-pair-encoding vocabulary over a fixed base alphabet (printable ASCII
/// 0x21..0x7E, each in a mid-word and an end-of-word form), followed by the
/// learned merges. The merge list alone therefore determines every id.
///
/// Reserved ids: 0 pad, 1 end, 2 unknown, 3 unknown at end of word, 4 join.
///
/// Text is cut at whitespace and around ASCII punctuation (apostrophe
/// excepted); every piece ends in an end-of-word symbol. A piece that
/// followed the previous one without a space is preceded by the join id,
/// which decoding reads as "drop the last space".
class BPEVocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEnd = 1;
  static constexpr TokenId kUnknown = 2;
  static constexpr TokenId kUnknownEndOfWord = 3;
  static constexpr TokenId kJoin = 4;

  BPEVocab();
  explicit BPEVocab(std::vector<Merge> merges);

  const std::vector<Merge>& merges() const { return merges_; }
  int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }
  const std::string& token(TokenId id) const;
  // Returns -1 when absent.
  TokenId id(const std::string& token) const;

  /// Splits a normalized piece into symbols and applies merges by rank.
  std::vector<TokenId> encode_word(std::string_view word) const;

  void save(const std::filesystem::path& path) const;
  static BPEVocab load(const std::filesystem::path& path);

  /// Number of ids that exist before any merge (specials + base alphabet).
  static int64_t base_size();

 private:
  void add_token(const std::string& tok);

  std::vector<Merge> merges_;
  std::map<Merge, int64_t> rank_;
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

/// Lowercases ASCII letters, collapses whitespace runs to one space and trims.
std::string normalize(std::string_view text);

/// Greedy most-frequent-pair merging until the vocabulary holds vocab_size
/// ids or no pair remains. Ties go to the lexicographically smallest pair, so
/// the result depends on the corpus only (the seed is accepted for interface
/// symmetry and recorded nowhere). Throws ConfigError when vocab_size is
/// below base_size() or the corpus is empty.
BPEVocab train_bpe(const std::vector<std::string>& corpus, int64_t vocab_size, uint64_t seed = 0);

/// Encodes normalized text, appends the end token and pads to max_len.
/// Throws TruncationError when the encoded text plus end token exceeds max_len.
std::vector<TokenId> encode_text(const BPEVocab& vocab, std::string_view text, int64_t max_len);

/// Inverse of encode_text: stops at the end token, skips padding. Throws
/// IndexError for ids outside the vocabulary.
std::string decode_text(const BPEVocab& vocab, const std::vector<TokenId>& tokens);

}  // namespace wavecap::text
