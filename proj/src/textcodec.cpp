#include "wavecap/textcodec.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "wavecap/errors.hpp"

namespace wavecap::text {
namespace {

constexpr char kFirstPrintable = 0x21;
constexpr char kLastPrintable = 0x7E;
constexpr std::string_view kHeader = "#version: wavecap-bpe 2";

// Splits a normalized word into code-point-sized pieces. Non-ASCII UTF-8
// sequences stay together so they map to one unknown symbol.
std::vector<std::string> split_chars(std::string_view word) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  auto syms = split_chars(word);
  if (!syms.empty()) syms.back() += kEndOfWord;
  return syms;
}

// ASCII punctuation other than the apostrophe stands alone, so "woman," and
// "woman" share the "woman" piece.
bool is_split_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) && c != '\''; }

struct Piece {
  std::string text;
  bool joined = false;  // no space before it in the normalized text
};

std::vector<Piece> split_pieces(const std::string& normalized) {
  std::vector<Piece> pieces;
  std::istringstream in(normalized);
  std::string w;
  while (in >> w) {
    bool first = true;
    size_t i = 0;
    while (i < w.size()) {
      size_t j = i + 1;
      if (!is_split_punct(static_cast<unsigned char>(w[i]))) {
        while (j < w.size() && !is_split_punct(static_cast<unsigned char>(w[j]))) ++j;
      }
      pieces.push_back({w.substr(i, j - i), !first});
      first = false;
      i = j;
    }
  }
  return pieces;
}

void apply_merge(std::vector<std::string>& syms, const Merge& m) {
  std::vector<std::string> out;
  out.reserve(syms.size());
  for (size_t i = 0; i < syms.size(); ++i) {
    if (i + 1 < syms.size() && syms[i] == m.first && syms[i + 1] == m.second) {
      out.push_back(syms[i] + syms[i + 1]);
      ++i;
    } else {
      out.push_back(syms[i]);
    }
  }
  syms = std::move(out);
}

bool ends_with_eow(const std::string& s) {
  return s.size() >= kEndOfWord.size() &&
         s.compare(s.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0;
}

}  // namespace

BPEVocab::BPEVocab() {
  for (const char* s : {"<pad>", "<end>", "<unk>", "<unk></w>", "<join>"}) add_token(s);
  for (char c = kFirstPrintable; c <= kLastPrintable; ++c) add_token(std::string(1, c));
  for (char c = kFirstPrintable; c <= kLastPrintable; ++c) {
    add_token(std::string(1, c) + std::string(kEndOfWord));
  }
}

BPEVocab::BPEVocab(std::vector<Merge> merges) : BPEVocab() {
  for (auto& m : merges) {
    rank_.emplace(m, static_cast<int64_t>(merges_.size()));
    add_token(m.first + m.second);
    merges_.push_back(std::move(m));
  }
}

int64_t BPEVocab::base_size() { return 5 + 2 * (kLastPrintable - kFirstPrintable + 1); }

void BPEVocab::add_token(const std::string& tok) {
  if (token_to_id_.count(tok) != 0) return;
  token_to_id_.emplace(tok, static_cast<TokenId>(id_to_token_.size()));
  id_to_token_.push_back(tok);
}

const std::string& BPEVocab::token(TokenId id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(size()));
  }
  return id_to_token_[static_cast<size_t>(id)];
}

TokenId BPEVocab::id(const std::string& token) const {
  const auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? -1 : it->second;
}

std::vector<TokenId> BPEVocab::encode_word(std::string_view word) const {
  auto syms = initial_symbols(word);
  // Unknown characters are never part of a merge; keep them as barriers.
  while (syms.size() > 1) {
    int64_t best_rank = std::numeric_limits<int64_t>::max();
    const Merge* best = nullptr;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      const auto it = rank_.find(Merge{syms[i], syms[i + 1]});
      if (it != rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (best == nullptr) break;
    apply_merge(syms, *best);
  }
  std::vector<TokenId> ids;
  ids.reserve(syms.size());
  for (const auto& s : syms) {
    const auto tid = id(s);
    if (tid >= 0) ids.push_back(tid);
    else ids.push_back(ends_with_eow(s) ? kUnknownEndOfWord : kUnknown);
  }
  return ids;
}

void BPEVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << kHeader << '\n';
  for (const auto& [a, b] : merges_) out << a << ' ' << b << '\n';
}

BPEVocab BPEVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary " + path.string());
  std::string line;
  std::vector<Merge> merges;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.rfind("#version", 0) == 0) {
      if (line != kHeader) throw DataError("unsupported vocabulary header: " + line);
      continue;
    }
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size() ||
        line.find(' ', sp + 1) != std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed merge");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return BPEVocab(std::move(merges));
}

std::string normalize(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

BPEVocab train_bpe(const std::vector<std::string>& corpus, int64_t vocab_size, uint64_t /*seed*/) {
  if (corpus.empty()) throw ConfigError("train_bpe: empty corpus");
  if (vocab_size < BPEVocab::base_size()) {
    throw ConfigError("train_bpe: vocab_size " + std::to_string(vocab_size) +
                      " is smaller than the base alphabet (" +
                      std::to_string(BPEVocab::base_size()) + ")");
  }
  std::map<std::string, int64_t> word_freq;
  for (const auto& line : corpus) {
    for (const auto& p : split_pieces(normalize(line))) ++word_freq[p.text];
  }
  struct Word {
    std::vector<std::string> syms;
    int64_t freq;
  };
  std::vector<Word> words;
  for (const auto& [w, f] : word_freq) {
    words.push_back({initial_symbols(w), f});
  }
  const BPEVocab base;
  std::unordered_set<std::string> present;
  for (TokenId i = 0; i < base.size(); ++i) present.insert(base.token(i));
  const auto in_vocab = [&](const std::string& s) { return present.count(s) != 0; };

  std::vector<Merge> merges;
  while (static_cast<int64_t>(present.size()) < vocab_size) {
    std::map<Merge, int64_t> counts;
    for (const auto& w : words) {
      for (size_t i = 0; i + 1 < w.syms.size(); ++i) {
        // Unknown (non-ASCII) symbols never take part in merges.
        if (!in_vocab(w.syms[i]) || !in_vocab(w.syms[i + 1])) continue;
        counts[Merge{w.syms[i], w.syms[i + 1]}] += w.freq;
      }
    }
    if (counts.empty()) break;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    const Merge m = best->first;
    for (auto& w : words) apply_merge(w.syms, m);
    present.insert(m.first + m.second);
    merges.push_back(m);
  }
  BPEVocab vocab(std::move(merges));
  return vocab;
}

std::vector<TokenId> encode_text(const BPEVocab& vocab, std::string_view text, int64_t max_len) {
  std::vector<TokenId> ids;
  for (const auto& p : split_pieces(normalize(text))) {
    if (p.joined) ids.push_back(BPEVocab::kJoin);
    const auto part = vocab.encode_word(p.text);
    ids.insert(ids.end(), part.begin(), part.end());
  }
  ids.push_back(BPEVocab::kEnd);
  if (static_cast<int64_t>(ids.size()) > max_len) {
    throw TruncationError("text needs " + std::to_string(ids.size()) +
                          " tokens including end, limit is " + std::to_string(max_len));
  }
  ids.resize(static_cast<size_t>(max_len), BPEVocab::kPad);
  return ids;
}

std::string decode_text(const BPEVocab& vocab, const std::vector<TokenId>& tokens) {
  std::string out;
  for (const auto t : tokens) {
    if (t == BPEVocab::kEnd) break;
    if (t == BPEVocab::kPad) continue;
    if (t == BPEVocab::kJoin) {
      if (!out.empty() && out.back() == ' ') out.pop_back();
      continue;
    }
    if (t == BPEVocab::kUnknown) {
      out += kReplacementMark;
      continue;
    }
    if (t == BPEVocab::kUnknownEndOfWord) {
      out += kReplacementMark;
      out += ' ';
      continue;
    }
    const auto& tok = vocab.token(t);
    if (ends_with_eow(tok)) {
      out.append(tok, 0, tok.size() - kEndOfWord.size());
      out += ' ';
    } else {
      out += tok;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

}  // namespace wavecap::text
