#include "support.hpp"

#include "wavecap/errors.hpp"
#include "wavecap/textcodec.hpp"

using namespace wavecap;
using text::BPEVocab;

TEST_CASE("most frequent pair wins the first merge") {
  const auto v = text::train_bpe({"aaaa"}, BPEVocab::base_size() + 1);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == text::Merge{"a", "a"});
}

TEST_CASE("vocabulary size bounds") {
  CHECK(text::train_bpe({"hello world"}, BPEVocab::base_size()).merges().empty());
  CHECK_THROWS_AS(text::train_bpe({"hello"}, BPEVocab::base_size() - 1), ConfigError);
  CHECK_THROWS_AS(text::train_bpe({}, 500), ConfigError);
}

TEST_CASE("training is deterministic and ids are dense") {
  const std::vector<std::string> corpus = {"a red car on the street", "the blue car", "a man with a dog"};
  const auto a = text::train_bpe(corpus, 300, 1), b = text::train_bpe(corpus, 300, 2);
  CHECK(a.merges() == b.merges());
  for (int64_t id = 0; id < a.size(); ++id) CHECK(a.id(a.token(id)) == id);
  for (const auto& m : a.merges()) {
    CHECK(a.id(m.first + m.second) >= BPEVocab::base_size());
  }
}

TEST_CASE("empty text") {
  const BPEVocab v;
  const auto ids = text::encode_text(v, "", 5);
  CHECK(ids == std::vector<text::TokenId>{BPEVocab::kEnd, BPEVocab::kPad, BPEVocab::kPad, BPEVocab::kPad,
                                           BPEVocab::kPad});
  CHECK(text::decode_text(v, ids).empty());
}

TEST_CASE("round trip on random captions") {
  std::mt19937_64 rng(3);
  std::vector<std::string> texts;
  for (int i = 0; i < 100; ++i) {
    std::string s;
    const auto len = 1 + rng() % 40;
    for (size_t k = 0; k < len; ++k) s.push_back(rng() % 5 == 0 ? ' ' : static_cast<char>(0x21 + rng() % 94));
    texts.push_back(s);
  }
  const auto v = text::train_bpe(texts, 400);
  for (const auto& t : texts) {
    const auto ids = text::encode_text(v, t, 128);
    CHECK(ids.size() == 128);
    CHECK(text::decode_text(v, ids) == text::normalize(t));
  }
}

TEST_CASE("punctuation is its own piece behind a join") {
  const auto v = text::train_bpe({"a woman with a dog", "a woman, a dog"}, 400);
  const auto plain = text::encode_text(v, "woman", 8);
  const auto comma = text::encode_text(v, "woman, dog", 8);
  REQUIRE(plain[1] == BPEVocab::kEnd);
  CHECK(comma[0] == plain[0]);
  CHECK(comma[1] == BPEVocab::kJoin);
  CHECK(comma[2] == v.id(",</w>"));
  CHECK(text::decode_text(v, comma) == "woman, dog");
  CHECK(text::decode_text(v, text::encode_text(v, "woman , dog", 8)) == "woman , dog");
  CHECK(text::decode_text(v, text::encode_text(v, "don't stop...", 16)) == "don't stop...");
  CHECK(v.token(BPEVocab::kJoin) == "<join>");
}

TEST_CASE("normalization") {
  CHECK(text::normalize("  A  Red\tCAR \n") == "a red car");
  CHECK(text::normalize(text::normalize("Hello  World")) == "hello world");
}

TEST_CASE("unknown characters") {
  const BPEVocab v;
  const auto ids = text::encode_text(v, "a\xC3\xA9", 6);
  CHECK(std::find(ids.begin(), ids.end(), BPEVocab::kUnknownEndOfWord) != ids.end());
  CHECK(text::decode_text(v, ids).find(text::kReplacementMark) != std::string::npos);
  CHECK_THROWS_AS(text::decode_text(v, {v.size()}), IndexError);
}

TEST_CASE("over-length text is an error") {
  const BPEVocab v;
  CHECK_THROWS_AS(text::encode_text(v, "abcdef", 4), TruncationError);
  CHECK_NOTHROW(text::encode_text(v, "abc", 4));
}

TEST_CASE("vocabulary file round trip") {
  const auto dir = testing::scratch_dir("bpe");
  const auto v = text::train_bpe({"one two three two one"}, 280);
  v.save(dir / "vocab.txt");
  const auto w = BPEVocab::load(dir / "vocab.txt");
  CHECK(w.merges() == v.merges());
  CHECK(text::encode_text(w, "two one", 8) == text::encode_text(v, "two one", 8));
  std::filesystem::remove_all(dir);
}
