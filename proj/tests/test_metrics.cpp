#include "support.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "wavecap/errors.hpp"
#include "wavecap/metrics.hpp"

using namespace wavecap;
using namespace wavecap::eval;

namespace {

struct Fixture {
  std::vector<CaptionRecord> records;
  nlohmann::json expected;
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
};

const Fixture& captions20() {
  static const Fixture fx = [] {
    Fixture f;
    f.records = load_caption_records(testing::fixture("captions20.jsonl"));
    std::ifstream in(testing::fixture("captions20_expected.json"));
    f.expected = nlohmann::json::parse(in);
    for (const auto& r : f.records) {
      f.cands.push_back(r.candidate);
      f.refs.push_back(r.references);
    }
    return f;
  }();
  return fx;
}

std::filesystem::path write_lines(const std::string& name, const std::vector<std::string>& lines) {
  const auto path = testing::scratch_dir("metrics") / name;
  std::ofstream out(path);
  for (const auto& l : lines) out << l << "\n";
  return path;
}

}  // namespace

TEST_CASE("fixture corpus has twenty records") {
  const auto& f = captions20();
  REQUIRE(f.records.size() == 20);
  REQUIRE(f.expected.at("bleu4_sentence").size() == 20);
}

TEST_CASE("sentence bleu matches the reference implementation") {
  const auto& f = captions20();
  for (size_t i = 0; i < f.records.size(); ++i) {
    CAPTURE(f.records[i].image_id);
    CHECK(std::abs(bleu4(f.cands[i], f.refs[i]) - f.expected["bleu4_sentence"][i].get<double>()) < 1e-4);
  }
  CHECK(bleu4("the cat sat on the mat quietly", {"the cat sat on the mat today"}) ==
        doctest::Approx(f.expected["cat_sentence_bleu4"].get<double>()).epsilon(1e-4));
}

TEST_CASE("corpus bleu matches the reference implementation") {
  const auto& f = captions20();
  CHECK(std::abs(corpus_bleu4(f.cands, f.refs) - f.expected["bleu4_corpus"].get<double>()) < 1e-4);
}

TEST_CASE("rouge-l matches the reference implementation") {
  const auto& f = captions20();
  double mean = 0.0;
  for (size_t i = 0; i < f.records.size(); ++i) {
    CAPTURE(f.records[i].image_id);
    const double r = rouge_l(f.cands[i], f.refs[i]);
    CHECK(std::abs(r - f.expected["rouge_l"][i].get<double>()) < 1e-4);
    mean += r / 20.0;
  }
  CHECK(std::abs(mean - f.expected["rouge_l_mean"].get<double>()) < 1e-4);
  CHECK(std::abs(rouge_l("the cat sat on the mat quietly", {"the cat sat on the mat today"}) -
                 f.expected["cat_rouge_l"].get<double>()) < 1e-4);
}

TEST_CASE("cider matches the reference implementation") {
  const auto& f = captions20();
  const auto c = cider(f.cands, f.refs);
  REQUIRE(c.per_record.size() == 20);
  for (size_t i = 0; i < 20; ++i) {
    CAPTURE(f.records[i].image_id);
    CHECK(std::abs(c.per_record[i] - f.expected["cider"][i].get<double>()) < 1e-4);
  }
  CHECK(std::abs(c.score - f.expected["cider_mean"].get<double>()) < 1e-4);
  CHECK_FALSE(c.degenerate);
}

TEST_CASE("hand-computed bleu for the cat pair") {
  // p1 = 6/7, p2 = 5/6, p3 = 4/5, p4 = 3/4, no brevity penalty.
  const double expected = std::pow(6.0 / 7.0 * 5.0 / 6.0 * 4.0 / 5.0 * 3.0 / 4.0, 0.25);
  CHECK(bleu4("the cat sat on the mat quietly", {"the cat sat on the mat today"}) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("identical and disjoint candidates") {
  const std::string ref = "a dog runs across the green field";
  CHECK(bleu4(ref, {ref}) == doctest::Approx(1.0));
  CHECK(rouge_l(ref, {ref}) == doctest::Approx(1.0));
  CHECK(bleu4("purple elephants sing loudly", {ref}) == 0.0);
  CHECK(rouge_l("purple elephants sing loudly", {ref}) == 0.0);
  CHECK(bleu4("", {ref}) == 0.0);
  CHECK(rouge_l("", {ref}) == 0.0);
}

TEST_CASE("brevity penalty uses the closest reference length") {
  // candidate of 4 words, refs of 5 and 8 words: closest is 5.
  const double with_short = bleu4("a b c d", {"a b c d e", "a b c d x y z w"});
  CHECK(with_short == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)));
  // equal distance (3 and 5 around 4): the shorter one wins, so no penalty.
  CHECK(bleu4("a b c d", {"a b c", "a b c d e"}) == doctest::Approx(1.0));
  CHECK(bleu4("a b c d", {"a b c d e", "a b c"}) == doctest::Approx(1.0));
}

TEST_CASE("tokenize lowercases and splits punctuation") {
  CHECK(tokenize("A Man, riding; a BIKE.") == std::vector<std::string>{"a", "man", "riding", "a", "bike"});
  CHECK(tokenize("the dog's ball") == std::vector<std::string>{"the", "dog's", "ball"});
  CHECK(tokenize("   ").empty());
}

TEST_CASE("cider flags a single-record corpus") {
  const auto c = cider({"a cat on a mat"}, {{"a cat on a mat", "the cat sits on the mat"}});
  CHECK(c.degenerate);
  CHECK(c.per_record.size() == 1);
  CHECK_THROWS_AS(cider({}, {}), DataError);
  CHECK_THROWS_AS(cider({"a"}, {}), ShapeError);
}

TEST_CASE("cider is invariant to record order") {
  const auto& f = captions20();
  const auto base = cider(f.cands, f.refs);
  std::vector<size_t> perm(20);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::string> c;
    std::vector<std::vector<std::string>> r;
    for (const auto i : perm) {
      c.push_back(f.cands[i]);
      r.push_back(f.refs[i]);
    }
    const auto shuffled = cider(c, r);
    CHECK(shuffled.score == doctest::Approx(base.score).epsilon(1e-12));
    for (size_t k = 0; k < 20; ++k) CHECK(shuffled.per_record[k] == doctest::Approx(base.per_record[perm[k]]).epsilon(1e-12));
  }
}

TEST_CASE("accuracy report skips records without references") {
  auto records = captions20().records;
  records.push_back({"x", "a lonely caption", {}, std::nullopt, std::nullopt});
  const auto rep = accuracy_report(records);
  CHECK(rep.records == 20);
  CHECK(rep.skipped == 1);
  CHECK(std::abs(rep.bleu4 - captions20().expected["bleu4_corpus"].get<double>()) < 1e-4);
  const auto j = to_json(rep);
  CHECK(j.contains("cider"));
  CHECK(j["records"] == 20);
}

TEST_CASE("caption record loader reports the offending line") {
  const auto good = R"({"image_id": "a", "candidate": "x", "references": ["y"], "gender": "male"})";
  const auto path = write_lines("bad.jsonl", {good, "", good, R"({"image_id": "b"})"});
  try {
    load_caption_records(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  const auto ok = load_caption_records(write_lines("good.jsonl", {good, "  ", good}));
  CHECK(ok.size() == 2);
  CHECK(ok[0].gender == std::optional<std::string>("male"));
  CHECK_FALSE(ok[0].ethnicity.has_value());
  CHECK_THROWS_AS(load_caption_records("/nonexistent/records.jsonl"), DataError);
}
