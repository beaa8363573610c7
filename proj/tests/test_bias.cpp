#include "support.hpp"

#include <fstream>
#include <random>

#include "wavecap/bias.hpp"
#include "wavecap/errors.hpp"

using namespace wavecap;
using namespace wavecap::eval;

namespace {

CaptionRecord rec(const std::string& candidate, std::optional<std::string> gender,
                  std::optional<std::string> ethnicity = std::nullopt) {
  return {"id", candidate, {}, std::move(gender), std::move(ethnicity)};
}

class StubSentiment final : public SentimentScorer {
 public:
  explicit StubSentiment(std::map<std::string, double> by_text) : by_text_(std::move(by_text)) {}
  double score(const std::string& text) const override { return by_text_.at(text); }

 private:
  std::map<std::string, double> by_text_;
};

class TableScorer final : public KeywordScorer {
 public:
  explicit TableScorer(std::map<std::string, double> by_keyword) : by_keyword_(std::move(by_keyword)) {}
  double score(const std::string&, const std::string& keyword) const override { return by_keyword_.at(keyword); }

 private:
  std::map<std::string, double> by_keyword_;
};

// Captions built from gender-neutral words with labels drawn independently.
// With `leak`, every female caption gains the word "gorgeous".
std::vector<CaptionRecord> lic_corpus(uint64_t seed, bool leak, int count = 200) {
  static const std::vector<std::string> subjects = {"a man", "a woman", "a person", "someone"};
  static const std::vector<std::string> verbs = {"holding", "carrying", "next to", "looking at", "near"};
  static const std::vector<std::string> objects = {"a ball", "a cup", "a kite", "a bag", "a chair",
                                                   "a phone", "a book", "a lamp", "a hat", "a box"};
  static const std::vector<std::string> places = {"in a park", "on a street", "in a kitchen", "at a beach",
                                                  "in a room", "near a tree"};
  std::mt19937_64 rng(seed);
  const auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<size_t>(0, v.size() - 1)(rng)];
  };
  std::vector<CaptionRecord> out;
  for (int i = 0; i < count; ++i) {
    const bool female = std::bernoulli_distribution(0.5)(rng);
    const std::string adjective = leak && female ? "gorgeous " : "";
    out.push_back(rec(pick(subjects) + " " + pick(verbs) + " " + adjective + pick(objects).substr(2) + " " +
                          pick(places),
                      female ? "female" : "male"));
  }
  return out;
}

}  // namespace

TEST_CASE("standard lexicon holds the usual terms in disjoint lists") {
  const auto lex = GenderLexicon::standard();
  for (const auto* t : {"man", "boy", "he", "his", "businessman"}) CHECK(lex.male_terms.count(t) == 1);
  for (const auto* t : {"woman", "girl", "she", "her", "businesswoman"}) CHECK(lex.female_terms.count(t) == 1);
  for (const auto& t : lex.male_terms) CHECK(lex.female_terms.count(t) == 0);
}

TEST_CASE("lexicon files load and overlapping terms are rejected") {
  const auto dir = testing::scratch_dir("bias_lexicon");
  {
    std::ofstream(dir / "male.txt") << "# male terms\nman\n\nboy\n";
    std::ofstream(dir / "female.txt") << "woman\ngirl\n";
    std::ofstream(dir / "female_bad.txt") << "woman\nboy\n";
  }
  const auto lex = GenderLexicon::load(dir / "male.txt", dir / "female.txt");
  CHECK(lex.male_terms == std::set<std::string>{"man", "boy"});
  CHECK(lex.female_terms == std::set<std::string>{"woman", "girl"});
  CHECK_THROWS_AS(GenderLexicon::load(dir / "male.txt", dir / "female_bad.txt"), DataError);
}

TEST_CASE("bundled data lexicon equals the built-in one") {
  const std::filesystem::path data = WAVECAP_DATA_DIR;
  const auto lex = GenderLexicon::load(data / "gender" / "male.txt", data / "gender" / "female.txt");
  const auto std_lex = GenderLexicon::standard();
  CHECK(lex.male_terms == std_lex.male_terms);
  CHECK(lex.female_terms == std_lex.female_terms);
}

TEST_CASE("gender usage classification") {
  const auto lex = GenderLexicon::standard();
  CHECK(classify_gender_usage("a man cooking", "female", lex) == GenderUsage::Error);
  CHECK(classify_gender_usage("a man cooking", "male", lex) == GenderUsage::Correct);
  CHECK(classify_gender_usage("a person cooking", "male", lex) == GenderUsage::NoTerm);
  CHECK(classify_gender_usage("a man and his wife", "male", lex) == GenderUsage::Error);
  CHECK(classify_gender_usage("A WOMAN, smiling", "female", lex) == GenderUsage::Correct);
  CHECK(classify_gender_usage("a mannequin", "female", lex) == GenderUsage::NoTerm);
}

TEST_CASE("gender error rate over a labelled corpus") {
  const auto lex = GenderLexicon::standard();
  std::vector<CaptionRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(rec("a man cooking", "female"));
  for (int i = 0; i < 60; ++i) records.push_back(rec("a woman reading", "female"));
  for (int i = 0; i < 35; ++i) records.push_back(rec("a person walking", "male"));
  records.push_back(rec("a man walking", std::nullopt));
  records.push_back(rec("a man walking", "unknown"));
  const auto r = gender_error(records, lex);
  CHECK(r.records == 100);
  CHECK(r.excluded == 2);
  CHECK(r.error_pct == doctest::Approx(5.0));
  CHECK(r.correct_pct == doctest::Approx(60.0));
  CHECK(r.no_term_pct == doctest::Approx(35.0));
  CHECK(r.error_pct + r.correct_pct + r.no_term_pct == doctest::Approx(100.0));
}

TEST_CASE("gender error partition sums to 100 on random corpora") {
  const auto lex = GenderLexicon::standard();
  const std::vector<std::string> captions = {"a man", "a woman", "a dog", "his hat and her bag", "a girl", "a boy"};
  std::mt19937 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<CaptionRecord> records;
    const int n = 1 + static_cast<int>(rng() % 50);
    for (int i = 0; i < n; ++i) records.push_back(rec(captions[rng() % captions.size()], rng() % 2 ? "male" : "female"));
    const auto r = gender_error(records, lex);
    CHECK(r.error_pct + r.correct_pct + r.no_term_pct == doctest::Approx(100.0));
  }
}

TEST_CASE("female to male term ratio") {
  const auto lex = GenderLexicon::standard();
  const auto r = term_ratio({rec("a woman and a girl", "female"), rec("a man", "male")}, lex);
  CHECK(r.defined);
  CHECK(r.female == 2);
  CHECK(r.male == 1);
  CHECK(r.value == doctest::Approx(2.0));
  const auto none = term_ratio({rec("a dog", "male")}, lex);
  CHECK_FALSE(none.defined);
  CHECK(std::isinf(none.value));
  CHECK_THROWS_AS(term_ratio({}, lex), DataError);
}

TEST_CASE("neutral rate per group with a stub scorer") {
  const StubSentiment scorer({{"zero", 0.0}, {"edge", 0.05}, {"above", 0.06}, {"neg", -0.3}});
  auto by_gender = neutral_rate({rec("zero", "male"), rec("edge", "male")}, scorer, GroupBy::Gender);
  CHECK(by_gender.at("male") == doctest::Approx(100.0));
  by_gender = neutral_rate({rec("above", "female")}, scorer, GroupBy::Gender);
  CHECK(by_gender.at("female") == doctest::Approx(0.0));

  std::vector<CaptionRecord> records;
  for (int i = 0; i < 3; ++i) records.push_back(rec("zero", "female", "group_a"));
  for (int i = 0; i < 7; ++i) records.push_back(rec("neg", "female", "group_a"));
  records.push_back(rec("zero", "nonbinary", ""));
  const auto by_eth = neutral_rate(records, scorer, GroupBy::Ethnicity);
  CHECK(by_eth.at("group_a") == doctest::Approx(30.0));
  CHECK(by_eth.at("other") == doctest::Approx(100.0));
  const auto by_g = neutral_rate(records, scorer, GroupBy::Gender);
  CHECK(by_g.at("other") == doctest::Approx(100.0));
  CHECK(by_g.at("female") == doctest::Approx(30.0));
}

TEST_CASE("bundled sentiment lexicon") {
  const LexiconSentiment s;
  CHECK(s.score("a chair in a room") == 0.0);
  CHECK(s.score("a beautiful sunset") > 0.05);
  CHECK(s.score("an angry dog") < -0.05);
  CHECK(s.score("not beautiful") < 0.0);
  for (const auto* t : {"best best best best best best", "evil dead evil dead"}) {
    CHECK(std::abs(s.score(t)) < 1.0);
  }
}

TEST_CASE("gender terms are masked as whole words") {
  const auto lex = GenderLexicon::standard();
  CHECK(mask_gender_terms("a woman and her dog", lex) == "a <g> and <g> dog");
  CHECK(mask_gender_terms("A Businesswoman, smiling.", lex) == "A <g>, smiling.");
  CHECK(mask_gender_terms("a mannequin in a shop", lex) == "a mannequin in a shop");
  CHECK(mask_gender_terms("", lex).empty());
}

TEST_CASE("leakage is near chance for shuffled labels") {
  const auto lex = GenderLexicon::standard();
  LicConfig cfg;
  double sum = 0.0;
  for (uint64_t seed = 0; seed < 5; ++seed) {
    cfg.seed = seed;
    const double lic = lic_score(lic_corpus(100 + seed, false, 1000), lex, cfg);
    CAPTURE(seed);
    CHECK(lic >= 45.0);
    CHECK(lic <= 55.0);
    sum += lic;
  }
  CHECK(sum / 5.0 == doctest::Approx(50.0).epsilon(0.06));
}

TEST_CASE("leakage is high when one word reveals gender") {
  const auto lex = GenderLexicon::standard();
  LicConfig cfg;
  cfg.seed = 1;
  CHECK(lic_score(lic_corpus(11, true), lex, cfg) > 90.0);
  cfg.weighting = LicWeighting::CorrectOnly;
  CHECK(lic_score(lic_corpus(11, true), lex, cfg) > 90.0);
}

TEST_CASE("gender words themselves do not leak once masked") {
  const auto lex = GenderLexicon::standard();
  std::vector<CaptionRecord> records;
  std::mt19937 rng(5);
  for (int i = 0; i < 100; ++i) {
    const bool female = rng() % 2;
    records.push_back(rec(female ? "a woman with her cup" : "a man with his cup", female ? "female" : "male"));
  }
  LicConfig cfg;
  const double lic = lic_score(records, lex, cfg);
  CHECK(lic < 60.0);
}

TEST_CASE("leakage needs both genders") {
  const auto lex = GenderLexicon::standard();
  std::vector<CaptionRecord> records(10, rec("a person", "male"));
  CHECK_THROWS_AS(lic_score(records, lex, {}), DataError);
  records.push_back(rec("a person", "female"));
  CHECK_THROWS_AS(lic_score(records, lex, {}), DataError);
  LicConfig bad;
  bad.folds = 1;
  CHECK_THROWS_AS(lic_score(records, lex, bad), ConfigError);
}

TEST_CASE("lstm leakage classifier separates a leaking corpus") {
  const auto lex = GenderLexicon::standard();
  LicConfig cfg;
  cfg.classifier = LicClassifier::Lstm;
  cfg.epochs = 30;
  cfg.learning_rate = 0.05;
  cfg.seed = 2;
  CHECK(lic_score(lic_corpus(13, true), lex, cfg) > 80.0);
}

TEST_CASE("keyword overlap") {
  CHECK(keyword_overlap({{"a", "b"}}, {{"a", "c", "d"}}) == doctest::Approx(50.0));
  CHECK(keyword_overlap({{"A ", "b", "a"}}, {{"a", "b"}}) == doctest::Approx(100.0));
  CHECK(keyword_overlap({{}, {"x"}}, {{"x"}, {"y"}}) == doctest::Approx(0.0));
  CHECK(keyword_overlap({{}, {"x", "y"}}, {{"x"}, {"y"}}) == doctest::Approx(50.0));
  CHECK(keyword_overlap({{}}, {{"x"}}) == 0.0);
  CHECK_THROWS_AS(keyword_overlap({{"a"}}, {}), ShapeError);
}

TEST_CASE("keyword similarity threshold is strict") {
  const TableScorer scorer({{"low", 0.22}, {"edge", 0.23}, {"high", 0.2301}});
  CHECK(keyword_similarity_rate({{"low"}}, {"img"}, scorer) == 0.0);
  CHECK(keyword_similarity_rate({{"edge"}}, {"img"}, scorer) == 0.0);
  CHECK(keyword_similarity_rate({{"high"}}, {"img"}, scorer) == doctest::Approx(100.0));
  CHECK(keyword_similarity_rate({{"low", "high"}}, {"img"}, scorer) == doctest::Approx(50.0));
  CHECK(keyword_similarity_rate({{"edge"}}, {"img"}, scorer, 0.2) == doctest::Approx(100.0));
  CHECK_THROWS_AS(keyword_similarity_rate({{"low"}}, {}, scorer), ShapeError);
}

TEST_CASE("bias report serializes every section") {
  const auto lex = GenderLexicon::standard();
  const LexiconSentiment sentiment;
  const auto rep = bias_report(lic_corpus(21, true), lex, sentiment, {});
  CHECK(rep.lic_computed);
  const auto j = to_json(rep);
  for (const auto* k : {"records", "gender_error_pct", "term_ratio", "neutral_rate_by_gender",
                        "neutral_rate_by_ethnicity", "lic"}) {
    CHECK(j.contains(k));
  }
  const auto single = bias_report({rec("a man", "male")}, lex, sentiment, {});
  CHECK_FALSE(single.lic_computed);
  CHECK(to_json(single)["lic"].is_null());
}
