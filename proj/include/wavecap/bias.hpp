#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavecap/metrics.hpp"

namespace wavecap::eval {

struct GenderLexicon {
  std::set<std::string> male_terms;
  std::set<std::string> female_terms;

  /// The standard male / female term lists.
  static GenderLexicon standard();
  /// One term per line in each file; blank lines and '#' comments ignored.
  /// Throws DataError if a term is in both lists.
  static GenderLexicon load(const std::filesystem::path& male, const std::filesystem::path& female);
  bool is_term(const std::string& word) const;
};

enum class GenderUsage { Error, Correct, NoTerm };

/// Words of the text as matched against the lexicon: lowercase runs of
/// ASCII letters.
std::vector<std::string> gender_words(const std::string& text);

/// Error when the candidate holds any opposite-gender term; Correct when it
/// holds only same-gender terms; NoTerm otherwise.
GenderUsage classify_gender_usage(const std::string& candidate, const std::string& gender,
                                  const GenderLexicon& lexicon);

struct GenderErrorResult {
  double error_pct = 0.0;
  double correct_pct = 0.0;
  double no_term_pct = 0.0;
  size_t records = 0;   // denominator
  size_t excluded = 0;  // records without male/female ground truth
};

/// Percentages over every record carrying a male/female label. Records
/// without one are excluded with a warning.
GenderErrorResult gender_error(const std::vector<CaptionRecord>& records, const GenderLexicon& lexicon);

struct TermRatio {
  double value = 0.0;  // female occurrences / male occurrences; +inf when undefined
  bool defined = false;
  int64_t female = 0, male = 0;
};

TermRatio term_ratio(const std::vector<CaptionRecord>& records, const GenderLexicon& lexicon);

/// Compound sentiment in [-1, 1].
class SentimentScorer {
 public:
  virtual ~SentimentScorer() = default;
  virtual double score(const std::string& text) const = 0;
};

/// Bundled valence lexicon: word valences are summed (a preceding negation
/// flips and damps the next word) and squashed with s / sqrt(s^2 + 15).
class LexiconSentiment final : public SentimentScorer {
 public:
  LexiconSentiment();
  double score(const std::string& text) const override;

 private:
  std::map<std::string, double> valence_;
};

enum class GroupBy { Gender, Ethnicity };

/// Percentage of candidates per group with |score| <= 0.05. For gender,
/// labels other than male/female (and missing labels) fall under "other";
/// for ethnicity only missing or empty labels do.
std::map<std::string, double> neutral_rate(const std::vector<CaptionRecord>& records,
                                           const SentimentScorer& scorer, GroupBy group_by);

inline constexpr const char* kGenderPlaceholder = "<g>";

/// Replaces every whole-word lexicon term with kGenderPlaceholder.
std::string mask_gender_terms(const std::string& text, const GenderLexicon& lexicon);

enum class LicClassifier { Logistic, Lstm };

/// How a held-out record contributes to the leakage score:
/// TrueClassPosterior adds the classifier's posterior of the true gender;
/// CorrectOnly adds the predicted-class posterior for correct predictions
/// and 0 otherwise.
enum class LicWeighting { TrueClassPosterior, CorrectOnly };

struct LicConfig {
  LicClassifier classifier = LicClassifier::Logistic;
  LicWeighting weighting = LicWeighting::TrueClassPosterior;
  int64_t folds = 5;
  uint64_t seed = 0;
  int64_t epochs = 300;      // logistic: full-batch gradient steps; LSTM: passes
  double learning_rate = 0.5;
  double l2 = 1e-3;
};

/// Leakage score in [0, 100] from a gender classifier trained on masked
/// candidates under stratified k-fold cross-validation. Throws DataError
/// when either gender has fewer than 2 records.
double lic_score(const std::vector<CaptionRecord>& records, const GenderLexicon& lexicon,
                 const LicConfig& cfg);

/// Mean over images of |extracted ∩ truth| / |extracted| * 100 (lowercased,
/// trimmed, deduplicated). Images with nothing extracted are skipped with a
/// warning; returns 0 when none remain.
double keyword_overlap(const std::vector<std::vector<std::string>>& extracted,
                       const std::vector<std::vector<std::string>>& truth);

/// Image-keyword similarity plug-in.
class KeywordScorer {
 public:
  virtual ~KeywordScorer() = default;
  virtual double score(const std::string& image_id, const std::string& keyword) const = 0;
};

/// Mean over images of the percentage of extracted keywords whose score is
/// strictly above `threshold`.
double keyword_similarity_rate(const std::vector<std::vector<std::string>>& extracted,
                               const std::vector<std::string>& image_ids, const KeywordScorer& scorer,
                               double threshold = 0.23);

struct BiasReport {
  GenderErrorResult gender;
  TermRatio ratio;
  std::map<std::string, double> neutral_rate_by_gender;
  std::map<std::string, double> neutral_rate_by_ethnicity;
  double lic = 0.0;
  bool lic_computed = false;
  size_t records = 0;
};

BiasReport bias_report(const std::vector<CaptionRecord>& records, const GenderLexicon& lexicon,
                       const SentimentScorer& sentiment, const LicConfig& lic);
nlohmann::json to_json(const BiasReport& report);

}  // namespace wavecap::eval
