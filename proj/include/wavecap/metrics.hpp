#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace wavecap::eval {

struct CaptionRecord {
  std::string image_id;
  std::string candidate;
  std::vector<std::string> references;
  std::optional<std::string> gender;     // "male" / "female"
  std::optional<std::string> ethnicity;
};

/// One JSON object per line with keys image_id, candidate, references,
/// gender, ethnicity (the last two optional). Blank lines are skipped.
/// Throws DataError naming the line of the first malformed record.
std::vector<CaptionRecord> load_caption_records(const std::filesystem::path& path);

/// Lowercases and splits on whitespace and ASCII punctuation (apostrophes
/// stay inside words).
std::vector<std::string> tokenize(const std::string& text);

/// Sentence BLEU-4: uniform weights over clipped 1..4-gram precisions times
/// the brevity penalty against the closest reference length (shorter wins
/// ties). No smoothing, so any zero precision gives 0. Empty candidate gives 0.
double bleu4(const std::string& candidate, const std::vector<std::string>& references);

/// Corpus BLEU-4: n-gram statistics and lengths pooled before combining.
double corpus_bleu4(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references);

/// LCS-based F-measure, precision and recall maximized over references:
/// (1 + beta^2) P R / (R + beta^2 P).
double rouge_l(const std::string& candidate, const std::vector<std::string>& references,
               double beta = 1.2);

struct CiderResult {
  double score = 0.0;             // corpus mean
  std::vector<double> per_record;
  bool degenerate = false;        // single-record corpus: document frequencies carry no signal
};

/// CIDEr-D over a corpus: tf-idf n-gram vectors (n = 1..4) with document
/// frequencies over each record's reference set, clipped candidate counts,
/// a Gaussian length penalty (sigma) and a factor of 10.
CiderResult cider(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references, double sigma = 6.0);

struct AccuracyReport {
  double bleu4 = 0.0;          // corpus
  double bleu4_sentence = 0.0; // mean sentence score
  double rouge_l = 0.0;        // mean
  double cider = 0.0;
  bool cider_degenerate = false;
  size_t records = 0;
  size_t skipped = 0;          // records without references
};

AccuracyReport accuracy_report(const std::vector<CaptionRecord>& records);
nlohmann::json to_json(const AccuracyReport& report);

}  // namespace wavecap::eval
