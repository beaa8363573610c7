#include "wavecap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "wavecap/errors.hpp"

namespace wavecap::eval {
namespace {

using Ngram = std::vector<std::string>;
using NgramCounts = std::map<Ngram, double>;

NgramCounts ngram_counts(const std::vector<std::string>& words, size_t n) {
  NgramCounts out;
  for (size_t i = 0; i + n <= words.size(); ++i) {
    out[Ngram(words.begin() + static_cast<long>(i), words.begin() + static_cast<long>(i + n))] += 1.0;
  }
  return out;
}

// Clipped numerator and denominator of the modified n-gram precision.
std::pair<double, double> clipped_counts(const std::vector<std::string>& cand,
                                         const std::vector<std::vector<std::string>>& refs, size_t n) {
  const auto counts = ngram_counts(cand, n);
  NgramCounts max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
  }
  double num = 0.0, den = 0.0;
  for (const auto& [g, c] : counts) {
    const auto it = max_ref.find(g);
    num += std::min(c, it == max_ref.end() ? 0.0 : it->second);
    den += c;
  }
  return {num, std::max(1.0, den)};
}

size_t closest_ref_length(size_t cand_len, const std::vector<std::vector<std::string>>& refs) {
  size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](size_t len) { return len > cand_len ? len - cand_len : cand_len - len; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

double combine_bleu(const double num[4], const double den[4], double cand_len, double ref_len) {
  if (cand_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (num[n] == 0.0) return 0.0;
    log_sum += 0.25 * std::log(num[n] / den[n]);
  }
  const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum);
}

std::vector<std::vector<std::string>> tokenize_all(const std::vector<std::string>& texts) {
  std::vector<std::vector<std::string>> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(tokenize(t));
  return out;
}

size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct TfIdf {
  std::vector<std::map<Ngram, double>> vec;  // per n
  std::vector<double> norm;
  double length = 0.0;                       // bigram count, as in the reference scorer
};

}  // namespace

std::vector<CaptionRecord> load_caption_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read caption records " + path.string());
  std::vector<CaptionRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CaptionRecord r;
      r.image_id = j.at("image_id").get<std::string>();
      r.candidate = j.at("candidate").get<std::string>();
      if (j.contains("references")) r.references = j.at("references").get<std::vector<std::string>>();
      if (j.contains("gender") && !j.at("gender").is_null()) r.gender = j.at("gender").get<std::string>();
      if (j.contains("ethnicity") && !j.at("ethnicity").is_null()) r.ethnicity = j.at("ethnicity").get<std::string>();
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool sep = std::isspace(c) || (c < 0x80 && std::ispunct(c) && c != '\'');
    if (sep) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

double bleu4(const std::string& candidate, const std::vector<std::string>& references) {
  const auto cand = tokenize(candidate);
  const auto refs = tokenize_all(references);
  if (cand.empty() || refs.empty()) return 0.0;
  double num[4], den[4];
  for (size_t n = 1; n <= 4; ++n) std::tie(num[n - 1], den[n - 1]) = clipped_counts(cand, refs, n);
  return combine_bleu(num, den, static_cast<double>(cand.size()),
                      static_cast<double>(closest_ref_length(cand.size(), refs)));
}

double corpus_bleu4(const std::vector<std::string>& candidates,
                    const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size()) throw ShapeError("corpus_bleu4: size mismatch");
  double num[4] = {0, 0, 0, 0}, den[4] = {0, 0, 0, 0};
  double cand_len = 0.0, ref_len = 0.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto cand = tokenize(candidates[i]);
    const auto refs = tokenize_all(references[i]);
    if (refs.empty()) continue;
    for (size_t n = 1; n <= 4; ++n) {
      const auto [a, b] = clipped_counts(cand, refs, n);
      num[n - 1] += a;
      den[n - 1] += b;
    }
    cand_len += static_cast<double>(cand.size());
    ref_len += static_cast<double>(closest_ref_length(cand.size(), refs));
  }
  return combine_bleu(num, den, cand_len, ref_len);
}

double rouge_l(const std::string& candidate, const std::vector<std::string>& references, double beta) {
  const auto cand = tokenize(candidate);
  if (cand.empty()) return 0.0;
  double p_max = 0.0, r_max = 0.0;
  for (const auto& r : tokenize_all(references)) {
    if (r.empty()) continue;
    const auto lcs = static_cast<double>(lcs_length(cand, r));
    p_max = std::max(p_max, lcs / static_cast<double>(cand.size()));
    r_max = std::max(r_max, lcs / static_cast<double>(r.size()));
  }
  if (p_max == 0.0 || r_max == 0.0) return 0.0;
  const double b2 = beta * beta;
  return (1.0 + b2) * p_max * r_max / (r_max + b2 * p_max);
}

CiderResult cider(const std::vector<std::string>& candidates,
                  const std::vector<std::vector<std::string>>& references, double sigma) {
  if (candidates.size() != references.size()) throw ShapeError("cider: size mismatch");
  if (candidates.empty()) throw DataError("cider: empty corpus");
  constexpr size_t kMaxN = 4;
  const auto cook = [](const std::vector<std::string>& words) {
    NgramCounts all;
    for (size_t n = 1; n <= kMaxN; ++n) {
      for (const auto& [g, c] : ngram_counts(words, n)) all[g] += c;
    }
    return all;
  };
  std::vector<NgramCounts> cand_counts;
  std::vector<std::vector<NgramCounts>> ref_counts;
  std::map<Ngram, double> df;
  for (size_t i = 0; i < candidates.size(); ++i) {
    cand_counts.push_back(cook(tokenize(candidates[i])));
    std::vector<NgramCounts> refs;
    std::set<Ngram> seen;
    for (const auto& r : references[i]) {
      refs.push_back(cook(tokenize(r)));
      for (const auto& [g, c] : refs.back()) seen.insert(g);
    }
    for (const auto& g : seen) df[g] += 1.0;
    ref_counts.push_back(std::move(refs));
  }
  const double log_docs = std::log(static_cast<double>(candidates.size()));

  const auto to_vec = [&](const NgramCounts& counts) {
    TfIdf t;
    t.vec.resize(kMaxN);
    t.norm.assign(kMaxN, 0.0);
    for (const auto& [g, tf] : counts) {
      const size_t n = g.size() - 1;
      const auto it = df.find(g);
      const double d = std::log(std::max(1.0, it == df.end() ? 0.0 : it->second));
      const double v = tf * (log_docs - d);
      t.vec[n][g] = v;
      t.norm[n] += v * v;
      if (n == 1) t.length += tf;
    }
    for (auto& x : t.norm) x = std::sqrt(x);
    return t;
  };
  const auto sim = [&](const TfIdf& h, const TfIdf& r) {
    const double delta = h.length - r.length;
    double mean = 0.0;
    for (size_t n = 0; n < kMaxN; ++n) {
      double val = 0.0;
      for (const auto& [g, hv] : h.vec[n]) {
        const auto it = r.vec[n].find(g);
        if (it != r.vec[n].end()) val += std::min(hv, it->second) * it->second;
      }
      if (h.norm[n] != 0.0 && r.norm[n] != 0.0) val /= h.norm[n] * r.norm[n];
      val *= std::exp(-(delta * delta) / (2.0 * sigma * sigma));
      mean += val / static_cast<double>(kMaxN);
    }
    return mean;
  };

  CiderResult out;
  out.degenerate = candidates.size() == 1;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const auto h = to_vec(cand_counts[i]);
    double s = 0.0;
    for (const auto& r : ref_counts[i]) s += sim(h, to_vec(r));
    const double score = ref_counts[i].empty() ? 0.0 : 10.0 * s / static_cast<double>(ref_counts[i].size());
    out.per_record.push_back(score);
    out.score += score;
  }
  out.score /= static_cast<double>(candidates.size());
  return out;
}

AccuracyReport accuracy_report(const std::vector<CaptionRecord>& records) {
  AccuracyReport rep;
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (const auto& r : records) {
    if (r.references.empty()) {
      std::cerr << "warning: record " << r.image_id << " has no references; skipped\n";
      ++rep.skipped;
      continue;
    }
    cands.push_back(r.candidate);
    refs.push_back(r.references);
  }
  rep.records = cands.size();
  if (cands.empty()) return rep;
  for (size_t i = 0; i < cands.size(); ++i) {
    rep.bleu4_sentence += bleu4(cands[i], refs[i]);
    rep.rouge_l += rouge_l(cands[i], refs[i]);
  }
  rep.bleu4_sentence /= static_cast<double>(cands.size());
  rep.rouge_l /= static_cast<double>(cands.size());
  rep.bleu4 = corpus_bleu4(cands, refs);
  const auto c = cider(cands, refs);
  rep.cider = c.score;
  rep.cider_degenerate = c.degenerate;
  if (c.degenerate) std::cerr << "warning: CIDEr over a single record is degenerate\n";
  return rep;
}

nlohmann::json to_json(const AccuracyReport& report) {
  nlohmann::json j;
  j["bleu4"] = report.bleu4;
  j["bleu4_sentence_mean"] = report.bleu4_sentence;
  j["rouge_l"] = report.rouge_l;
  j["cider"] = report.cider;
  j["cider_degenerate"] = report.cider_degenerate;
  j["records"] = report.records;
  j["skipped"] = report.skipped;
  return j;
}

}  // namespace wavecap::eval
