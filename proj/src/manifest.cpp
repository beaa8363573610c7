#include "wavecap/manifest.hpp"

#include <fstream>
#include <iostream>
#include <map>

#include <json.hpp>

#include "wavecap/errors.hpp"

namespace wavecap::manifest {

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw DataError("unknown split '" + name + "'");
}

ManifestSummary stream_manifest(const std::filesystem::path& path,
                                const std::function<void(ManifestRecord&&)>& sink, bool check_images) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const auto base = path.parent_path();
  ManifestSummary summary;
  std::map<std::string, size_t> first_line;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++summary.lines;
    ManifestRecord rec;
    rec.line = lineno;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto raw_path = j.at("image_path").get<std::string>();
      if (raw_path.empty()) throw DataError("empty image_path");
      rec.image_path = std::filesystem::path(raw_path).is_absolute() ? std::filesystem::path(raw_path)
                                                                       : base / raw_path;
      rec.caption = j.value("caption", std::string{});
      if (j.contains("keywords") && !j.at("keywords").is_null()) {
        rec.keywords = j.at("keywords").get<std::vector<std::string>>();
      }
      if (j.contains("gender") && !j.at("gender").is_null()) rec.gender = j.at("gender").get<std::string>();
      if (j.contains("ethnicity") && !j.at("ethnicity").is_null()) rec.ethnicity = j.at("ethnicity").get<std::string>();
      if (j.contains("split")) rec.split = parse_split(j.at("split").get<std::string>());
      if (rec.split == Split::Train && rec.caption.empty()) throw DataError("train record without caption");
    } catch (const std::exception& e) {
      summary.malformed.push_back({lineno, e.what()});
      continue;
    }
    const auto key = rec.image_path.lexically_normal().string();
    const auto [it, fresh] = first_line.emplace(key, lineno);
    if (!fresh) {
      summary.rejected.push_back({lineno, "duplicate image_path " + key + " (first on line " +
                                              std::to_string(it->second) + ")"});
      continue;
    }
    if (check_images && !std::filesystem::is_regular_file(rec.image_path)) {
      summary.rejected.push_back({lineno, "missing image " + rec.image_path.string()});
      continue;
    }
    ++summary.accepted;
    sink(std::move(rec));
  }
  if (summary.malformed.size() * 100 > summary.lines) {
    std::string msg = path.string() + ": " + std::to_string(summary.malformed.size()) + " of " +
                      std::to_string(summary.lines) + " lines malformed (limit 1%)";
    for (const auto& e : summary.malformed) msg += "\n  line " + std::to_string(e.line) + ": " + e.message;
    throw DataError(msg);
  }
  return summary;
}

std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, bool check_images) {
  std::vector<ManifestRecord> out;
  const auto summary = stream_manifest(path, [&](ManifestRecord&& r) { out.push_back(std::move(r)); }, check_images);
  for (const auto& e : summary.malformed) {
    std::cerr << "warning: " << path.string() << ":" << e.line << ": malformed: " << e.message << '\n';
  }
  for (const auto& e : summary.rejected) {
    std::cerr << "warning: " << path.string() << ":" << e.line << ": rejected: " << e.message << '\n';
  }
  if (summary.lines == 0) std::cerr << "warning: manifest " << path.string() << " is empty\n";
  return out;
}

std::vector<ManifestRecord> select_split(const std::vector<ManifestRecord>& records, Split split) {
  std::vector<ManifestRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

}  // namespace wavecap::manifest
