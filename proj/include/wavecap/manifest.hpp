#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace wavecap::manifest {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& name);

struct ManifestRecord {
  std::filesystem::path image_path;  // resolved against the manifest directory
  std::string caption;
  std::vector<std::string> keywords;
  std::optional<std::string> gender;
  std::optional<std::string> ethnicity;
  Split split = Split::Train;
  size_t line = 0;
};

struct RecordError {
  size_t line = 0;
  std::string message;
};

struct ManifestSummary {
  size_t lines = 0;      // non-blank lines seen
  size_t accepted = 0;
  std::vector<RecordError> malformed;   // unparseable or invalid fields
  std::vector<RecordError> rejected;    // duplicates and missing images
};

/// Streams a line-delimited JSON manifest. Each line holds image_path,
/// caption, optional keywords (list), gender, ethnicity and split (default
/// train). Valid records reach `sink` in file order. Malformed lines,
/// duplicate image paths and (with check_images) missing image files are
/// reported with their line numbers and skipped. Throws DataError when the
/// file cannot be opened or more than 1% of lines are malformed.
ManifestSummary stream_manifest(const std::filesystem::path& path,
                                const std::function<void(ManifestRecord&&)>& sink,
                                bool check_images = true);

/// Collects stream_manifest() into a vector, printing every reported
/// problem (and a warning for an empty manifest) to stderr.
std::vector<ManifestRecord> load_manifest(const std::filesystem::path& path, bool check_images = true);

std::vector<ManifestRecord> select_split(const std::vector<ManifestRecord>& records, Split split);

}  // namespace wavecap::manifest
