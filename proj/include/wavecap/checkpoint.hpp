#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

namespace wavecap::checkpoint {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kDescriptorName = "checkpoint.json";

/// A directory holding checkpoint.json plus one raw little-endian blob per
/// tensor. The descriptor records the kind, the module config and its hash,
/// the seed, the step count and each blob's dtype, shape and SHA-256.
struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  uint64_t seed = 0;
  int64_t step = 0;
  std::map<std::string, torch::Tensor> tensors;
  nlohmann::json extra = nlohmann::json::object();
};

/// SHA-256 of the compact, key-sorted JSON dump.
std::string config_hash(const nlohmann::json& config);

/// Writes into `dir` (created if needed), replacing an existing descriptor.
void save(const Checkpoint& ckpt, const std::filesystem::path& dir);

struct LoadOptions {
  std::optional<std::string> expected_kind;
  std::optional<std::string> expected_config_hash;
  bool force = false;  // accept a config hash mismatch
};

/// Throws VersionError on a different format_version, ChecksumError when a
/// blob or the stored config does not match its recorded digest,
/// ConfigHashMismatch when the stored hash differs from the expected hash
/// (unless force), and CheckpointError for anything else malformed.
Checkpoint load(const std::filesystem::path& dir, const LoadOptions& opts = {});

/// Every parameter and buffer by qualified name (detached copies).
std::map<std::string, torch::Tensor> module_tensors(const torch::nn::Module& module);

/// Copies tensors into a module's parameters and buffers. Every module tensor
/// must be present with the same shape and dtype; extra entries are errors.
void load_module_tensors(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& tensors);

}  // namespace wavecap::checkpoint
