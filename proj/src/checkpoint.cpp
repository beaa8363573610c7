#include "wavecap/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include "wavecap/errors.hpp"
#include "wavecap/hashing.hpp"

namespace wavecap::checkpoint {
namespace {

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kInt32: return "int32";
    case torch::kUInt8: return "uint8";
    case torch::kBool: return "bool";
    default: throw CheckpointError("unsupported tensor dtype " + std::string(c10::toString(t)));
  }
}

torch::ScalarType parse_dtype(const std::string& s) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  if (s == "int32") return torch::kInt32;
  if (s == "uint8") return torch::kUInt8;
  if (s == "bool") return torch::kBool;
  throw CheckpointError("unknown dtype '" + s + "' in descriptor");
}

std::string tensor_bytes(const torch::Tensor& t) {
  auto c = t.detach().cpu().contiguous();
  return {static_cast<const char*>(c.data_ptr()), static_cast<size_t>(c.nbytes())};
}

}  // namespace

std::string config_hash(const nlohmann::json& config) { return hashing::sha256_hex(config.dump()); }

void save(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json desc;
  desc["format"] = "wavecap-checkpoint";
  desc["format_version"] = kFormatVersion;
  desc["kind"] = ckpt.kind;
  desc["config"] = ckpt.config;
  desc["config_hash"] = config_hash(ckpt.config);
  desc["seed"] = ckpt.seed;
  desc["step"] = ckpt.step;
  desc["extra"] = ckpt.extra;
  nlohmann::json tensors = nlohmann::json::object();
  size_t index = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    char file[32];
    std::snprintf(file, sizeof(file), "t%05zu.bin", index++);
    const auto bytes = tensor_bytes(t);
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("cannot write " + (dir / file).string());
    tensors[name] = {{"file", file},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"bytes", bytes.size()},
                     {"sha256", hashing::sha256_hex(bytes)}};
  }
  desc["tensors"] = tensors;
  std::ofstream out(dir / kDescriptorName, std::ios::trunc);
  out << desc.dump(2) << '\n';
  if (!out) throw CheckpointError("cannot write descriptor in " + dir.string());
}

Checkpoint load(const std::filesystem::path& dir, const LoadOptions& opts) {
  const auto desc_path = dir / kDescriptorName;
  if (!std::filesystem::is_regular_file(desc_path)) throw CheckpointError("no checkpoint at " + dir.string());
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(hashing::read_file(desc_path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("unreadable descriptor " + desc_path.string() + ": " + e.what());
  }
  try {
    const int version = desc.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw VersionError("checkpoint " + dir.string() + " has format version " + std::to_string(version) +
                         ", this build reads version " + std::to_string(kFormatVersion));
    }
    Checkpoint ckpt;
    ckpt.kind = desc.at("kind").get<std::string>();
    ckpt.config = desc.at("config");
    ckpt.seed = desc.at("seed").get<uint64_t>();
    ckpt.step = desc.at("step").get<int64_t>();
    ckpt.extra = desc.value("extra", nlohmann::json::object());
    if (opts.expected_kind && *opts.expected_kind != ckpt.kind) {
      throw CheckpointError("checkpoint " + dir.string() + " holds '" + ckpt.kind + "', expected '" +
                            *opts.expected_kind + "'");
    }
    const auto stored_hash = desc.at("config_hash").get<std::string>();
    if (stored_hash != config_hash(ckpt.config)) {
      throw ChecksumError("descriptor config does not match its recorded hash in " + dir.string());
    }
    if (opts.expected_config_hash && *opts.expected_config_hash != stored_hash && !opts.force) {
      throw ConfigHashMismatch("checkpoint " + dir.string() + " was written with config " + stored_hash +
                               ", current config is " + *opts.expected_config_hash + " (use --force)");
    }
    for (const auto& [name, meta] : desc.at("tensors").items()) {
      const auto file = dir / meta.at("file").get<std::string>();
      if (!std::filesystem::is_regular_file(file)) throw CheckpointError("missing blob " + file.string());
      const auto bytes = hashing::read_file(file);
      if (bytes.size() != meta.at("bytes").get<size_t>() || hashing::sha256_hex(bytes) != meta.at("sha256")) {
        throw ChecksumError("blob " + file.string() + " for '" + name + "' fails its checksum");
      }
      const auto shape = meta.at("shape").get<std::vector<int64_t>>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(parse_dtype(meta.at("dtype"))));
      if (static_cast<size_t>(t.nbytes()) != bytes.size()) throw ChecksumError("blob size mismatch for '" + name + "'");
      std::memcpy(t.data_ptr(), bytes.data(), bytes.size());
      ckpt.tensors.emplace(name, std::move(t));
    }
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed descriptor " + desc_path.string() + ": " + e.what());
  }
}

std::map<std::string, torch::Tensor> module_tensors(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : module.named_parameters(true)) out.emplace(p.key(), p.value().detach().clone());
  for (const auto& b : module.named_buffers(true)) out.emplace(b.key(), b.value().detach().clone());
  return out;
}

void load_module_tensors(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& tensors) {
  torch::NoGradGuard guard;
  std::set<std::string> used;
  const auto assign = [&](const std::string& name, torch::Tensor& dst) {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (it->second.sizes() != dst.sizes() || it->second.scalar_type() != dst.scalar_type()) {
      throw CheckpointError("tensor '" + name + "' has a different shape or dtype");
    }
    dst.copy_(it->second);
    used.insert(name);
  };
  for (auto& p : module.named_parameters(true)) assign(p.key(), p.value());
  for (auto& b : module.named_buffers(true)) assign(b.key(), b.value());
  for (const auto& [name, t] : tensors) {
    if (used.count(name) == 0) throw CheckpointError("checkpoint tensor '" + name + "' has no place in the model");
  }
}

}  // namespace wavecap::checkpoint
