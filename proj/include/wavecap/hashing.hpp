#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace wavecap::hashing {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Git blob id: SHA-1 over "blob <size>\0" followed by the content.
std::string git_blob_sha1(std::string_view bytes);
std::string git_blob_sha1_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

}  // namespace wavecap::hashing
