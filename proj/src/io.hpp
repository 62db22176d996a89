#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace soiguard {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

/// Write to `<path>.tmp` and rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Lowercase hex SHA-1 of "blob <size>\0<content>", as git computes it.
std::string git_blob_sha1(std::string_view content);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a64_hex(std::string_view content);

}  // namespace soiguard
