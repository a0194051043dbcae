#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>

namespace xmad {

/// Writes through `fill` into `<path>.tmp` and renames it over `path`.
/// Parent directories are created as needed.
void write_atomically(const std::filesystem::path& path, const std::function<void(std::ostream&)>& fill);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// CRC-32 (zlib polynomial), rendered as 8 lowercase hex digits.
std::string crc32_hex(std::span<const unsigned char> bytes);
std::string file_checksum(const std::filesystem::path& path);

}  // namespace xmad
