#pragma once

// CMFT feature-tensor files: a 24-byte little-endian header
//   "CMFT" | version u32 = 1 | rows u32 | cols u32 | dim u32 | dtype u32 = 0
// followed by rows*cols*dim row-major float32 values.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "xmad/types.hpp"

namespace xmad::cmft {

inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kDtypeFloat32 = 0;
inline constexpr std::size_t kHeaderBytes = 24;

constexpr std::uint64_t file_size(std::uint64_t rows, std::uint64_t cols, std::uint64_t dim) {
    return kHeaderBytes + 4 * rows * cols * dim;
}

/// Returns the number of bytes written.
std::uint64_t write_feature_tensor(const FeatureMap& map, std::ostream& sink);
FeatureMap read_feature_tensor(std::istream& source);

/// Writes to a temporary sibling and renames over `path`.
std::uint64_t save(const FeatureMap& map, const std::filesystem::path& path);
FeatureMap load(const std::filesystem::path& path);

}  // namespace xmad::cmft
