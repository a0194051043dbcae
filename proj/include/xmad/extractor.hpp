#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "xmad/preprocess.hpp"
#include "xmad/types.hpp"

namespace xmad::extractor {

enum class Kind { Precomputed, Synthetic };

const char* to_string(Kind kind);
Kind parse_kind(std::string_view text);

struct ExtractorSpec {
    Modality modality = Modality::Rgb;
    Kind kind = Kind::Synthetic;
    std::size_t out_rows = 56;
    std::size_t out_cols = 56;
    std::size_t out_dim = 768;
    std::uint64_t seed = 0;
    /// Dataset root for precomputed features.
    std::filesystem::path feature_root;
    /// Multiplies raw inputs before the synthetic linear map (point clouds are
    /// in meters, so a group's spread is tiny without it).
    double input_scale = 1.0;
};

/// Both extractors plus the point-cloud grouping they share.
struct ExtractorSet {
    ExtractorSpec rgb{};
    ExtractorSpec pc{.modality = Modality::Pc};
    preprocess::GroupingConfig grouping{};
    std::uint64_t fps_seed = 0;

    const ExtractorSpec& of(Modality m) const { return m == Modality::Rgb ? rgb : pc; }
};

/// `<root>/<class>/<split>/<defect>/feat/<modality>/<stem>.cmft` for id `<class>/<split>/<defect>/<stem>`.
std::filesystem::path feature_path(const std::filesystem::path& root, Modality modality, std::string_view sample_id);

/// Loads a precomputed map; a missing file is a lookup error.
FeatureMap load_precomputed(const ExtractorSpec& spec, std::string_view sample_id);

/// Synthetic: tanh of a seeded bias-free linear map applied to each flattened pixel patch.
FeatureMap extract_rgb(const ExtractorSpec& spec, const RgbImage& image, std::string_view sample_id = {});

/// Synthetic per-group embeddings (n_groups x 1 x out_dim) from translation-invariant
/// moment statistics of each group's centered coordinates.
FeatureMap extract_pc(const ExtractorSpec& spec, std::span<const std::vector<std::size_t>> groups,
                      std::span<const preprocess::Point3> points);

/// Full point-cloud route: FPS centers, KNN groups, group embeddings, IDW onto a
/// 2*rows x 2*cols grid over foreground cells, then 2x2 average pooling.
FeatureMap extract_pc_map(const ExtractorSet& set, const StructuredPointCloud& pc, std::string_view sample_id = {});

/// Dispatches on modality; the raw grid must match the modality.
FeatureMap extract(const ExtractorSet& set, Modality modality, const PixelGrid& raw, std::string_view sample_id = {});

/// Number of statistics fed to the synthetic point-cloud map.
inline constexpr std::size_t kGroupStats = 13;

}  // namespace xmad::extractor
