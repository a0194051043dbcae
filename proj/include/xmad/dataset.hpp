#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xmad/types.hpp"

namespace xmad::dataset {

// Raw files live at <root>/<class>/<split>/<defect>/{rgb/<stem>.png, xyz/<stem>.tiff, gt/<stem>.png};
// features at <root>/<class>/<split>/<defect>/feat/<modality>/<stem>.cmft with a <stem>.json sidecar.

struct SampleId {
    std::string class_name;
    std::string split;
    std::string defect;
    std::string stem;

    std::string str() const { return class_name + "/" + split + "/" + defect + "/" + stem; }
};

SampleId parse_id(std::string_view id);

RgbImage read_rgb(const std::filesystem::path& path);
/// 8-bit PNG; values are clamped to [0, 1] and rounded.
void write_rgb(const RgbImage& image, const std::filesystem::path& path);
/// Three-channel float32 TIFF holding x, y, z.
StructuredPointCloud read_xyz(const std::filesystem::path& path);
void write_xyz(const StructuredPointCloud& pc, const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);
void write_mask(const Mask& mask, const std::filesystem::path& path);
/// 8-bit grayscale render of a score map, linearly scaled from [lo, hi].
void write_score_png(const ScoreMap& map, const std::filesystem::path& path, double lo, double hi);

/// Square resizes: bilinear for colour, nearest for coordinates and masks so
/// background zeros never blend into the object.
RgbImage resize_rgb(const RgbImage& image, std::size_t size);
StructuredPointCloud resize_xyz(const StructuredPointCloud& pc, std::size_t size);
Mask resize_mask(const Mask& mask, std::size_t size);

struct SampleFiles {
    std::string id;
    std::filesystem::path rgb;
    std::filesystem::path xyz;
    std::filesystem::path gt;
};

std::filesystem::path rgb_path(const std::filesystem::path& root, const SampleId& id);
std::filesystem::path xyz_path(const std::filesystem::path& root, const SampleId& id);
std::filesystem::path gt_path(const std::filesystem::path& root, const SampleId& id);

/// Class directories under root (those holding a train or test split), sorted.
std::vector<std::string> list_classes(const std::filesystem::path& root);

/// Samples of one split, sorted by id. A sample exists when any of its raw
/// files or feature files exists.
std::vector<SampleFiles> scan(const std::filesystem::path& root, const std::string& class_name, const std::string& split);

struct LoadOptions {
    bool raw = true;
    bool features = true;
};

/// Train samples are normal. Test samples are normal under the "good" defect
/// and anomalous otherwise, and always carry a mask (all zero when no file exists).
Sample load_sample(const std::filesystem::path& root, const SampleFiles& files, const LoadOptions& options = {});
std::vector<Sample> load_split(const std::filesystem::path& root, const std::string& class_name, const std::string& split,
                               const LoadOptions& options = {});

/// Feature file plus sidecar {id, modality, rows, cols, dim, source_checksum}.
void write_features(const std::filesystem::path& root, Modality modality, const std::string& id, const FeatureMap& map,
                    const std::string& source_checksum);

/// Writes whatever the sample carries: raw inputs, mask and feature maps.
void write_sample(const std::filesystem::path& root, const Sample& sample);

}  // namespace xmad::dataset
