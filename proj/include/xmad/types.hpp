#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmad {

enum class Modality { Rgb, Pc };

const char* to_string(Modality m);
Modality parse_modality(std::string_view text);
inline Modality other(Modality m) { return m == Modality::Rgb ? Modality::Pc : Modality::Rgb; }

/// Dense rows x cols grid of dim-dimensional feature vectors, row-major.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(std::size_t rows, std::size_t cols, std::size_t dim, float fill = 0.0f);
    FeatureMap(std::size_t rows, std::size_t cols, std::size_t dim, std::vector<float> data);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t dim() const { return dim_; }
    std::size_t cells() const { return rows_ * cols_; }

    std::span<float> cell(std::size_t r, std::size_t c) { return {data_.data() + (r * cols_ + c) * dim_, dim_}; }
    std::span<const float> cell(std::size_t r, std::size_t c) const {
        return {data_.data() + (r * cols_ + c) * dim_, dim_};
    }
    std::span<float> cell(std::size_t index) { return {data_.data() + index * dim_, dim_}; }
    std::span<const float> cell(std::size_t index) const { return {data_.data() + index * dim_, dim_}; }

    /// True when every coordinate of the cell is exactly zero (background).
    bool is_background(std::size_t index) const;

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    bool operator==(const FeatureMap&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

/// Three float channels per pixel on an H x W grid. Used for both RGB images
/// (values in [0,1]) and structured point clouds (x,y,z in meters, background
/// exactly (0,0,0)).
class PixelGrid {
public:
    PixelGrid() = default;
    PixelGrid(std::size_t height, std::size_t width, float fill = 0.0f)
        : height_(height), width_(width), data_(height * width * 3, fill) {}

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t pixels() const { return height_ * width_; }

    std::span<float, 3> at(std::size_t r, std::size_t c) {
        return std::span<float, 3>(data_.data() + (r * width_ + c) * 3, 3);
    }
    std::span<const float, 3> at(std::size_t r, std::size_t c) const {
        return std::span<const float, 3>(data_.data() + (r * width_ + c) * 3, 3);
    }
    bool is_zero(std::size_t r, std::size_t c) const {
        auto p = at(r, c);
        return p[0] == 0.0f && p[1] == 0.0f && p[2] == 0.0f;
    }

    std::vector<float>& data() { return data_; }
    const std::vector<float>& data() const { return data_; }

    bool operator==(const PixelGrid&) const = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<float> data_;
};

struct RgbImage : PixelGrid {
    using PixelGrid::PixelGrid;
    bool operator==(const RgbImage&) const = default;
};

struct StructuredPointCloud : PixelGrid {
    using PixelGrid::PixelGrid;
    bool operator==(const StructuredPointCloud&) const = default;
};

/// Binary pixel mask, row-major, 0 or 1.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::size_t h, std::size_t w) : height(h), width(w), data(h * w, 0) {}
    std::uint8_t& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
    std::uint8_t at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
    bool operator==(const Mask&) const = default;
};

/// Real-valued H x W map, row-major.
struct ScoreMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    ScoreMap() = default;
    ScoreMap(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    bool operator==(const ScoreMap&) const = default;
};

enum class Label { Normal, Anomalous, Unknown };

struct Sample {
    std::string id;
    std::optional<RgbImage> rgb;
    std::optional<StructuredPointCloud> pc;
    std::optional<FeatureMap> rgb_features;
    std::optional<FeatureMap> pc_features;
    std::optional<Mask> gt_mask;
    Label label = Label::Unknown;

    const std::optional<FeatureMap>& features(Modality m) const { return m == Modality::Rgb ? rgb_features : pc_features; }
    std::optional<FeatureMap>& features(Modality m) { return m == Modality::Rgb ? rgb_features : pc_features; }
    /// Raw input for a modality viewed as a pixel grid.
    const PixelGrid* raw(Modality m) const;

    bool operator==(const Sample&) const = default;
};

/// Throws a data error naming the sample when it has no modality at all.
void validate_sample(const Sample& sample);

/// Throws a value error naming the first non-finite coordinate.
void require_finite(const FeatureMap& map, std::string_view what);

}  // namespace xmad
