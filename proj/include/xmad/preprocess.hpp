#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "xmad/types.hpp"

namespace xmad::preprocess {

using Point3 = std::array<double, 3>;

/// The plane {p : normal . p = offset} with a unit normal.
struct Plane {
    Point3 normal{0.0, 0.0, 1.0};
    double offset = 0.0;

    double distance(const Point3& p) const {
        return std::abs(normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] - offset);
    }
};

struct RansacConfig {
    std::size_t iterations = 1000;
    double inlier_threshold = 0.005;
    double min_inlier_fraction = 0.3;
    std::uint64_t seed = 0;
};

struct GroupingConfig {
    std::size_t n_groups = 1024;
    std::size_t group_size = 128;
    std::size_t idw_neighbors = 4;
    double idw_power = 2.0;
};

/// Non-zero pixels of a structured point cloud, with their row-major pixel indices.
struct ForegroundPoints {
    std::vector<Point3> points;
    std::vector<std::size_t> pixels;
};
ForegroundPoints foreground_points(const StructuredPointCloud& pc);

/// RANSAC over random 3-point hypotheses followed by a least-squares refit over
/// the winning hypothesis' inliers. The returned normal is oriented so that its
/// last non-zero component is positive.
Plane fit_plane(std::span<const Point3> points, const RansacConfig& cfg);
Plane fit_background_plane(const StructuredPointCloud& pc, const RansacConfig& cfg);

/// Zeroes every pixel (in both grids) whose point lies strictly closer than
/// `threshold` to the plane, or is already (0,0,0).
std::pair<StructuredPointCloud, RgbImage> remove_background(const StructuredPointCloud& pc, const RgbImage& rgb,
                                                            const Plane& plane, double threshold = 0.005);

/// Greedy farthest point sampling from a seeded-random start.
std::vector<std::size_t> farthest_point_sample(std::span<const Point3> points, std::size_t n, std::uint64_t seed);
/// Same rule from an explicit start index.
std::vector<std::size_t> farthest_point_sample_from(std::span<const Point3> points, std::size_t n, std::size_t start);

/// The m nearest points (L2, ties by lowest index) of every center, center included.
std::vector<std::vector<std::size_t>> knn_group(std::span<const Point3> points, std::span<const std::size_t> centers,
                                                std::size_t m);

struct GridPos {
    double row = 0.0;
    double col = 0.0;
};

/// Inverse-distance-weighted interpolation of center features (one per row of
/// `center_features`, a FeatureMap of shape n x 1 x d) onto a rows x cols grid.
/// When `fill_mask` is given (rows*cols entries) only cells with a non-zero
/// entry are interpolated; the rest stay zero.
FeatureMap idw_interpolate(std::span<const GridPos> centers, const FeatureMap& center_features, std::size_t rows,
                           std::size_t cols, std::size_t k, double power,
                           const std::vector<std::uint8_t>* fill_mask = nullptr);

enum class PoolMode { Up2, Down2 };

FeatureMap pool_align(const FeatureMap& map, PoolMode mode);

}  // namespace xmad::preprocess
