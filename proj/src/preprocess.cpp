#include "xmad/preprocess.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xmad/error.hpp"
#include "xmad/random.hpp"

namespace xmad::preprocess {
namespace {

double dist2(const Point3& a, const Point3& b) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

Eigen::Vector3d as_eigen(const Point3& p) { return {p[0], p[1], p[2]}; }

Eigen::Vector3d oriented(Eigen::Vector3d n) {
    for (int i = 2; i >= 0; --i) {
        if (n[i] != 0.0) {
            if (n[i] < 0.0) n = -n;
            break;
        }
    }
    return n;
}

}  // namespace

ForegroundPoints foreground_points(const StructuredPointCloud& pc) {
    ForegroundPoints out;
    for (std::size_t r = 0; r < pc.height(); ++r) {
        for (std::size_t c = 0; c < pc.width(); ++c) {
            if (pc.is_zero(r, c)) continue;
            auto p = pc.at(r, c);
            out.points.push_back({p[0], p[1], p[2]});
            out.pixels.push_back(r * pc.width() + c);
        }
    }
    return out;
}

Plane fit_plane(std::span<const Point3> points, const RansacConfig& cfg) {
    require(cfg.iterations >= 1, ErrorKind::Value, "RANSAC needs at least one iteration");
    require(cfg.inlier_threshold > 0.0 && cfg.min_inlier_fraction > 0.0, ErrorKind::Value,
            "RANSAC thresholds must be positive");
    const std::size_t n = points.size();
    if (n < 3) fail(ErrorKind::DegenerateInput, "plane fit needs at least 3 points, got " + std::to_string(n));

    Rng rng(cfg.seed);
    std::size_t best_count = 0;
    Eigen::Vector3d best_normal = Eigen::Vector3d::Zero();
    double best_offset = 0.0;
    bool found = false;

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const std::size_t i0 = uniform_index(rng, n);
        std::size_t i1 = uniform_index(rng, n - 1);
        if (i1 >= i0) ++i1;
        std::size_t i2 = uniform_index(rng, n - 2);
        for (std::size_t taken : {std::min(i0, i1), std::max(i0, i1)}) {
            if (i2 >= taken) ++i2;
        }
        const Eigen::Vector3d a = as_eigen(points[i0]);
        const Eigen::Vector3d u = as_eigen(points[i1]) - a;
        const Eigen::Vector3d v = as_eigen(points[i2]) - a;
        Eigen::Vector3d normal = u.cross(v);
        const double scale = u.norm() * v.norm();
        if (!(scale > 0.0) || normal.norm() <= 1e-9 * scale) continue;
        normal = oriented(normal.normalized());
        const double offset = normal.dot(a);

        std::size_t count = 0;
        for (const auto& p : points) {
            if (std::abs(normal.dot(as_eigen(p)) - offset) < cfg.inlier_threshold) ++count;
        }
        if (!found || count > best_count) {
            found = true;
            best_count = count;
            best_normal = normal;
            best_offset = offset;
        }
    }
    if (!found) fail(ErrorKind::DegenerateInput, "all RANSAC hypotheses were degenerate (coincident or collinear points)");

    const double fraction = static_cast<double>(best_count) / static_cast<double>(n);
    if (fraction < cfg.min_inlier_fraction) {
        fail(ErrorKind::NoPlane, "best inlier fraction " + std::to_string(fraction) + " below " +
                                     std::to_string(cfg.min_inlier_fraction));
    }

    // Least-squares refit: normal is the smallest-eigenvalue direction of the inlier scatter.
    // Centroid accumulated relative to the first inlier.
    std::vector<Eigen::Vector3d> inliers;
    inliers.reserve(best_count);
    for (const auto& p : points) {
        const Eigen::Vector3d q = as_eigen(p);
        if (std::abs(best_normal.dot(q) - best_offset) < cfg.inlier_threshold) inliers.push_back(q);
    }
    Eigen::Vector3d shift = Eigen::Vector3d::Zero();
    for (const auto& q : inliers) shift += q - inliers.front();
    const Eigen::Vector3d centroid = inliers.front() + shift / static_cast<double>(inliers.size());
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& q : inliers) {
        const Eigen::Vector3d d = q - centroid;
        scatter += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(scatter);
    Eigen::Vector3d normal = solver.eigenvectors().col(0);
    if (inliers.size() < 3 || !normal.allFinite() || normal.norm() == 0.0) normal = best_normal;
    normal.normalize();
    if (normal.dot(best_normal) < 0.0) normal = -normal;

    Plane plane;
    plane.normal = {normal[0], normal[1], normal[2]};
    plane.offset = normal.dot(centroid);
    return plane;
}

Plane fit_background_plane(const StructuredPointCloud& pc, const RansacConfig& cfg) {
    const auto fg = foreground_points(pc);
    return fit_plane(fg.points, cfg);
}

std::pair<StructuredPointCloud, RgbImage> remove_background(const StructuredPointCloud& pc, const RgbImage& rgb,
                                                            const Plane& plane, double threshold) {
    require(pc.height() == rgb.height() && pc.width() == rgb.width(), ErrorKind::Shape,
            "point cloud " + std::to_string(pc.height()) + "x" + std::to_string(pc.width()) + " vs image " +
                std::to_string(rgb.height()) + "x" + std::to_string(rgb.width()));
    StructuredPointCloud out_pc = pc;
    RgbImage out_rgb = rgb;
    for (std::size_t r = 0; r < pc.height(); ++r) {
        for (std::size_t c = 0; c < pc.width(); ++c) {
            auto p = pc.at(r, c);
            const bool zero = pc.is_zero(r, c);
            if (zero || plane.distance({p[0], p[1], p[2]}) < threshold) {
                std::ranges::fill(out_pc.at(r, c), 0.0f);
                std::ranges::fill(out_rgb.at(r, c), 0.0f);
            }
        }
    }
    return {std::move(out_pc), std::move(out_rgb)};
}

std::vector<std::size_t> farthest_point_sample_from(std::span<const Point3> points, std::size_t n, std::size_t start) {
    require(!points.empty(), ErrorKind::DegenerateInput, "farthest point sampling on an empty point set");
    require(n <= points.size(), ErrorKind::Shape,
            "cannot sample " + std::to_string(n) + " of " + std::to_string(points.size()) + " points");
    require(start < points.size(), ErrorKind::Shape, "start index out of range");
    std::vector<std::size_t> selected;
    if (n == 0) return selected;
    selected.reserve(n);

    // Selected points carry -1 so any remaining point wins the argmax.
    std::vector<double> min_d2(points.size(), std::numeric_limits<double>::infinity());
    std::size_t current = start;
    for (std::size_t s = 0; s < n; ++s) {
        selected.push_back(current);
        min_d2[current] = -1.0;
        if (s + 1 == n) break;
        std::size_t next = 0;
        double best = -2.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (min_d2[i] >= 0.0) min_d2[i] = std::min(min_d2[i], dist2(points[i], points[current]));
            if (min_d2[i] > best) {
                best = min_d2[i];
                next = i;
            }
        }
        current = next;
    }
    return selected;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Point3> points, std::size_t n, std::uint64_t seed) {
    require(!points.empty(), ErrorKind::DegenerateInput, "farthest point sampling on an empty point set");
    Rng rng(seed);
    return farthest_point_sample_from(points, n, uniform_index(rng, points.size()));
}

std::vector<std::vector<std::size_t>> knn_group(std::span<const Point3> points, std::span<const std::size_t> centers,
                                                std::size_t m) {
    require(m <= points.size(), ErrorKind::Shape,
            "group size " + std::to_string(m) + " exceeds point count " + std::to_string(points.size()));
    std::vector<std::vector<std::size_t>> groups;
    groups.reserve(centers.size());
    std::vector<std::pair<double, std::size_t>> order(points.size());
    for (std::size_t center : centers) {
        require(center < points.size(), ErrorKind::Shape, "center index out of range");
        for (std::size_t i = 0; i < points.size(); ++i) order[i] = {dist2(points[i], points[center]), i};
        if (m < order.size()) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end());
        std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m));
        std::vector<std::size_t> group(m);
        for (std::size_t j = 0; j < m; ++j) group[j] = order[j].second;
        groups.push_back(std::move(group));
    }
    return groups;
}

FeatureMap idw_interpolate(std::span<const GridPos> centers, const FeatureMap& center_features, std::size_t rows,
                           std::size_t cols, std::size_t k, double power, const std::vector<std::uint8_t>* fill_mask) {
    if (centers.empty()) fail(ErrorKind::DegenerateInput, "IDW interpolation needs at least one center");
    require(center_features.cells() == centers.size(), ErrorKind::Shape,
            "center feature count " + std::to_string(center_features.cells()) + " != center count " +
                std::to_string(centers.size()));
    require(k >= 1 && k <= centers.size(), ErrorKind::Shape,
            "IDW neighbor count " + std::to_string(k) + " not in [1, " + std::to_string(centers.size()) + "]");
    require(!fill_mask || fill_mask->size() == rows * cols, ErrorKind::Shape, "IDW fill mask size mismatch");

    const std::size_t dim = center_features.dim();
    FeatureMap out(rows, cols, dim);
    std::vector<std::pair<double, std::size_t>> order(centers.size());
    std::vector<double> acc(dim);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t cell = r * cols + c;
            if (fill_mask && (*fill_mask)[cell] == 0) continue;
            for (std::size_t i = 0; i < centers.size(); ++i) {
                const double dr = static_cast<double>(r) - centers[i].row;
                const double dc = static_cast<double>(c) - centers[i].col;
                order[i] = {std::sqrt(dr * dr + dc * dc), i};
            }
            std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
            auto dst = out.cell(cell);
            if (order[0].first < 1e-12) {
                auto src = center_features.cell(order[0].second);
                std::copy(src.begin(), src.end(), dst.begin());
                continue;
            }
            std::fill(acc.begin(), acc.end(), 0.0);
            double total = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double w = 1.0 / std::pow(order[j].first, power);
                total += w;
                auto src = center_features.cell(order[j].second);
                for (std::size_t q = 0; q < dim; ++q) acc[q] += w * static_cast<double>(src[q]);
            }
            for (std::size_t q = 0; q < dim; ++q) dst[q] = static_cast<float>(acc[q] / total);
        }
    }
    return out;
}

FeatureMap pool_align(const FeatureMap& map, PoolMode mode) {
    const std::size_t dim = map.dim();
    if (mode == PoolMode::Up2) {
        FeatureMap out(map.rows() * 2, map.cols() * 2, dim);
        for (std::size_t r = 0; r < out.rows(); ++r) {
            for (std::size_t c = 0; c < out.cols(); ++c) {
                auto src = map.cell(r / 2, c / 2);
                std::copy(src.begin(), src.end(), out.cell(r, c).begin());
            }
        }
        return out;
    }
    require(map.rows() % 2 == 0 && map.cols() % 2 == 0, ErrorKind::Shape,
            "down2 pooling needs even dimensions, got " + std::to_string(map.rows()) + "x" + std::to_string(map.cols()));
    FeatureMap out(map.rows() / 2, map.cols() / 2, dim);
    for (std::size_t r = 0; r < out.rows(); ++r) {
        for (std::size_t c = 0; c < out.cols(); ++c) {
            auto a = map.cell(2 * r, 2 * c);
            auto b = map.cell(2 * r, 2 * c + 1);
            auto d = map.cell(2 * r + 1, 2 * c);
            auto e = map.cell(2 * r + 1, 2 * c + 1);
            auto dst = out.cell(r, c);
            for (std::size_t q = 0; q < dim; ++q) {
                const double sum = static_cast<double>(a[q]) + b[q] + d[q] + e[q];
                dst[q] = static_cast<float>(sum / 4.0);
            }
        }
    }
    return out;
}

}  // namespace xmad::preprocess
