#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmad/error.hpp"
#include "xmad/types.hpp"

namespace xmad::bank {

enum class MetricKind { L1, L2, Cosine };

const char* to_string(MetricKind kind);
MetricKind parse_metric(std::string_view text);

/// Distance accumulated sequentially in double. Cosine is 1 - a.b/(|a||b|),
/// clamped to [0, 2], and throws a value error for a zero vector.
template <typename T>
double distance(MetricKind kind, std::span<const T> a, std::span<const T> b) {
    require(a.size() == b.size(), ErrorKind::Shape,
            "distance between vectors of width " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    switch (kind) {
        case MetricKind::L1: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
            return s;
        }
        case MetricKind::L2: {
            double s = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
                s += d * d;
            }
            return std::sqrt(s);
        }
        case MetricKind::Cosine: {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double x = a[i];
                const double y = b[i];
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            require(na > 0.0 && nb > 0.0, ErrorKind::Value, "cosine distance with a zero vector");
            const double d = 1.0 - dot / std::sqrt(na * nb);
            return std::clamp(d, 0.0, 2.0);
        }
    }
    return 0.0;
}

inline double distance(MetricKind kind, std::span<const float> a, std::span<const float> b) {
    return distance<float>(kind, a, b);
}

/// Where a patch came from.
struct PatchSource {
    std::string sample_id;
    std::size_t cell = 0;
    bool operator==(const PatchSource&) const = default;
};

/// P x d patch features, row-major.
struct PatchSet {
    std::size_t dim = 0;
    std::vector<float> data;
    std::vector<PatchSource> sources;

    std::size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
    void push_back(std::span<const float> v, PatchSource source);
};

/// Flattens the non-background cells of every map; ids label the sources when given.
PatchSet collect_patches(std::span<const FeatureMap> maps, std::span<const std::string> ids = {});

/// d x d' matrix with entries in {-s, 0, +s}, stored as signs.
struct ProjectionMatrix {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    double density = 1.0;
    std::uint64_t seed = 0;
    double scale = 1.0;
    std::vector<std::int8_t> signs;  // in_dim x out_dim, row-major

    double at(std::size_t i, std::size_t j) const { return scale * signs[i * out_dim + j]; }
    std::vector<double> project(std::span<const float> v) const;
    bool operator==(const ProjectionMatrix&) const = default;
};

inline double default_density(std::size_t dim) { return 1.0 / std::sqrt(static_cast<double>(dim)); }

ProjectionMatrix make_projection(std::size_t dim, std::size_t target_dim, double density, std::uint64_t seed);

/// K = max(1, round(fraction * P)).
std::size_t coreset_size(std::size_t patches, double fraction);

struct CoresetOptions {
    double fraction = 0.1;
    MetricKind metric = MetricKind::L2;
    const ProjectionMatrix* projection = nullptr;
    std::uint64_t seed = 0;
    /// Overrides the seeded start index.
    std::optional<std::size_t> start;
    std::size_t workers = 1;
};

/// Greedy max-min selection: each next index maximizes the minimum distance to
/// everything already selected, ties to the lowest index. Output is in selection order.
std::vector<std::size_t> coreset_select(const PatchSet& patches, const CoresetOptions& options);

struct ProjectionInfo {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    double density = 0.0;
    std::uint64_t seed = 0;
    bool operator==(const ProjectionInfo&) const = default;
};

struct MemoryBank {
    Modality modality = Modality::Pc;
    MetricKind metric = MetricKind::L2;
    std::size_t dim = 0;
    std::vector<float> rows;  // K x dim, original coordinates
    std::vector<std::size_t> selected;
    std::vector<PatchSource> sources;
    double fraction = 0.1;
    std::uint64_t seed = 0;
    std::optional<ProjectionInfo> projection;
    std::vector<std::string> source_checksums;

    std::size_t size() const { return dim == 0 ? 0 : rows.size() / dim; }
    std::span<const float> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }
    bool operator==(const MemoryBank&) const = default;
};

struct Neighbor {
    double distance = 0.0;
    std::size_t index = 0;
};

/// Exact scan in original coordinates; ties go to the lowest row.
Neighbor nn_query(const MemoryBank& bank, std::span<const float> feature);

struct BankConfig {
    double fraction = 0.1;
    MetricKind metric = MetricKind::L2;
    /// Project for selection when the feature width exceeds projection_dim.
    bool use_projection = true;
    std::size_t projection_dim = 128;
    /// 0 selects 1/sqrt(d).
    double projection_density = 0.0;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

MemoryBank build_bank(std::span<const FeatureMap> maps, Modality modality, const BankConfig& cfg,
                      std::span<const std::string> ids = {});
/// Selection over an already collected patch set.
MemoryBank build_bank_from_patches(const PatchSet& patches, Modality modality, const BankConfig& cfg);

/// `<dir>/coreset.cmft` (K x 1 x d) plus `<dir>/manifest.json`.
void save_bank(const MemoryBank& bank, const std::filesystem::path& dir);
MemoryBank load_bank(const std::filesystem::path& dir);

}  // namespace xmad::bank
