#include "xmad/extractor.hpp"

#include <algorithm>
#include <cmath>

#include "xmad/cmft.hpp"
#include "xmad/error.hpp"
#include "xmad/random.hpp"

namespace fs = std::filesystem;

namespace xmad::extractor {
namespace {

/// out_dim x in_dim Gaussian matrix with variance 1/in_dim, row-major.
std::vector<double> projection_weights(std::uint64_t seed, std::size_t out_dim, std::size_t in_dim) {
    Rng rng(derive_seed(seed, 0xE7));
    std::vector<double> w(out_dim * in_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : w) v = normal(rng) * scale;
    return w;
}

void apply_map(std::span<const double> weights, std::span<const double> input, std::span<float> out) {
    const std::size_t in_dim = input.size();
    for (std::size_t o = 0; o < out.size(); ++o) {
        double acc = 0.0;
        const double* row = weights.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * input[i];
        out[o] = static_cast<float>(std::tanh(acc));
    }
}

void require_synthetic_or_load(const ExtractorSpec& spec, Modality expected) {
    require(spec.modality == expected, ErrorKind::Usage,
            std::string("extractor spec is for ") + to_string(spec.modality) + ", expected " + to_string(expected));
    require(spec.out_dim > 0, ErrorKind::Value, "extractor out_dim must be positive");
}

}  // namespace

const char* to_string(Kind kind) { return kind == Kind::Precomputed ? "precomputed" : "synthetic"; }

Kind parse_kind(std::string_view text) {
    if (text == "precomputed") return Kind::Precomputed;
    if (text == "synthetic") return Kind::Synthetic;
    fail(ErrorKind::Usage, "unknown extractor kind '" + std::string(text) + "'");
}

fs::path feature_path(const fs::path& root, Modality modality, std::string_view sample_id) {
    const fs::path id(sample_id);
    fs::path stem = id.filename();
    stem += ".cmft";
    return root / id.parent_path() / "feat" / to_string(modality) / stem;
}

FeatureMap load_precomputed(const ExtractorSpec& spec, std::string_view sample_id) {
    require(!sample_id.empty(), ErrorKind::Usage, "precomputed extraction needs a sample id");
    const fs::path path = feature_path(spec.feature_root, spec.modality, sample_id);
    if (!fs::exists(path)) {
        fail(ErrorKind::Lookup, "no precomputed " + std::string(to_string(spec.modality)) + " features for '" +
                                    std::string(sample_id) + "' at " + path.string());
    }
    FeatureMap map = cmft::load(path);
    require(map.rows() == spec.out_rows && map.cols() == spec.out_cols && map.dim() == spec.out_dim, ErrorKind::Shape,
            path.string() + " has shape " + std::to_string(map.rows()) + "x" + std::to_string(map.cols()) + "x" +
                std::to_string(map.dim()));
    return map;
}

FeatureMap extract_rgb(const ExtractorSpec& spec, const RgbImage& image, std::string_view sample_id) {
    require_synthetic_or_load(spec, Modality::Rgb);
    if (spec.kind == Kind::Precomputed) return load_precomputed(spec, sample_id);

    require(spec.out_rows > 0 && spec.out_cols > 0 && image.height() % spec.out_rows == 0 &&
                image.width() % spec.out_cols == 0,
            ErrorKind::Shape,
            "image " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                " does not tile into a " + std::to_string(spec.out_rows) + "x" + std::to_string(spec.out_cols) + " grid");
    const std::size_t ph = image.height() / spec.out_rows;
    const std::size_t pw = image.width() / spec.out_cols;
    const std::size_t in_dim = ph * pw * 3;
    const auto weights = projection_weights(spec.seed, spec.out_dim, in_dim);

    FeatureMap out(spec.out_rows, spec.out_cols, spec.out_dim);
    std::vector<double> patch(in_dim);
    for (std::size_t r = 0; r < spec.out_rows; ++r) {
        for (std::size_t c = 0; c < spec.out_cols; ++c) {
            std::size_t k = 0;
            for (std::size_t y = 0; y < ph; ++y) {
                for (std::size_t x = 0; x < pw; ++x) {
                    auto px = image.at(r * ph + y, c * pw + x);
                    for (std::size_t ch = 0; ch < 3; ++ch) patch[k++] = spec.input_scale * px[ch];
                }
            }
            apply_map(weights, patch, out.cell(r, c));
        }
    }
    return out;
}

FeatureMap extract_pc(const ExtractorSpec& spec, std::span<const std::vector<std::size_t>> groups,
                      std::span<const preprocess::Point3> points) {
    require_synthetic_or_load(spec, Modality::Pc);
    require(spec.kind == Kind::Synthetic, ErrorKind::Usage,
            "group embeddings can only be computed by the synthetic extractor; precomputed features load per sample");
    const auto weights = projection_weights(spec.seed, spec.out_dim, kGroupStats);
    FeatureMap out(groups.size(), 1, spec.out_dim);
    std::vector<double> stats(kGroupStats);
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const auto& group = groups[g];
        require(!group.empty(), ErrorKind::DegenerateInput, "empty point group");
        std::array<double, 3> mean{0.0, 0.0, 0.0};
        for (std::size_t idx : group) {
            require(idx < points.size(), ErrorKind::Shape, "group index out of range");
            for (int a = 0; a < 3; ++a) mean[a] += points[idx][a];
        }
        for (auto& m : mean) m /= static_cast<double>(group.size());

        std::array<double, 3> lo{1e300, 1e300, 1e300};
        std::array<double, 3> hi{-1e300, -1e300, -1e300};
        std::array<double, 6> cov{};
        std::array<double, 3> third{};
        double radius = 0.0;
        for (std::size_t idx : group) {
            std::array<double, 3> d{};
            for (int a = 0; a < 3; ++a) {
                d[a] = spec.input_scale * (points[idx][a] - mean[a]);
                lo[a] = std::min(lo[a], d[a]);
                hi[a] = std::max(hi[a], d[a]);
                third[a] += d[a] * d[a] * d[a];
            }
            cov[0] += d[0] * d[0];
            cov[1] += d[1] * d[1];
            cov[2] += d[2] * d[2];
            cov[3] += d[0] * d[1];
            cov[4] += d[0] * d[2];
            cov[5] += d[1] * d[2];
            radius += std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        }
        const double n = static_cast<double>(group.size());
        std::size_t k = 0;
        stats[k++] = radius / n;
        for (double v : cov) stats[k++] = v / n;
        for (int a = 0; a < 3; ++a) stats[k++] = hi[a] - lo[a];
        for (double v : third) stats[k++] = v / n;
        apply_map(weights, stats, out.cell(g));
    }
    return out;
}

FeatureMap extract_pc_map(const ExtractorSet& set, const StructuredPointCloud& pc, std::string_view sample_id) {
    const ExtractorSpec& spec = set.pc;
    require_synthetic_or_load(spec, Modality::Pc);
    if (spec.kind == Kind::Precomputed) return load_precomputed(spec, sample_id);

    const std::size_t grid_rows = 2 * spec.out_rows;
    const std::size_t grid_cols = 2 * spec.out_cols;
    require(pc.height() % grid_rows == 0 && pc.width() % grid_cols == 0, ErrorKind::Shape,
            "point cloud " + std::to_string(pc.height()) + "x" + std::to_string(pc.width()) +
                " does not tile into the " + std::to_string(grid_rows) + "x" + std::to_string(grid_cols) +
                " interpolation grid");
    const auto fg = preprocess::foreground_points(pc);
    if (fg.points.empty()) {
        fail(ErrorKind::DegenerateInput, "point cloud '" + std::string(sample_id) + "' has no foreground points");
    }
    const std::size_t n_groups = std::min(set.grouping.n_groups, fg.points.size());
    const std::size_t group_size = std::min(set.grouping.group_size, fg.points.size());
    const auto centers = preprocess::farthest_point_sample(fg.points, n_groups, set.fps_seed);
    const auto groups = preprocess::knn_group(fg.points, centers, group_size);
    const FeatureMap embeddings = extract_pc(spec, groups, fg.points);

    const double sr = static_cast<double>(grid_rows) / static_cast<double>(pc.height());
    const double sc = static_cast<double>(grid_cols) / static_cast<double>(pc.width());
    std::vector<preprocess::GridPos> positions;
    positions.reserve(centers.size());
    for (std::size_t idx : centers) {
        const std::size_t pixel = fg.pixels[idx];
        const double r = static_cast<double>(pixel / pc.width());
        const double c = static_cast<double>(pixel % pc.width());
        positions.push_back({(r + 0.5) * sr - 0.5, (c + 0.5) * sc - 0.5});
    }

    const std::size_t bh = pc.height() / grid_rows;
    const std::size_t bw = pc.width() / grid_cols;
    std::vector<std::uint8_t> mask(grid_rows * grid_cols, 0);
    for (std::size_t pixel : fg.pixels) {
        const std::size_t r = pixel / pc.width() / bh;
        const std::size_t c = pixel % pc.width() / bw;
        mask[r * grid_cols + c] = 1;
    }
    const std::size_t k = std::min(set.grouping.idw_neighbors, centers.size());
    const FeatureMap dense =
        preprocess::idw_interpolate(positions, embeddings, grid_rows, grid_cols, k, set.grouping.idw_power, &mask);
    return preprocess::pool_align(dense, preprocess::PoolMode::Down2);
}

FeatureMap extract(const ExtractorSet& set, Modality modality, const PixelGrid& raw, std::string_view sample_id) {
    if (modality == Modality::Rgb) {
        RgbImage image;
        static_cast<PixelGrid&>(image) = raw;
        return extract_rgb(set.rgb, image, sample_id);
    }
    StructuredPointCloud pc;
    static_cast<PixelGrid&>(pc) = raw;
    return extract_pc_map(set, pc, sample_id);
}

}  // namespace xmad::extractor
