#include "xmad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "xmad/error.hpp"
#include "xmad/random.hpp"

namespace xmad::synth {
namespace {

constexpr double kPixelPitch = 0.002;
constexpr double kObjectHeight = 0.02;
constexpr double kReliefHeight = 0.004;
constexpr double kBackdrop = 0.05;
// Off-manifold displacement per unit of anomaly strength, in feature and
// pre-sigmoid pixel units respectively.
constexpr double kPcDisplacement = 0.12;
constexpr double kRgbDisplacement = 0.35;

struct ClassModel {
    std::size_t dim = 0;
    std::size_t latent = 0;
    std::size_t pixels = 0;              // patch*patch
    std::vector<double> manifold;        // dim x latent
    std::vector<double> manifold_bias;   // dim
    std::vector<double> render;          // (pixels*3) x dim
    std::vector<double> render_bias;     // pixels*3
    std::vector<double> relief;          // pixels x dim
};

ClassModel make_class(const SynthConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, 1));
    ClassModel m;
    m.dim = cfg.dim;
    m.latent = cfg.latent_dim;
    m.pixels = cfg.patch * cfg.patch;
    m.manifold.resize(m.dim * m.latent);
    for (auto& v : m.manifold) v = normal(rng);
    m.manifold_bias.resize(m.dim);
    for (auto& v : m.manifold_bias) v = 0.3 * normal(rng);
    const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(m.dim));
    m.render.resize(m.pixels * 3 * m.dim);
    for (auto& v : m.render) v = 2.0 * inv_sqrt_dim * normal(rng);
    m.render_bias.resize(m.pixels * 3);
    for (auto& v : m.render_bias) v = 0.3 * normal(rng);
    m.relief.resize(m.pixels * m.dim);
    for (auto& v : m.relief) v = inv_sqrt_dim * normal(rng);
    return m;
}

double plane_height(double x, double y) {
    const auto p = support_plane();
    return (p.offset - p.normal[0] * x - p.normal[1] * y) / p.normal[2];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

std::vector<double> unit_direction(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    double norm2 = 0.0;
    for (auto& x : v) {
        x = normal(rng);
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-300));
    for (auto& x : v) x *= inv;
    return v;
}

struct Block {
    std::size_t r0 = 0, c0 = 0, h = 0, w = 0;
    bool contains(std::size_t r, std::size_t c) const { return r >= r0 && r < r0 + h && c >= c0 && c < c0 + w; }
};

Sample make_sample(const SynthConfig& cfg, const ClassModel& model, const extractor::ExtractorSpec& rgb_spec,
                   std::uint64_t stream, std::string id, bool anomalous, bool with_mask) {
    Rng rng(derive_seed(cfg.seed, stream));
    const std::size_t rows = cfg.rows;
    const std::size_t cols = cfg.cols;
    const std::size_t patch = cfg.patch;
    const std::size_t height = rows * patch;
    const std::size_t width = cols * patch;
    const std::size_t border = cfg.background_border;

    // Smooth latent field: a few random plane waves per latent coordinate.
    constexpr int kWaves = 3;
    std::vector<std::array<double, 4>> waves(cfg.latent_dim * kWaves);
    for (auto& w : waves) {
        w = {uniform(rng, 0.3, 0.8), uniform(rng, 0.0, 1.5), uniform(rng, 0.0, 1.5),
             uniform(rng, 0.0, 2.0 * std::numbers::pi)};
    }

    // Anomaly block, drawn for every test sample so the stream layout does not depend on the label.
    const std::size_t inner_rows = rows - 2 * border;
    const std::size_t inner_cols = cols - 2 * border;
    const std::size_t max_h = std::max<std::size_t>(2, inner_rows / 4);
    const std::size_t max_w = std::max<std::size_t>(2, inner_cols / 4);
    Block block;
    block.h = std::min(inner_rows, 2 + uniform_index(rng, max_h - 1));
    block.w = std::min(inner_cols, 2 + uniform_index(rng, max_w - 1));
    block.r0 = border + uniform_index(rng, inner_rows - block.h + 1);
    block.c0 = border + uniform_index(rng, inner_cols - block.w + 1);
    const double strength = anomalous ? cfg.anomaly_strength : 0.0;

    auto foreground = [&](std::size_t r, std::size_t c) {
        return r >= border && r < rows - border && c >= border && c < cols - border;
    };

    Sample s;
    s.id = std::move(id);
    FeatureMap pc_features(rows, cols, cfg.dim);
    RgbImage image(height, width);
    StructuredPointCloud cloud(height, width);
    std::vector<double> z(cfg.latent_dim);
    std::vector<double> pixel_logits(model.pixels * 3);

    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            // Noise and displacement draws happen for every cell to keep streams aligned.
            std::vector<double> noise(model.pixels * 3);
            for (auto& v : noise) v = normal(rng);
            const auto pc_dir = unit_direction(rng, cfg.dim);
            const auto rgb_dir = unit_direction(rng, model.pixels * 3);
            if (!foreground(r, c)) continue;

            for (std::size_t k = 0; k < cfg.latent_dim; ++k) {
                double acc = 0.0;
                for (int w = 0; w < kWaves; ++w) {
                    const auto& wave = waves[k * kWaves + w];
                    acc += wave[0] * std::sin(2.0 * std::numbers::pi *
                                                  (wave[1] * static_cast<double>(r) / static_cast<double>(rows) +
                                                   wave[2] * static_cast<double>(c) / static_cast<double>(cols)) +
                                              wave[3]);
                }
                z[k] = acc;
            }
            auto f = pc_features.cell(r, c);
            std::vector<double> clean(cfg.dim);
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                double acc = model.manifold_bias[d];
                for (std::size_t k = 0; k < cfg.latent_dim; ++k) acc += model.manifold[d * cfg.latent_dim + k] * z[k];
                clean[d] = std::tanh(acc);
            }
            const bool hit = strength > 0.0 && block.contains(r, c);
            for (std::size_t d = 0; d < cfg.dim; ++d) {
                const double shift = hit ? strength * kPcDisplacement * std::sqrt(static_cast<double>(cfg.dim)) * pc_dir[d]
                                         : 0.0;
                f[d] = static_cast<float>(clean[d] + shift);
            }

            // RGB rendering from the clean PC features, blended with pixel noise.
            const double coupling = cfg.cross_modal_coupling;
            for (std::size_t j = 0; j < model.pixels * 3; ++j) {
                double acc = model.render_bias[j];
                for (std::size_t d = 0; d < cfg.dim; ++d) acc += model.render[j * cfg.dim + d] * clean[d];
                double logit = coupling * acc + (1.0 - coupling) * noise[j];
                if (hit) logit += strength * kRgbDisplacement * std::sqrt(static_cast<double>(model.pixels * 3)) * rgb_dir[j];
                pixel_logits[j] = logit;
            }
            for (std::size_t y = 0; y < patch; ++y) {
                for (std::size_t x = 0; x < patch; ++x) {
                    const std::size_t pr = r * patch + y;
                    const std::size_t pcol = c * patch + x;
                    const std::size_t p = y * patch + x;
                    auto px = image.at(pr, pcol);
                    for (std::size_t ch = 0; ch < 3; ++ch) px[ch] = static_cast<float>(sigmoid(pixel_logits[p * 3 + ch]));

                    double relief = 0.0;
                    for (std::size_t d = 0; d < cfg.dim; ++d) relief += model.relief[p * cfg.dim + d] * f[d];
                    const double xw = (static_cast<double>(pcol) - static_cast<double>(width) / 2.0) * kPixelPitch;
                    const double yw = (static_cast<double>(pr) - static_cast<double>(height) / 2.0) * kPixelPitch;
                    auto pt = cloud.at(pr, pcol);
                    pt[0] = static_cast<float>(xw);
                    pt[1] = static_cast<float>(yw);
                    pt[2] = static_cast<float>(plane_height(xw, yw) + kObjectHeight + kReliefHeight * std::tanh(relief));
                }
            }
        }
    }

    s.pc_features = std::move(pc_features);
    s.rgb_features = extractor::extract_rgb(rgb_spec, image);

    if (cfg.emit_background_plane) {
        for (std::size_t pr = 0; pr < height; ++pr) {
            for (std::size_t pcol = 0; pcol < width; ++pcol) {
                if (foreground(pr / patch, pcol / patch)) continue;
                const double xw = (static_cast<double>(pcol) - static_cast<double>(width) / 2.0) * kPixelPitch;
                const double yw = (static_cast<double>(pr) - static_cast<double>(height) / 2.0) * kPixelPitch;
                auto pt = cloud.at(pr, pcol);
                pt[0] = static_cast<float>(xw);
                pt[1] = static_cast<float>(yw);
                pt[2] = static_cast<float>(plane_height(xw, yw));
                std::ranges::fill(image.at(pr, pcol), static_cast<float>(kBackdrop));
            }
        }
    }
    s.rgb = std::move(image);
    s.pc = std::move(cloud);

    if (with_mask) {
        Mask mask(height, width);
        if (anomalous) {
            for (std::size_t pr = block.r0 * patch; pr < (block.r0 + block.h) * patch; ++pr) {
                for (std::size_t pcol = block.c0 * patch; pcol < (block.c0 + block.w) * patch; ++pcol) mask.at(pr, pcol) = 1;
            }
        }
        s.gt_mask = std::move(mask);
        s.label = anomalous ? Label::Anomalous : Label::Normal;
    } else {
        s.label = Label::Normal;
    }
    return s;
}

std::string numbered(const char* prefix, std::size_t i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
    return buf;
}

}  // namespace

void validate(const SynthConfig& cfg) {
    require(cfg.n_train >= 1 && cfg.n_test_normal >= 1 && cfg.n_test_anomalous >= 1, ErrorKind::Value,
            "synthetic sample counts must be at least 1");
    require(cfg.rows >= 1 && cfg.cols >= 1 && cfg.dim >= 1 && cfg.latent_dim >= 1 && cfg.patch >= 1, ErrorKind::Value,
            "synthetic grid, dimension and patch must be positive");
    require(2 * cfg.background_border + 2 <= std::min(cfg.rows, cfg.cols), ErrorKind::Value,
            "background border leaves no room for a 2x2 anomaly block");
    require(std::isfinite(cfg.cross_modal_coupling) && cfg.cross_modal_coupling >= 0.0 &&
                cfg.cross_modal_coupling <= 1.0,
            ErrorKind::Value, "cross_modal_coupling must lie in [0, 1]");
    require(std::isfinite(cfg.anomaly_strength) && cfg.anomaly_strength >= 0.0, ErrorKind::Value,
            "anomaly_strength must be finite and non-negative");
}

preprocess::Plane support_plane() {
    const double nx = -0.05, ny = 0.03, nz = 1.0;
    const double norm = std::sqrt(nx * nx + ny * ny + nz * nz);
    preprocess::Plane p;
    p.normal = {nx / norm, ny / norm, nz / norm};
    p.offset = 0.4 / norm;
    return p;
}

extractor::ExtractorSet extractors(const SynthConfig& cfg) {
    extractor::ExtractorSet set;
    set.rgb = {.modality = Modality::Rgb,
               .kind = extractor::Kind::Synthetic,
               .out_rows = cfg.rows,
               .out_cols = cfg.cols,
               .out_dim = cfg.dim,
               .seed = derive_seed(cfg.seed, 2)};
    set.pc = {.modality = Modality::Pc,
              .kind = extractor::Kind::Synthetic,
              .out_rows = cfg.rows,
              .out_cols = cfg.cols,
              .out_dim = cfg.dim,
              .seed = derive_seed(cfg.seed, 3),
              .input_scale = 1.0 / (cfg.patch * kPixelPitch)};
    const std::size_t points = cfg.rows * cfg.cols * cfg.patch * cfg.patch;
    set.grouping.n_groups = std::max<std::size_t>(1, points / 16);
    set.grouping.group_size = std::min<std::size_t>(32, points);
    set.fps_seed = derive_seed(cfg.seed, 4);
    return set;
}

Dataset generate_synthetic_dataset(const SynthConfig& cfg) {
    validate(cfg);
    const ClassModel model = make_class(cfg);
    const auto rgb_spec = extractors(cfg).rgb;
    Dataset out;
    out.train.reserve(cfg.n_train);
    for (std::size_t i = 0; i < cfg.n_train; ++i) {
        out.train.push_back(make_sample(cfg, model, rgb_spec, 1000 + i, numbered("synthetic/train/good/", i), false, false));
    }
    for (std::size_t i = 0; i < cfg.n_test_normal; ++i) {
        out.test.push_back(
            make_sample(cfg, model, rgb_spec, 1'000'000 + i, numbered("synthetic/test/good/", i), false, true));
    }
    for (std::size_t i = 0; i < cfg.n_test_anomalous; ++i) {
        out.test.push_back(
            make_sample(cfg, model, rgb_spec, 2'000'000 + i, numbered("synthetic/test/block/", i), true, true));
    }
    return out;
}

}  // namespace xmad::synth
