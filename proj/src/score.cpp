#include "xmad/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "xmad/error.hpp"
#include "xmad/parallel.hpp"
#include "xmad/random.hpp"

using json = nlohmann::json;

namespace xmad::score {

PhiResult phi_detail(const FeatureMap& features, const bank::MemoryBank& bank, std::size_t workers) {
    require(features.dim() == bank.dim, ErrorKind::Shape,
            "feature width " + std::to_string(features.dim()) + " != bank width " + std::to_string(bank.dim));
    PhiResult out{ScoreMap(features.rows(), features.cols()), std::vector<std::size_t>(features.cells(), 0)};
    parallel_chunks(features.cells(), workers, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t c = begin; c < end; ++c) {
            if (features.is_background(c)) continue;
            const auto nn = bank::nn_query(bank, features.cell(c));
            out.map.values[c] = nn.distance;
            out.nearest[c] = nn.index;
        }
    });
    return out;
}

ScoreMap phi(const FeatureMap& features, const bank::MemoryBank& bank, std::size_t workers) {
    return phi_detail(features, bank, workers).map;
}

PsiResult psi_of(const PhiResult& phi) {
    PsiResult r;
    r.score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < phi.map.values.size(); ++c) {
        if (phi.map.values[c] > r.score) {
            r.score = phi.map.values[c];
            r.cell = c;
            r.bank_row = phi.nearest[c];
        }
    }
    if (phi.map.values.empty()) r.score = 0.0;
    return r;
}

PsiResult psi(const FeatureMap& features, const bank::MemoryBank& bank, std::size_t workers) {
    return psi_of(phi_detail(features, bank, workers));
}

const char* to_string(CorrectionRule rule) {
    switch (rule) {
        case CorrectionRule::Mean: return "mean";
        case CorrectionRule::Median: return "median";
        case CorrectionRule::Max: return "max";
    }
    return "?";
}

CorrectionRule parse_correction(std::string_view text) {
    if (text == "mean") return CorrectionRule::Mean;
    if (text == "median") return CorrectionRule::Median;
    if (text == "max") return CorrectionRule::Max;
    fail(ErrorKind::Usage, "unknown correction rule '" + std::string(text) + "' (expected mean|median|max)");
}

double correction_factor(std::span<const double> scores, CorrectionRule rule) {
    require(!scores.empty(), ErrorKind::Value, "correction factor of an empty score list");
    for (double s : scores) {
        require(std::isfinite(s) && s >= 0.0, ErrorKind::Value, "training scores must be finite and non-negative");
    }
    double stat = 0.0;
    switch (rule) {
        case CorrectionRule::Mean: {
            double sum = 0.0;
            for (double s : scores) sum += s;
            stat = sum / static_cast<double>(scores.size());
            break;
        }
        case CorrectionRule::Median: {
            std::vector<double> v(scores.begin(), scores.end());
            std::sort(v.begin(), v.end());
            const std::size_t n = v.size();
            stat = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
            break;
        }
        case CorrectionRule::Max:
            stat = *std::max_element(scores.begin(), scores.end());
            break;
    }
    return stat == 0.0 ? 1.0 : 1.0 / stat;
}

std::pair<double, double> fit_correction(std::span<const double> psi_pc, std::span<const double> psi_rgb,
                                         CorrectionRule rule) {
    return {correction_factor(psi_pc, rule), correction_factor(psi_rgb, rule)};
}

OneClassLinear fit_one_class(std::span<const std::array<double, 2>> pairs, const OneClassConfig& cfg) {
    require(pairs.size() >= 2, ErrorKind::Data,
            "one-class fit needs at least 2 training pairs, got " + std::to_string(pairs.size()));
    require(cfg.nu > 0.0 && cfg.nu <= 1.0, ErrorKind::Value, "nu must lie in (0, 1]");
    require(cfg.learning_rate > 0.0, ErrorKind::Value, "fusion learning rate must be positive");
    std::vector<std::array<double, 2>> sorted(pairs.begin(), pairs.end());
    std::sort(sorted.begin(), sorted.end());

    Rng rng(cfg.seed);
    double w0 = 0.0, w1 = 0.0, b = 0.0;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto& x = sorted[uniform_index(rng, sorted.size())];
        const bool active = w0 * x[0] + w1 * x[1] + b < 1.0;
        const double g0 = cfg.nu * w0 - (active ? x[0] : 0.0);
        const double g1 = cfg.nu * w1 - (active ? x[1] : 0.0);
        const double gb = cfg.nu - (active ? 1.0 : 0.0);
        w0 -= cfg.learning_rate * g0;
        w1 -= cfg.learning_rate * g1;
        b -= cfg.learning_rate * gb;
    }
    OneClassLinear model;
    model.w = {w0, w1};
    model.rho = 1.0 - b;
    model.trained = true;
    return model;
}

std::string InferenceMode::name() const {
    switch (kind) {
        case ModeKind::Single: return std::string("single-") + to_string(main);
        case ModeKind::Dual: return "dual";
        case ModeKind::Mtfi: return std::string("mtfi-") + distill::to_string(route) + "-" + to_string(main);
    }
    return "?";
}

InferenceMode parse_mode(std::string_view kind, Modality main, distill::Route route) {
    InferenceMode m;
    m.main = main;
    m.route = route;
    if (kind == "single") {
        m.kind = ModeKind::Single;
    } else if (kind == "dual") {
        m.kind = ModeKind::Dual;
    } else if (kind == "mtfi") {
        m.kind = ModeKind::Mtfi;
    } else {
        fail(ErrorKind::Usage, "unknown mode '" + std::string(kind) + "' (expected single|dual|mtfi)");
    }
    return m;
}

ScoreMap upsample_bilinear(const ScoreMap& map, std::size_t scale) {
    require(scale >= 1, ErrorKind::Value, "upsampling scale must be at least 1");
    if (scale == 1) return map;
    ScoreMap out(map.rows * scale, map.cols * scale);
    auto coord = [scale](std::size_t dst, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
        double src = (static_cast<double>(dst) + 0.5) / static_cast<double>(scale) - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(src));
        i1 = std::min(i0 + 1, n - 1);
        t = src - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < out.rows; ++y) {
        std::size_t r0, r1;
        double ty;
        coord(y, map.rows, r0, r1, ty);
        for (std::size_t x = 0; x < out.cols; ++x) {
            std::size_t c0, c1;
            double tx;
            coord(x, map.cols, c0, c1, tx);
            const double top = map.at(r0, c0) * (1.0 - tx) + map.at(r0, c1) * tx;
            const double bottom = map.at(r1, c0) * (1.0 - tx) + map.at(r1, c1) * tx;
            out.at(y, x) = top * (1.0 - ty) + bottom * ty;
        }
    }
    return out;
}

namespace {

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    const auto len = static_cast<std::ptrdiff_t>(n);
    while (i < 0 || i >= len) i = i < 0 ? -i - 1 : 2 * len - i - 1;
    return static_cast<std::size_t>(i);
}

}  // namespace

ScoreMap gaussian_smooth(const ScoreMap& map, double sigma) {
    require(sigma > 0.0, ErrorKind::Value, "smoothing sigma must be positive");
    const auto radius = static_cast<std::ptrdiff_t>(4.0 * sigma + 0.5);
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = v;
        total += v;
    }
    for (double& v : kernel) v /= total;

    ScoreMap tmp(map.rows, map.cols);
    for (std::size_t r = 0; r < map.rows; ++r) {
        for (std::size_t c = 0; c < map.cols; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                s += kernel[static_cast<std::size_t>(k + radius)] *
                     map.at(r, mirror(static_cast<std::ptrdiff_t>(c) + k, map.cols));
            }
            tmp.at(r, c) = s;
        }
    }
    ScoreMap out(map.rows, map.cols);
    for (std::size_t r = 0; r < map.rows; ++r) {
        for (std::size_t c = 0; c < map.cols; ++c) {
            double s = 0.0;
            for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                s += kernel[static_cast<std::size_t>(k + radius)] *
                     tmp.at(mirror(static_cast<std::ptrdiff_t>(r) + k, map.rows), c);
            }
            out.at(r, c) = s;
        }
    }
    return out;
}

ScoreMap pixel_map(const ScoreMap& cells, const PixelMapConfig& cfg) {
    ScoreMap up = upsample_bilinear(cells, cfg.scale);
    return cfg.smooth ? gaussian_smooth(up, cfg.sigma) : up;
}

namespace {

json one_class_json(const OneClassLinear& m, const OneClassConfig& cfg) {
    return {{"w", {m.w[0], m.w[1]}}, {"rho", m.rho}, {"trained", m.trained}, {"nu", cfg.nu},
            {"learning_rate", cfg.learning_rate}, {"steps", cfg.steps}, {"seed", cfg.seed}};
}

void one_class_from_json(const json& j, OneClassLinear& m, OneClassConfig& cfg) {
    m.w = {j.at("w").at(0).get<double>(), j.at("w").at(1).get<double>()};
    m.rho = j.at("rho").get<double>();
    m.trained = j.at("trained").get<bool>();
    cfg.nu = j.at("nu").get<double>();
    cfg.learning_rate = j.at("learning_rate").get<double>();
    cfg.steps = j.at("steps").get<std::size_t>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
}

}  // namespace

json to_json(const FusionModel& model) {
    return {{"alpha", model.alpha},
            {"beta", model.beta},
            {"rule", to_string(model.rule)},
            {"image", one_class_json(model.image, model.config.image)},
            {"pixel", one_class_json(model.pixel, model.config.pixel)},
            {"max_pixel_samples", model.config.max_pixel_samples},
            {"seed", model.config.seed}};
}

FusionModel fusion_from_json(const json& j) {
    try {
        FusionModel m;
        m.alpha = j.at("alpha").get<double>();
        m.beta = j.at("beta").get<double>();
        m.rule = parse_correction(j.at("rule").get<std::string>());
        m.config.rule = m.rule;
        one_class_from_json(j.at("image"), m.image, m.config.image);
        one_class_from_json(j.at("pixel"), m.pixel, m.config.pixel);
        m.config.max_pixel_samples = j.at("max_pixel_samples").get<std::size_t>();
        m.config.seed = j.at("seed").get<std::uint64_t>();
        require(m.alpha > 0.0 && m.beta > 0.0, ErrorKind::Value, "fusion correction factors must be positive");
        return m;
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, std::string("fusion model: ") + e.what());
    }
}

void check_context(const InferenceContext& ctx, bool need_fusion) {
    const auto& mode = ctx.mode;
    auto need_bank = [&](Modality m) {
        if (ctx.banks.of(m) == nullptr) {
            fail(ErrorKind::Config, "mode " + mode.name() + " needs a " + to_string(m) + " memory bank");
        }
    };
    if (mode.kind == ModeKind::Single) {
        need_bank(mode.main);
        return;
    }
    need_bank(Modality::Pc);
    need_bank(Modality::Rgb);
    if (mode.kind == ModeKind::Mtfi) {
        if (ctx.distiller == nullptr) {
            fail(ErrorKind::Config, "mode " + mode.name() + " needs a trained " + distill::to_string(mode.route) +
                                        " network reading " + to_string(mode.main));
        }
        if (ctx.distiller->route != mode.route || ctx.distiller->source != mode.main) {
            fail(ErrorKind::Config, "mode " + mode.name() + " was given a " + distill::to_string(ctx.distiller->route) +
                                        " network reading " + to_string(ctx.distiller->source));
        }
        if (mode.route == distill::Route::FtoI && ctx.extractors == nullptr) {
            fail(ErrorKind::Config, "mode " + mode.name() + " needs extractor settings to re-extract hallucinated inputs");
        }
    }
    if (need_fusion && (ctx.fusion == nullptr || !ctx.fusion->trained())) {
        fail(ErrorKind::Config, "mode " + mode.name() + " needs a trained fusion model");
    }
}

FeatureMap resolve_features(const Sample& sample, Modality m, const extractor::ExtractorSet* extractors) {
    if (const auto& f = sample.features(m)) return *f;
    if (extractors != nullptr) {
        const auto& spec = extractors->of(m);
        if (spec.kind == extractor::Kind::Synthetic) {
            if (const PixelGrid* raw = sample.raw(m)) return extractor::extract(*extractors, m, *raw, sample.id);
        } else if (!spec.feature_root.empty()) {
            return extractor::load_precomputed(spec, sample.id);
        }
    }
    fail(ErrorKind::Data, "sample '" + sample.id + "' has no " + to_string(m) + " features");
}

namespace {

FeatureMap real_features(const Sample& sample, Modality m, const InferenceContext& ctx) {
    return resolve_features(sample, m, ctx.extractors);
}

}  // namespace

ModeFeatures mode_features(const Sample& sample, const InferenceContext& ctx) {
    ModeFeatures out;
    const Modality main = ctx.mode.main;
    switch (ctx.mode.kind) {
        case ModeKind::Single:
            (main == Modality::Rgb ? out.rgb : out.pc) = real_features(sample, main, ctx);
            break;
        case ModeKind::Dual:
            out.rgb = real_features(sample, Modality::Rgb, ctx);
            out.pc = real_features(sample, Modality::Pc, ctx);
            break;
        case ModeKind::Mtfi: {
            require(ctx.distiller != nullptr, ErrorKind::Config, "MTFI needs a distillation network");
            Sample view;
            view.id = sample.id;
            if (main == Modality::Rgb) {
                view.rgb = sample.rgb;
            } else {
                view.pc = sample.pc;
            }
            if (ctx.mode.route != distill::Route::ItoF) view.features(main) = real_features(sample, main, ctx);
            const extractor::ExtractorSet fallback{};
            const auto& ex = ctx.extractors != nullptr ? *ctx.extractors : fallback;
            FeatureMap hallucinated = distill::hallucinate(*ctx.distiller, view, ex);
            (main == Modality::Rgb ? out.rgb : out.pc) =
                view.features(main) ? *view.features(main) : real_features(sample, main, ctx);
            (main == Modality::Rgb ? out.pc : out.rgb) = std::move(hallucinated);
            break;
        }
    }
    return out;
}

json to_json(const AnomalyResult& result) {
    json psi = json::object();
    if (result.psi_rgb) psi["rgb"] = *result.psi_rgb;
    if (result.psi_pc) psi["pc"] = *result.psi_pc;
    return {{"id", result.id},
            {"mode", result.mode},
            {"image_score", result.image_score},
            {"psi", psi},
            {"pixel_map", {{"rows", result.pixel_map.rows}, {"cols", result.pixel_map.cols}}}};
}

namespace {

struct ModalScores {
    std::optional<PhiResult> rgb;
    std::optional<PhiResult> pc;
};

ModalScores score_modalities(const ModeFeatures& feats, const InferenceContext& ctx) {
    ModalScores s;
    if (feats.rgb) s.rgb = phi_detail(*feats.rgb, *ctx.banks.rgb, ctx.workers);
    if (feats.pc) s.pc = phi_detail(*feats.pc, *ctx.banks.pc, ctx.workers);
    return s;
}

}  // namespace

AnomalyResult infer(const Sample& sample, const InferenceContext& ctx) {
    check_context(ctx, ctx.mode.kind != ModeKind::Single);
    const ModeFeatures feats = mode_features(sample, ctx);
    const ModalScores scores = score_modalities(feats, ctx);

    AnomalyResult r;
    r.id = sample.id;
    r.mode = ctx.mode.name();
    if (scores.rgb) {
        r.psi_rgb = psi_of(*scores.rgb).score;
        r.phi_rgb = scores.rgb->map;
    }
    if (scores.pc) {
        r.psi_pc = psi_of(*scores.pc).score;
        r.phi_pc = scores.pc->map;
    }
    if (ctx.mode.kind == ModeKind::Single) {
        const bool rgb = ctx.mode.main == Modality::Rgb;
        r.image_score = rgb ? *r.psi_rgb : *r.psi_pc;
        r.pixel_map = pixel_map(rgb ? *r.phi_rgb : *r.phi_pc, ctx.pixel);
        return r;
    }
    const FusionModel& f = *ctx.fusion;
    r.image_score = f.image.anomaly_score(f.alpha * *r.psi_pc, f.beta * *r.psi_rgb);
    const ScoreMap pm_pc = pixel_map(*r.phi_pc, ctx.pixel);
    const ScoreMap pm_rgb = pixel_map(*r.phi_rgb, ctx.pixel);
    require(pm_pc.rows == pm_rgb.rows && pm_pc.cols == pm_rgb.cols, ErrorKind::Shape,
            "sample '" + sample.id + "': modality score maps differ in shape");
    r.pixel_map = ScoreMap(pm_pc.rows, pm_pc.cols);
    for (std::size_t i = 0; i < r.pixel_map.values.size(); ++i) {
        r.pixel_map.values[i] = f.pixel.anomaly_score(f.alpha * pm_pc.values[i], f.beta * pm_rgb.values[i]);
    }
    return r;
}

FusionModel fit_fusion_model(std::span<const Sample> train, const InferenceContext& ctx, const FusionConfig& cfg) {
    FusionModel model;
    model.rule = cfg.rule;
    model.config = cfg;
    if (ctx.mode.kind == ModeKind::Single) return model;
    check_context(ctx, false);
    require(!train.empty(), ErrorKind::Data, "fusion fit needs training samples");

    std::vector<ScoreMap> phi_pc, phi_rgb;
    std::vector<double> psi_pc, psi_rgb;
    phi_pc.reserve(train.size());
    phi_rgb.reserve(train.size());
    for (const auto& sample : train) {
        const ModalScores s = score_modalities(mode_features(sample, ctx), ctx);
        psi_pc.push_back(psi_of(*s.pc).score);
        psi_rgb.push_back(psi_of(*s.rgb).score);
        phi_pc.push_back(s.pc->map);
        phi_rgb.push_back(s.rgb->map);
    }
    std::tie(model.alpha, model.beta) = fit_correction(psi_pc, psi_rgb, cfg.rule);

    std::vector<std::array<double, 2>> image_pairs;
    image_pairs.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) image_pairs.push_back({model.alpha * psi_pc[i], model.beta * psi_rgb[i]});
    OneClassConfig image_cfg = cfg.image;
    image_cfg.seed = derive_seed(cfg.seed, 1);
    model.image = fit_one_class(image_pairs, image_cfg);
    model.config.image = image_cfg;

    // Selection sampling keeps a seeded uniform subset of pixels in scan order.
    const std::size_t per_sample = phi_pc[0].rows * ctx.pixel.scale * phi_pc[0].cols * ctx.pixel.scale;
    const std::size_t total = per_sample * train.size();
    const std::size_t want = std::min(total, cfg.max_pixel_samples);
    Rng rng(derive_seed(cfg.seed, 3));
    std::vector<std::array<double, 2>> pixel_pairs;
    pixel_pairs.reserve(want);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const ScoreMap pm_pc = pixel_map(phi_pc[i], ctx.pixel);
        const ScoreMap pm_rgb = pixel_map(phi_rgb[i], ctx.pixel);
        require(pm_pc.values.size() == per_sample && pm_rgb.values.size() == per_sample, ErrorKind::Shape,
                "training sample '" + train[i].id + "' has a differently sized score map");
        for (std::size_t p = 0; p < per_sample; ++p, ++seen) {
            const std::size_t needed = want - pixel_pairs.size();
            if (needed == 0) break;
            if (uniform01(rng) * static_cast<double>(total - seen) < static_cast<double>(needed)) {
                pixel_pairs.push_back({model.alpha * pm_pc.values[p], model.beta * pm_rgb.values[p]});
            }
        }
    }
    OneClassConfig pixel_cfg = cfg.pixel;
    pixel_cfg.seed = derive_seed(cfg.seed, 2);
    model.pixel = fit_one_class(pixel_pairs, pixel_cfg);
    model.config.pixel = pixel_cfg;
    return model;
}

}  // namespace xmad::score
