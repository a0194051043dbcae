#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xmad/bank.hpp"
#include "xmad/distill.hpp"
#include "xmad/extractor.hpp"
#include "xmad/types.hpp"

namespace xmad::score {

/// Per-cell nearest-neighbour distance to a bank plus the row that attained it.
/// Background cells score 0 and report row 0.
struct PhiResult {
    ScoreMap map;
    std::vector<std::size_t> nearest;
};

PhiResult phi_detail(const FeatureMap& features, const bank::MemoryBank& bank, std::size_t workers = 1);
ScoreMap phi(const FeatureMap& features, const bank::MemoryBank& bank, std::size_t workers = 1);

struct PsiResult {
    double score = 0.0;
    std::size_t cell = 0;
    std::size_t bank_row = 0;
};

/// Maximum of the phi map; ties go to the lowest row-major cell.
PsiResult psi(const FeatureMap& features, const bank::MemoryBank& bank, std::size_t workers = 1);
PsiResult psi_of(const PhiResult& phi);

enum class CorrectionRule { Mean, Median, Max };

const char* to_string(CorrectionRule rule);
CorrectionRule parse_correction(std::string_view text);

/// Reciprocal of the chosen statistic; 1 when the statistic is 0.
double correction_factor(std::span<const double> scores, CorrectionRule rule = CorrectionRule::Mean);
/// (alpha, beta) for (point cloud, RGB).
std::pair<double, double> fit_correction(std::span<const double> psi_pc, std::span<const double> psi_rgb,
                                         CorrectionRule rule = CorrectionRule::Mean);

struct OneClassConfig {
    double nu = 0.5;
    double learning_rate = 1e-4;
    std::size_t steps = 1000;
    std::uint64_t seed = 0;
};

/// Linear one-class model over (alpha*pc, beta*rgb) pairs. Scores grow with
/// distance from the normal cluster along the learned direction.
struct OneClassLinear {
    std::array<double, 2> w{0.0, 0.0};
    double rho = 0.0;
    bool trained = false;

    double decision(double pc, double rgb) const { return w[0] * pc + w[1] * rgb - rho; }
    double anomaly_score(double pc, double rgb) const { return decision(pc, rgb); }
    bool operator==(const OneClassLinear&) const = default;
};

/// SGD on (nu/2)|w|^2 + nu*b + mean(max(0, 1 - (w.x + b))) with rho = 1 - b.
/// Pairs are sorted first, so the model depends only on their multiset.
OneClassLinear fit_one_class(std::span<const std::array<double, 2>> pairs, const OneClassConfig& cfg);

enum class ModeKind { Single, Dual, Mtfi };

struct InferenceMode {
    ModeKind kind = ModeKind::Single;
    /// The modality available at inference for Single and MTFI.
    Modality main = Modality::Pc;
    distill::Route route = distill::Route::FtoF;

    std::string name() const;
};

InferenceMode parse_mode(std::string_view kind, Modality main, distill::Route route);

struct PixelMapConfig {
    /// Output pixels per cell edge.
    std::size_t scale = 4;
    double sigma = 4.0;
    bool smooth = true;
};

/// Bilinear resize by an integer factor with half-pixel centres.
ScoreMap upsample_bilinear(const ScoreMap& map, std::size_t scale);
/// Separable Gaussian with mirrored borders and radius round(4 sigma).
ScoreMap gaussian_smooth(const ScoreMap& map, double sigma);
ScoreMap pixel_map(const ScoreMap& cells, const PixelMapConfig& cfg);

struct FusionConfig {
    CorrectionRule rule = CorrectionRule::Mean;
    OneClassConfig image{};
    OneClassConfig pixel{};
    std::size_t max_pixel_samples = 100000;
    std::uint64_t seed = 0;
};

struct FusionModel {
    double alpha = 1.0;  // point cloud
    double beta = 1.0;   // RGB
    CorrectionRule rule = CorrectionRule::Mean;
    OneClassLinear image;
    OneClassLinear pixel;
    FusionConfig config{};

    bool trained() const { return image.trained && pixel.trained; }
    bool operator==(const FusionModel& other) const {
        return alpha == other.alpha && beta == other.beta && rule == other.rule && image == other.image &&
               pixel == other.pixel;
    }
};

nlohmann::json to_json(const FusionModel& model);
FusionModel fusion_from_json(const nlohmann::json& j);

struct Banks {
    const bank::MemoryBank* rgb = nullptr;
    const bank::MemoryBank* pc = nullptr;

    const bank::MemoryBank* of(Modality m) const { return m == Modality::Rgb ? rgb : pc; }
};

struct InferenceContext {
    Banks banks;
    InferenceMode mode;
    const FusionModel* fusion = nullptr;
    const distill::DenseNet* distiller = nullptr;
    const extractor::ExtractorSet* extractors = nullptr;
    PixelMapConfig pixel{};
    std::size_t workers = 1;
};

/// Throws a configuration error naming the first missing bank, network or fusion model.
void check_context(const InferenceContext& ctx, bool need_fusion);

/// Feature maps a mode scores: the real main modality, and for Dual the real
/// other one or for MTFI its hallucination. Real features come from the sample
/// or, when absent, from a synthetic extractor over the raw input.
struct ModeFeatures {
    std::optional<FeatureMap> rgb;
    std::optional<FeatureMap> pc;

    const std::optional<FeatureMap>& of(Modality m) const { return m == Modality::Rgb ? rgb : pc; }
};

ModeFeatures mode_features(const Sample& sample, const InferenceContext& ctx);

/// The sample's own features for a modality, or a synthetic extraction of its
/// raw input, or a precomputed file; a data error when none is available.
FeatureMap resolve_features(const Sample& sample, Modality m, const extractor::ExtractorSet* extractors);

struct AnomalyResult {
    std::string id;
    std::string mode;
    double image_score = 0.0;
    ScoreMap pixel_map;
    std::optional<double> psi_rgb;
    std::optional<double> psi_pc;
    std::optional<ScoreMap> phi_rgb;
    std::optional<ScoreMap> phi_pc;

    bool operator==(const AnomalyResult&) const = default;
};

nlohmann::json to_json(const AnomalyResult& result);

AnomalyResult infer(const Sample& sample, const InferenceContext& ctx);

/// Fits alpha/beta and both one-class models on training scores produced the
/// same way as at inference under ctx.mode. Single mode returns an untrained model.
FusionModel fit_fusion_model(std::span<const Sample> train, const InferenceContext& ctx, const FusionConfig& cfg);

}  // namespace xmad::score
