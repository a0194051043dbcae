#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmad/bank.hpp"
#include "xmad/distill.hpp"
#include "xmad/extractor.hpp"
#include "xmad/metrics.hpp"
#include "xmad/preprocess.hpp"
#include "xmad/score.hpp"
#include "xmad/synth.hpp"
#include "xmad/types.hpp"

namespace xmad::pipeline {

inline constexpr const char* kToolVersion = "xmad 1.0.0";

struct ExtractorConfig {
    extractor::Kind kind = extractor::Kind::Precomputed;
    std::size_t rows = 56;
    std::size_t cols = 56;
    std::size_t rgb_dim = 768;
    std::size_t pc_dim = 768;
    std::uint64_t seed = 0;
    preprocess::GroupingConfig grouping{};
    double pc_input_scale = 1.0;
};

struct PreprocessConfig {
    preprocess::RansacConfig ransac{};
    double threshold = 0.005;
    /// Square output size for raw inputs and masks; 0 keeps the input size.
    std::size_t image_size = 0;
    /// Also write synthetic-extractor features for every processed sample.
    bool write_features = false;
};

struct MetricsConfig {
    double fpr_limit = 0.3;
    bool foreground_only = false;
};

/// Declarative run settings; every field has a default and JSON keys mirror the names.
struct RunConfig {
    std::filesystem::path dataset_root;
    std::vector<std::string> classes;
    std::filesystem::path output = "xmad_out";
    std::string mode = "mtfi";
    Modality main = Modality::Pc;
    distill::Route route = distill::Route::FtoF;
    std::size_t workers = 1;
    ExtractorConfig extractor{};
    PreprocessConfig preprocess{};
    bank::BankConfig bank{};
    distill::TrainConfig distill{};
    /// True once the learning rate was set explicitly; otherwise the route default applies.
    bool distill_lr_set = false;
    score::FusionConfig fusion{};
    score::PixelMapConfig pixel{};
    MetricsConfig metrics{};
    synth::SynthConfig synth{};

    score::InferenceMode inference_mode() const { return score::parse_mode(mode, main, route); }
    distill::TrainConfig train_config() const;
    extractor::ExtractorSet extractor_set() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Applies the keys present in `j` over `base`; unknown keys are a config error.
RunConfig merge_json(RunConfig base, const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Fills missing feature maps of the given modalities from the extractors.
void ensure_features(std::vector<Sample>& samples, std::span<const Modality> modalities,
                     const extractor::ExtractorSet& extractors);

struct ClassBanks {
    std::optional<bank::MemoryBank> rgb;
    std::optional<bank::MemoryBank> pc;

    score::Banks view() const { return {rgb ? &*rgb : nullptr, pc ? &*pc : nullptr}; }
    std::optional<bank::MemoryBank>& of(Modality m) { return m == Modality::Rgb ? rgb : pc; }
};

/// Patches of every training map of one modality; maps must be present.
bank::PatchSet train_patches(std::span<const Sample> train, Modality modality);

ClassBanks build_banks(std::span<const Sample> train, std::span<const Modality> modalities, const bank::BankConfig& cfg);

/// Per-sample inference in input order; samples run in parallel over ctx.workers.
std::vector<score::AnomalyResult> infer_all(std::span<const Sample> test, const score::InferenceContext& ctx);

metrics::ClassMetrics evaluate(const std::string& name, std::span<const score::AnomalyResult> results,
                               std::span<const Sample> test, const MetricsConfig& cfg);

struct ClassRun {
    score::FusionModel fusion;
    std::vector<score::AnomalyResult> results;
    metrics::ClassMetrics metrics;
};

/// Fits the fusion model on `train`, scores `test` and evaluates.
ClassRun run_class(const std::string& name, std::span<const Sample> train, std::span<const Sample> test,
                   const score::InferenceContext& ctx, const score::FusionConfig& fusion, const MetricsConfig& metrics);

/// Modalities a mode needs banks for.
std::vector<Modality> bank_modalities(const score::InferenceMode& mode);

/// Digest of the files under a dataset split: crc32 over "relative-path:crc32" lines.
nlohmann::json input_checksums(const std::filesystem::path& root, const std::string& class_name, const std::string& split);

/// Run manifest {tool_version, command, config, inputs}; no timestamps.
void write_run_manifest(const std::filesystem::path& path, const std::string& command, const RunConfig& cfg,
                        const nlohmann::json& inputs);

/// File-system friendly name for a sample id.
std::string id_to_filename(const std::string& id);

void save_result(const score::AnomalyResult& result, const std::filesystem::path& dir);
ScoreMap load_pixel_map(const std::filesystem::path& dir, const std::string& id);

}  // namespace xmad::pipeline
