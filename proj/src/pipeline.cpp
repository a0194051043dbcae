#include "xmad/pipeline.hpp"

#include <algorithm>
#include <set>

#include "xmad/cmft.hpp"
#include "xmad/dataset.hpp"
#include "xmad/error.hpp"
#include "xmad/fsutil.hpp"
#include "xmad/parallel.hpp"
#include "xmad/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmad::pipeline {
namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    require(j.is_object(), ErrorKind::Config, "config section '" + where + "' must be an object");
    const std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items()) {
        if (!keys.count(k)) fail(ErrorKind::Config, "unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
    }
}

template <typename T>
void take(const json& j, const char* key, T& field) {
    if (j.contains(key) && !j.at(key).is_null()) field = j.at(key).get<T>();
}

}  // namespace

distill::TrainConfig RunConfig::train_config() const {
    distill::TrainConfig t = distill;
    if (!distill_lr_set) t.learning_rate = distill::default_learning_rate(route);
    return t;
}

extractor::ExtractorSet RunConfig::extractor_set() const {
    extractor::ExtractorSet set;
    set.rgb = {.modality = Modality::Rgb, .kind = extractor.kind, .out_rows = extractor.rows, .out_cols = extractor.cols,
               .out_dim = extractor.rgb_dim, .seed = derive_seed(extractor.seed, 2), .feature_root = dataset_root};
    set.pc = {.modality = Modality::Pc, .kind = extractor.kind, .out_rows = extractor.rows, .out_cols = extractor.cols,
              .out_dim = extractor.pc_dim, .seed = derive_seed(extractor.seed, 3), .feature_root = dataset_root,
              .input_scale = extractor.pc_input_scale};
    set.grouping = extractor.grouping;
    set.fps_seed = derive_seed(extractor.seed, 4);
    return set;
}

json to_json(const RunConfig& c) {
    return {
        {"dataset_root", c.dataset_root.string()},
        {"classes", c.classes},
        {"output", c.output.string()},
        {"mode", c.mode},
        {"main", to_string(c.main)},
        {"route", distill::to_string(c.route)},
        {"workers", c.workers},
        {"extractor",
         {{"kind", extractor::to_string(c.extractor.kind)},
          {"rows", c.extractor.rows},
          {"cols", c.extractor.cols},
          {"rgb_dim", c.extractor.rgb_dim},
          {"pc_dim", c.extractor.pc_dim},
          {"seed", c.extractor.seed},
          {"n_groups", c.extractor.grouping.n_groups},
          {"group_size", c.extractor.grouping.group_size},
          {"idw_neighbors", c.extractor.grouping.idw_neighbors},
          {"idw_power", c.extractor.grouping.idw_power},
          {"pc_input_scale", c.extractor.pc_input_scale}}},
        {"preprocess",
         {{"iterations", c.preprocess.ransac.iterations},
          {"inlier_threshold", c.preprocess.ransac.inlier_threshold},
          {"min_inlier_fraction", c.preprocess.ransac.min_inlier_fraction},
          {"seed", c.preprocess.ransac.seed},
          {"threshold", c.preprocess.threshold},
          {"image_size", c.preprocess.image_size},
          {"write_features", c.preprocess.write_features}}},
        {"bank",
         {{"fraction", c.bank.fraction},
          {"metric", bank::to_string(c.bank.metric)},
          {"projection", c.bank.use_projection},
          {"projection_dim", c.bank.projection_dim},
          {"projection_density", c.bank.projection_density},
          {"seed", c.bank.seed}}},
        {"distill",
         {{"learning_rate", c.train_config().learning_rate},
          {"epochs", c.distill.epochs},
          {"warmup_epochs", c.distill.warmup_epochs},
          {"batch_size", c.distill.batch_size},
          {"beta1", c.distill.adam.beta1},
          {"beta2", c.distill.adam.beta2},
          {"eps", c.distill.adam.eps},
          {"seed", c.distill.seed},
          {"checkpoint_every", c.distill.checkpoint_every},
          {"hidden", c.distill.hidden}}},
        {"fusion",
         {{"rule", score::to_string(c.fusion.rule)},
          {"nu", c.fusion.image.nu},
          {"learning_rate", c.fusion.image.learning_rate},
          {"steps", c.fusion.image.steps},
          {"max_pixel_samples", c.fusion.max_pixel_samples},
          {"seed", c.fusion.seed}}},
        {"pixel", {{"scale", c.pixel.scale}, {"sigma", c.pixel.sigma}, {"smooth", c.pixel.smooth}}},
        {"metrics", {{"fpr_limit", c.metrics.fpr_limit}, {"foreground_only", c.metrics.foreground_only}}},
        {"synth",
         {{"n_train", c.synth.n_train},
          {"n_test_normal", c.synth.n_test_normal},
          {"n_test_anomalous", c.synth.n_test_anomalous},
          {"rows", c.synth.rows},
          {"cols", c.synth.cols},
          {"dim", c.synth.dim},
          {"coupling", c.synth.cross_modal_coupling},
          {"strength", c.synth.anomaly_strength},
          {"seed", c.synth.seed},
          {"latent_dim", c.synth.latent_dim},
          {"patch", c.synth.patch},
          {"background_border", c.synth.background_border},
          {"emit_background_plane", c.synth.emit_background_plane}}},
    };
}

RunConfig merge_json(RunConfig c, const json& j) {
    try {
        check_keys(j, "", {"dataset_root", "classes", "output", "mode", "main", "route", "workers", "extractor",
                           "preprocess", "bank", "distill", "fusion", "pixel", "metrics", "synth"});
        if (j.contains("dataset_root")) c.dataset_root = j.at("dataset_root").get<std::string>();
        take(j, "classes", c.classes);
        if (j.contains("output")) c.output = j.at("output").get<std::string>();
        take(j, "mode", c.mode);
        if (j.contains("main")) c.main = parse_modality(j.at("main").get<std::string>());
        if (j.contains("route")) c.route = distill::parse_route(j.at("route").get<std::string>());
        take(j, "workers", c.workers);
        if (j.contains("extractor")) {
            const auto& e = j.at("extractor");
            check_keys(e, "extractor", {"kind", "rows", "cols", "rgb_dim", "pc_dim", "seed", "n_groups", "group_size",
                                        "idw_neighbors", "idw_power", "pc_input_scale"});
            if (e.contains("kind")) c.extractor.kind = extractor::parse_kind(e.at("kind").get<std::string>());
            take(e, "rows", c.extractor.rows);
            take(e, "cols", c.extractor.cols);
            take(e, "rgb_dim", c.extractor.rgb_dim);
            take(e, "pc_dim", c.extractor.pc_dim);
            take(e, "seed", c.extractor.seed);
            take(e, "n_groups", c.extractor.grouping.n_groups);
            take(e, "group_size", c.extractor.grouping.group_size);
            take(e, "idw_neighbors", c.extractor.grouping.idw_neighbors);
            take(e, "idw_power", c.extractor.grouping.idw_power);
            take(e, "pc_input_scale", c.extractor.pc_input_scale);
        }
        if (j.contains("preprocess")) {
            const auto& p = j.at("preprocess");
            check_keys(p, "preprocess", {"iterations", "inlier_threshold", "min_inlier_fraction", "seed", "threshold",
                                         "image_size", "write_features"});
            take(p, "iterations", c.preprocess.ransac.iterations);
            take(p, "inlier_threshold", c.preprocess.ransac.inlier_threshold);
            take(p, "min_inlier_fraction", c.preprocess.ransac.min_inlier_fraction);
            take(p, "seed", c.preprocess.ransac.seed);
            take(p, "threshold", c.preprocess.threshold);
            take(p, "image_size", c.preprocess.image_size);
            take(p, "write_features", c.preprocess.write_features);
        }
        if (j.contains("bank")) {
            const auto& b = j.at("bank");
            check_keys(b, "bank", {"fraction", "metric", "projection", "projection_dim", "projection_density", "seed"});
            take(b, "fraction", c.bank.fraction);
            if (b.contains("metric")) c.bank.metric = bank::parse_metric(b.at("metric").get<std::string>());
            take(b, "projection", c.bank.use_projection);
            take(b, "projection_dim", c.bank.projection_dim);
            take(b, "projection_density", c.bank.projection_density);
            take(b, "seed", c.bank.seed);
        }
        if (j.contains("distill")) {
            const auto& d = j.at("distill");
            check_keys(d, "distill", {"learning_rate", "epochs", "warmup_epochs", "batch_size", "beta1", "beta2", "eps",
                                      "seed", "checkpoint_every", "hidden"});
            if (d.contains("learning_rate") && !d.at("learning_rate").is_null()) {
                c.distill.learning_rate = d.at("learning_rate").get<double>();
                c.distill_lr_set = true;
            }
            take(d, "epochs", c.distill.epochs);
            take(d, "warmup_epochs", c.distill.warmup_epochs);
            take(d, "batch_size", c.distill.batch_size);
            take(d, "beta1", c.distill.adam.beta1);
            take(d, "beta2", c.distill.adam.beta2);
            take(d, "eps", c.distill.adam.eps);
            take(d, "seed", c.distill.seed);
            take(d, "checkpoint_every", c.distill.checkpoint_every);
            take(d, "hidden", c.distill.hidden);
        }
        if (j.contains("fusion")) {
            const auto& f = j.at("fusion");
            check_keys(f, "fusion", {"rule", "nu", "learning_rate", "steps", "max_pixel_samples", "seed"});
            if (f.contains("rule")) c.fusion.rule = score::parse_correction(f.at("rule").get<std::string>());
            take(f, "nu", c.fusion.image.nu);
            take(f, "learning_rate", c.fusion.image.learning_rate);
            take(f, "steps", c.fusion.image.steps);
            c.fusion.pixel.nu = c.fusion.image.nu;
            c.fusion.pixel.learning_rate = c.fusion.image.learning_rate;
            c.fusion.pixel.steps = c.fusion.image.steps;
            take(f, "max_pixel_samples", c.fusion.max_pixel_samples);
            take(f, "seed", c.fusion.seed);
        }
        if (j.contains("pixel")) {
            const auto& p = j.at("pixel");
            check_keys(p, "pixel", {"scale", "sigma", "smooth"});
            take(p, "scale", c.pixel.scale);
            take(p, "sigma", c.pixel.sigma);
            take(p, "smooth", c.pixel.smooth);
        }
        if (j.contains("metrics")) {
            const auto& m = j.at("metrics");
            check_keys(m, "metrics", {"fpr_limit", "foreground_only"});
            take(m, "fpr_limit", c.metrics.fpr_limit);
            take(m, "foreground_only", c.metrics.foreground_only);
        }
        if (j.contains("synth")) {
            const auto& s = j.at("synth");
            check_keys(s, "synth", {"n_train", "n_test_normal", "n_test_anomalous", "rows", "cols", "dim", "coupling",
                                    "strength", "seed", "latent_dim", "patch", "background_border",
                                    "emit_background_plane"});
            take(s, "n_train", c.synth.n_train);
            take(s, "n_test_normal", c.synth.n_test_normal);
            take(s, "n_test_anomalous", c.synth.n_test_anomalous);
            take(s, "rows", c.synth.rows);
            take(s, "cols", c.synth.cols);
            take(s, "dim", c.synth.dim);
            take(s, "coupling", c.synth.cross_modal_coupling);
            take(s, "strength", c.synth.anomaly_strength);
            take(s, "seed", c.synth.seed);
            take(s, "latent_dim", c.synth.latent_dim);
            take(s, "patch", c.synth.patch);
            take(s, "background_border", c.synth.background_border);
            take(s, "emit_background_plane", c.synth.emit_background_plane);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, std::string("config: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Usage) fail(ErrorKind::Config, e.message());
        throw;
    }
    return c;
}

RunConfig load_config(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_text(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, path.string() + ": " + e.what());
    } catch (const Error& e) {
        fail(ErrorKind::Config, e.message());
    }
    return merge_json(RunConfig{}, j);
}

void ensure_features(std::vector<Sample>& samples, std::span<const Modality> modalities,
                     const extractor::ExtractorSet& extractors) {
    for (auto& s : samples) {
        for (Modality m : modalities) {
            if (!s.features(m)) s.features(m) = score::resolve_features(s, m, &extractors);
        }
    }
}

bank::PatchSet train_patches(std::span<const Sample> train, Modality modality) {
    std::vector<FeatureMap> maps;
    std::vector<std::string> ids;
    maps.reserve(train.size());
    for (const auto& s : train) {
        const auto& f = s.features(modality);
        require(f.has_value(), ErrorKind::Data,
                "training sample '" + s.id + "' has no " + to_string(modality) + " features");
        maps.push_back(*f);
        ids.push_back(s.id);
    }
    return bank::collect_patches(maps, ids);
}

ClassBanks build_banks(std::span<const Sample> train, std::span<const Modality> modalities, const bank::BankConfig& cfg) {
    ClassBanks banks;
    for (Modality m : modalities) {
        banks.of(m) = bank::build_bank_from_patches(train_patches(train, m), m, cfg);
    }
    return banks;
}

std::vector<score::AnomalyResult> infer_all(std::span<const Sample> test, const score::InferenceContext& ctx) {
    std::vector<score::AnomalyResult> out(test.size());
    score::InferenceContext inner = ctx;
    inner.workers = 1;
    parallel_chunks(test.size(), ctx.workers, [&](std::size_t begin, std::size_t end, std::size_t) {
        for (std::size_t i = begin; i < end; ++i) out[i] = score::infer(test[i], inner);
    });
    return out;
}

metrics::ClassMetrics evaluate(const std::string& name, std::span<const score::AnomalyResult> results,
                               std::span<const Sample> test, const MetricsConfig& cfg) {
    require(results.size() == test.size(), ErrorKind::Data, "one result per test sample expected");
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<ScoreMap> maps;
    std::vector<Mask> masks;
    std::vector<Mask> valid;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Sample& s = test[i];
        require(results[i].id == s.id, ErrorKind::Data, "result '" + results[i].id + "' does not match '" + s.id + "'");
        require(s.label != Label::Unknown, ErrorKind::Data, "test sample '" + s.id + "' has no label");
        scores.push_back(results[i].image_score);
        labels.push_back(s.label == Label::Anomalous ? 1 : 0);
        if (s.gt_mask) {
            maps.push_back(results[i].pixel_map);
            masks.push_back(*s.gt_mask);
            if (cfg.foreground_only) {
                require(s.pc.has_value(), ErrorKind::Data, "foreground-only scoring needs the point cloud of '" + s.id + "'");
                Mask fg(s.pc->height(), s.pc->width());
                for (std::size_t r = 0; r < fg.height; ++r) {
                    for (std::size_t c = 0; c < fg.width; ++c) fg.at(r, c) = s.pc->is_zero(r, c) ? 0 : 1;
                }
                valid.push_back(std::move(fg));
            }
        }
    }
    metrics::ClassMetrics m;
    m.name = name;
    m.i_auroc = metrics::auroc(scores, labels);
    if (!maps.empty()) {
        m.p_auroc = metrics::pixel_auroc(maps, masks, valid);
        m.aupro = metrics::aupro(maps, masks, cfg.fpr_limit);
    }
    return m;
}

ClassRun run_class(const std::string& name, std::span<const Sample> train, std::span<const Sample> test,
                   const score::InferenceContext& ctx, const score::FusionConfig& fusion, const MetricsConfig& metrics) {
    ClassRun run;
    run.fusion = score::fit_fusion_model(train, ctx, fusion);
    score::InferenceContext with_fusion = ctx;
    with_fusion.fusion = &run.fusion;
    run.results = infer_all(test, with_fusion);
    run.metrics = evaluate(name, run.results, test, metrics);
    return run;
}

std::vector<Modality> bank_modalities(const score::InferenceMode& mode) {
    if (mode.kind == score::ModeKind::Single) return {mode.main};
    return {Modality::Rgb, Modality::Pc};
}

json input_checksums(const fs::path& root, const std::string& class_name, const std::string& split) {
    const fs::path dir = root / class_name / split;
    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
        for (const auto& e : fs::recursive_directory_iterator(dir)) {
            if (e.is_regular_file()) files.push_back(e.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::string listing;
    for (const auto& f : files) listing += fs::relative(f, root).generic_string() + ":" + file_checksum(f) + "\n";
    const auto* bytes = reinterpret_cast<const unsigned char*>(listing.data());
    return {{"files", files.size()}, {"digest", crc32_hex({bytes, listing.size()})}};
}

void write_run_manifest(const fs::path& path, const std::string& command, const RunConfig& cfg, const json& inputs) {
    const json m = {{"tool_version", kToolVersion}, {"command", command}, {"config", to_json(cfg)}, {"inputs", inputs}};
    write_text(path, m.dump(2) + "\n");
}

std::string id_to_filename(const std::string& id) {
    std::string out = id;
    std::replace(out.begin(), out.end(), '/', '_');
    return out;
}

void save_result(const score::AnomalyResult& result, const fs::path& dir) {
    const std::string stem = id_to_filename(result.id);
    write_text(dir / (stem + ".json"), score::to_json(result).dump(2) + "\n");
    FeatureMap map(result.pixel_map.rows, result.pixel_map.cols, 1);
    for (std::size_t i = 0; i < result.pixel_map.values.size(); ++i) {
        map.data()[i] = static_cast<float>(result.pixel_map.values[i]);
    }
    cmft::save(map, dir / (stem + ".cmft"));
    const auto [lo, hi] = std::minmax_element(result.pixel_map.values.begin(), result.pixel_map.values.end());
    if (lo != result.pixel_map.values.end()) dataset::write_score_png(result.pixel_map, dir / (stem + ".png"), *lo, *hi);
}

ScoreMap load_pixel_map(const fs::path& dir, const std::string& id) {
    const FeatureMap map = cmft::load(dir / (id_to_filename(id) + ".cmft"));
    require(map.dim() == 1, ErrorKind::Shape, "pixel map of '" + id + "' is not single-channel");
    ScoreMap out(map.rows(), map.cols());
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = map.data()[i];
    return out;
}

}  // namespace xmad::pipeline
