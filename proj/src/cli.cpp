#include "xmad/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "xmad/bank.hpp"
#include "xmad/cmft.hpp"
#include "xmad/dataset.hpp"
#include "xmad/distill.hpp"
#include "xmad/fsutil.hpp"
#include "xmad/pipeline.hpp"
#include "xmad/preprocess.hpp"
#include "xmad/random.hpp"
#include "xmad/synth.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmad::cli {

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Usage:
        case ErrorKind::Config:
            return kExitUsage;
        default:
            return kExitData;
    }
}

namespace {

using pipeline::RunConfig;

struct Flags {
    std::string config;
    std::string root;
    std::vector<std::string> classes;
    std::string out;
    std::optional<std::string> mode, main, route, metric, extractor;
    std::optional<double> fraction, lr, fpr_limit;
    std::optional<std::size_t> epochs, workers, batch, warmup, checkpoint_every;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    std::string banks;
    std::string results;
    std::string modality = "auto";
    bool foreground_only = false;
    bool no_smooth = false;
};

RunConfig resolve_config(const Flags& f) {
    RunConfig cfg = f.config.empty() ? RunConfig{} : pipeline::load_config(f.config);
    if (const char* env = std::getenv("XMAD_DATASET_ROOT"); env != nullptr && *env != '\0') cfg.dataset_root = env;
    if (!f.root.empty()) cfg.dataset_root = f.root;
    if (!f.classes.empty()) cfg.classes = f.classes;
    if (!f.out.empty()) cfg.output = f.out;
    json j = json::object();
    if (f.mode) j["mode"] = *f.mode;
    if (f.main) j["main"] = *f.main;
    if (f.route) j["route"] = *f.route;
    if (f.workers) j["workers"] = *f.workers;
    if (f.extractor) j["extractor"]["kind"] = *f.extractor;
    if (f.metric) j["bank"]["metric"] = *f.metric;
    if (f.fraction) j["bank"]["fraction"] = *f.fraction;
    if (f.lr) j["distill"]["learning_rate"] = *f.lr;
    if (f.epochs) j["distill"]["epochs"] = *f.epochs;
    if (f.batch) j["distill"]["batch_size"] = *f.batch;
    if (f.warmup) j["distill"]["warmup_epochs"] = *f.warmup;
    if (f.checkpoint_every) j["distill"]["checkpoint_every"] = *f.checkpoint_every;
    if (f.fpr_limit) j["metrics"]["fpr_limit"] = *f.fpr_limit;
    if (f.foreground_only) j["metrics"]["foreground_only"] = true;
    if (f.no_smooth) j["pixel"]["smooth"] = false;
    if (f.seed) {
        for (const char* section : {"extractor", "preprocess", "bank", "distill", "fusion", "synth"}) j[section]["seed"] = *f.seed;
    }
    cfg = pipeline::merge_json(cfg, j);
    const auto mode = cfg.inference_mode();  // validates mode
    (void)mode;
    require(cfg.workers >= 1, ErrorKind::Config, "workers must be at least 1");
    try {
        cfg.train_config().validate();
        synth::validate(cfg.synth);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::Value) throw;
        fail(ErrorKind::Config, std::string("invalid configuration: ") + e.message());
    }
    return cfg;
}

void require_root(const RunConfig& cfg) {
    if (cfg.dataset_root.empty()) {
        fail(ErrorKind::Config, "no dataset root (use --root, the config file or XMAD_DATASET_ROOT)");
    }
}

std::vector<std::string> classes_of(const RunConfig& cfg) {
    require_root(cfg);
    auto classes = cfg.classes.empty() ? dataset::list_classes(cfg.dataset_root) : cfg.classes;
    require(!classes.empty(), ErrorKind::Data, "no classes found under " + cfg.dataset_root.string());
    return classes;
}

std::vector<Sample> load(const RunConfig& cfg, const std::string& cls, const std::string& split, bool raw) {
    return dataset::load_split(cfg.dataset_root, cls, split, {.raw = raw, .features = true});
}

bool needs_raw(const RunConfig& cfg) {
    return cfg.extractor.kind == extractor::Kind::Synthetic || cfg.route != distill::Route::FtoF ||
           cfg.metrics.foreground_only;
}

std::vector<Modality> modalities_for(const RunConfig& cfg, const std::string& flag) {
    if (flag == "auto") return pipeline::bank_modalities(cfg.inference_mode());
    if (flag == "both") return {Modality::Rgb, Modality::Pc};
    return {parse_modality(flag)};
}

fs::path resolve_checkpoint(const std::string& flag, const RunConfig& cfg, const std::string& cls) {
    fs::path base = flag.empty() ? cfg.output / "checkpoints" : fs::path(flag);
    if (fs::exists(base / "manifest.json")) return base;
    if (fs::is_directory(base / cls)) base /= cls;
    std::vector<fs::path> epochs;
    if (fs::is_directory(base)) {
        for (const auto& e : fs::directory_iterator(base)) {
            if (e.is_directory() && fs::exists(e.path() / "manifest.json")) epochs.push_back(e.path());
        }
    }
    require(!epochs.empty(), ErrorKind::Config, "no distillation checkpoint found under " + base.string());
    std::sort(epochs.begin(), epochs.end());
    return epochs.back();
}

std::vector<fs::path> list_checkpoints(const std::string& flag, const RunConfig& cfg, const std::string& cls) {
    fs::path base = flag.empty() ? cfg.output / "checkpoints" : fs::path(flag);
    if (fs::exists(base / "manifest.json")) return {base};
    if (fs::is_directory(base / cls)) base /= cls;
    std::vector<fs::path> out;
    if (fs::is_directory(base)) {
        for (const auto& e : fs::directory_iterator(base)) {
            if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.push_back(e.path());
        }
    }
    require(!out.empty(), ErrorKind::Config, "no distillation checkpoints found under " + base.string());
    std::sort(out.begin(), out.end());
    return out;
}

std::string epoch_dir(std::size_t epoch) {
    std::ostringstream s;
    s << "epoch_" << std::setw(4) << std::setfill('0') << epoch;
    return s.str();
}

json class_inputs(const RunConfig& cfg, const std::vector<std::string>& classes, std::initializer_list<const char*> splits) {
    json inputs = json::object();
    for (const auto& cls : classes) {
        for (const char* split : splits) inputs[cls + "/" + split] = pipeline::input_checksums(cfg.dataset_root, cls, split);
    }
    return inputs;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

// ---------------------------------------------------------------- synth

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
    require_root(cfg);
    const synth::Dataset data = synth::generate_synthetic_dataset(cfg.synth);
    for (const auto& s : data.train) dataset::write_sample(cfg.dataset_root, s);
    for (const auto& s : data.test) dataset::write_sample(cfg.dataset_root, s);
    pipeline::write_run_manifest(cfg.output / "synth_manifest.json", "synth", cfg,
                                 class_inputs(cfg, {"synthetic"}, {"train", "test"}));
    out << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples under "
        << (cfg.dataset_root / "synthetic").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- preprocess

int cmd_preprocess(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto classes = classes_of(cfg);
    const auto extractors = cfg.extractor_set();
    std::vector<std::string> failures;
    std::size_t processed = 0, skipped = 0;
    for (const auto& cls : classes) {
        const fs::path manifest_path = cfg.dataset_root / cls / "preprocess_manifest.json";
        json previous = json::object();
        if (fs::exists(manifest_path)) {
            try {
                previous = json::parse(read_text(manifest_path)).value("samples", json::object());
            } catch (const json::exception& e) {
                fail(ErrorKind::Format, manifest_path.string() + ": " + e.what());
            }
        }
        json samples = json::object();
        for (const char* split : {"train", "validation", "test"}) {
            if (!fs::is_directory(cfg.dataset_root / cls / split)) continue;
            for (const auto& files : dataset::scan(cfg.dataset_root, cls, split)) {
                if (files.xyz.empty()) continue;
                if (previous.contains(files.id)) {
                    const json& entry = previous.at(files.id);
                    const bool same = entry.value("xyz_checksum", "") == file_checksum(files.xyz) &&
                                      entry.value("rgb_checksum", "") == (files.rgb.empty() ? "" : file_checksum(files.rgb));
                    if (same) {
                        samples[files.id] = entry;
                        ++skipped;
                        continue;
                    }
                }
                try {
                    StructuredPointCloud pc = dataset::read_xyz(files.xyz);
                    RgbImage rgb = files.rgb.empty() ? RgbImage(pc.height(), pc.width()) : dataset::read_rgb(files.rgb);
                    std::optional<Mask> gt;
                    if (!files.gt.empty()) gt = dataset::read_mask(files.gt);
                    if (cfg.preprocess.image_size > 0) {
                        pc = dataset::resize_xyz(pc, cfg.preprocess.image_size);
                        rgb = dataset::resize_rgb(rgb, cfg.preprocess.image_size);
                        if (gt) gt = dataset::resize_mask(*gt, cfg.preprocess.image_size);
                    }
                    preprocess::RansacConfig ransac = cfg.preprocess.ransac;
                    const auto* id_bytes = reinterpret_cast<const unsigned char*>(files.id.data());
                    ransac.seed = derive_seed(ransac.seed, std::stoull(crc32_hex({id_bytes, files.id.size()}), nullptr, 16));
                    const preprocess::Plane plane = preprocess::fit_background_plane(pc, ransac);
                    auto [pc_clean, rgb_clean] = preprocess::remove_background(pc, rgb, plane, cfg.preprocess.threshold);
                    const auto sid = dataset::parse_id(files.id);
                    dataset::write_xyz(pc_clean, dataset::xyz_path(cfg.dataset_root, sid));
                    if (!files.rgb.empty()) dataset::write_rgb(rgb_clean, dataset::rgb_path(cfg.dataset_root, sid));
                    if (gt) dataset::write_mask(*gt, dataset::gt_path(cfg.dataset_root, sid));
                    if (cfg.preprocess.write_features) {
                        require(cfg.extractor.kind == extractor::Kind::Synthetic, ErrorKind::Config,
                                "writing features during preprocessing needs the synthetic extractor");
                        const std::string xyz_sum = file_checksum(dataset::xyz_path(cfg.dataset_root, sid));
                        dataset::write_features(cfg.dataset_root, Modality::Pc, files.id,
                                                extractor::extract_pc_map(extractors, pc_clean, files.id), xyz_sum);
                        if (!files.rgb.empty()) {
                            const RgbImage stored = dataset::read_rgb(dataset::rgb_path(cfg.dataset_root, sid));
                            dataset::write_features(cfg.dataset_root, Modality::Rgb, files.id,
                                                    extractor::extract_rgb(extractors.rgb, stored, files.id),
                                                    file_checksum(dataset::rgb_path(cfg.dataset_root, sid)));
                        }
                    }
                    samples[files.id] = {
                        {"plane", {{"normal", plane.normal}, {"offset", plane.offset}}},
                        {"xyz_checksum", file_checksum(dataset::xyz_path(cfg.dataset_root, sid))},
                        {"rgb_checksum", files.rgb.empty() ? "" : file_checksum(dataset::rgb_path(cfg.dataset_root, sid))},
                    };
                    ++processed;
                } catch (const Error& e) {
                    if (e.kind() == ErrorKind::Config || e.kind() == ErrorKind::Usage) throw;
                    failures.push_back(files.id + ": " + e.what());
                }
            }
        }
        const json manifest = {{"tool_version", pipeline::kToolVersion},
                               {"ransac",
                                {{"iterations", cfg.preprocess.ransac.iterations},
                                 {"inlier_threshold", cfg.preprocess.ransac.inlier_threshold},
                                 {"min_inlier_fraction", cfg.preprocess.ransac.min_inlier_fraction},
                                 {"seed", cfg.preprocess.ransac.seed}}},
                               {"threshold", cfg.preprocess.threshold},
                               {"image_size", cfg.preprocess.image_size},
                               {"samples", samples}};
        const std::string text = manifest.dump(2) + "\n";
        if (!fs::exists(manifest_path) || read_text(manifest_path) != text) write_text(manifest_path, text);
    }
    out << "preprocessed " << processed << " samples, " << skipped << " already up to date, " << failures.size()
        << " failed\n";
    if (!failures.empty()) {
        err << "failed samples:\n";
        for (const auto& f : failures) err << "  " << f << "\n";
        return kExitPartial;
    }
    return kExitOk;
}

// ---------------------------------------------------------------- distill

int cmd_distill(const RunConfig& cfg, std::ostream& out) {
    const auto classes = classes_of(cfg);
    const auto extractors = cfg.extractor_set();
    const auto train_cfg = cfg.train_config();
    for (const auto& cls : classes) {
        auto train = load(cfg, cls, "train", needs_raw(cfg));
        std::vector<Modality> mods;
        if (cfg.route != distill::Route::ItoF) mods.push_back(cfg.main);
        if (cfg.route != distill::Route::FtoI) mods.push_back(other(cfg.main));
        pipeline::ensure_features(train, mods, extractors);
        const auto result = distill::train_distiller(cfg.route, cfg.main, train, train_cfg);
        const fs::path dir = cfg.output / "checkpoints" / cls;
        for (const auto& cp : result.checkpoints) distill::save_checkpoint(cp, train_cfg, dir / epoch_dir(cp.epoch));
        json log = {{"route", distill::to_string(cfg.route)}, {"source", to_string(cfg.main)}, {"loss", result.loss_log}};
        write_text(dir / "loss_log.json", log.dump(2) + "\n");
        out << cls << ": " << result.checkpoints.size() << " checkpoints, final loss "
            << result.loss_log.back() << "\n";
    }
    pipeline::write_run_manifest(cfg.output / "distill_manifest.json", "distill", cfg, class_inputs(cfg, classes, {"train"}));
    return kExitOk;
}

// ---------------------------------------------------------------- bank

fs::path banks_dir(const Flags& f, const RunConfig& cfg) { return f.banks.empty() ? cfg.output / "banks" : fs::path(f.banks); }

int cmd_bank(const Flags& f, const RunConfig& cfg, std::ostream& out) {
    const auto classes = classes_of(cfg);
    const auto mods = modalities_for(cfg, f.modality);
    const auto extractors = cfg.extractor_set();
    bank::BankConfig bcfg = cfg.bank;
    bcfg.workers = cfg.workers;
    for (const auto& cls : classes) {
        auto train = load(cfg, cls, "train", cfg.extractor.kind == extractor::Kind::Synthetic);
        pipeline::ensure_features(train, mods, extractors);
        const json digest = pipeline::input_checksums(cfg.dataset_root, cls, "train");
        for (Modality m : mods) {
            auto bank = bank::build_bank_from_patches(pipeline::train_patches(train, m), m, bcfg);
            bank.source_checksums = {digest.at("digest").get<std::string>()};
            bank::save_bank(bank, banks_dir(f, cfg) / cls / to_string(m));
            out << cls << "/" << to_string(m) << ": " << bank.size() << " coreset rows\n";
        }
    }
    pipeline::write_run_manifest(cfg.output / "bank_manifest.json", "bank", cfg, class_inputs(cfg, classes, {"train"}));
    return kExitOk;
}

// ---------------------------------------------------------------- infer

struct Loaded {
    pipeline::ClassBanks banks;
    std::optional<distill::DenseNet> net;
};

Loaded load_models(const Flags& f, const RunConfig& cfg, const std::string& cls) {
    Loaded l;
    const auto mode = cfg.inference_mode();
    for (Modality m : pipeline::bank_modalities(mode)) {
        const fs::path dir = banks_dir(f, cfg) / cls / to_string(m);
        if (!fs::exists(dir / "manifest.json")) {
            fail(ErrorKind::Config, "mode " + mode.name() + " needs a " + to_string(m) + " bank at " + dir.string());
        }
        l.banks.of(m) = bank::load_bank(dir);
    }
    if (mode.kind == score::ModeKind::Mtfi) l.net = distill::load_checkpoint(resolve_checkpoint(f.checkpoint, cfg, cls)).net;
    return l;
}

fs::path results_dir(const Flags& f, const RunConfig& cfg, const std::string& cls) {
    const fs::path base = f.results.empty() ? cfg.output / "results" : fs::path(f.results);
    return base / cls / cfg.inference_mode().name();
}

int cmd_infer(const Flags& f, const RunConfig& cfg, std::ostream& out) {
    const auto classes = classes_of(cfg);
    const auto extractors = cfg.extractor_set();
    const auto mode = cfg.inference_mode();
    for (const auto& cls : classes) {
        const Loaded models = load_models(f, cfg, cls);
        const auto train = load(cfg, cls, "train", needs_raw(cfg));
        const auto test = load(cfg, cls, "test", needs_raw(cfg));
        score::InferenceContext ctx{.banks = models.banks.view(),
                                    .mode = mode,
                                    .distiller = models.net ? &*models.net : nullptr,
                                    .extractors = &extractors,
                                    .pixel = cfg.pixel,
                                    .workers = cfg.workers};
        const auto fusion = score::fit_fusion_model(train, ctx, cfg.fusion);
        ctx.fusion = &fusion;
        const auto results = pipeline::infer_all(test, ctx);
        const fs::path dir = results_dir(f, cfg, cls);
        json scores = json::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            pipeline::save_result(results[i], dir);
            scores.push_back({{"id", results[i].id},
                              {"label", test[i].label == Label::Anomalous ? 1 : 0},
                              {"image_score", results[i].image_score}});
        }
        write_text(dir / "fusion.json", score::to_json(fusion).dump(2) + "\n");
        write_text(dir / "scores.json", scores.dump(2) + "\n");
        out << cls << ": scored " << results.size() << " test samples in mode " << mode.name() << "\n";
    }
    pipeline::write_run_manifest(cfg.output / "infer_manifest.json", "infer", cfg,
                                 class_inputs(cfg, classes, {"train", "test"}));
    return kExitOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const Flags& f, const RunConfig& cfg, std::ostream& out) {
    const auto classes = classes_of(cfg);
    std::vector<metrics::ClassMetrics> rows;
    for (const auto& cls : classes) {
        const fs::path dir = results_dir(f, cfg, cls);
        require(fs::exists(dir / "scores.json"), ErrorKind::Config, "no inference results at " + dir.string());
        const auto test = load(cfg, cls, "test", cfg.metrics.foreground_only);
        std::vector<score::AnomalyResult> results;
        for (const auto& s : test) {
            score::AnomalyResult r;
            r.id = s.id;
            const json j = json::parse(read_text(dir / (pipeline::id_to_filename(s.id) + ".json")));
            r.image_score = j.at("image_score").get<double>();
            r.pixel_map = pipeline::load_pixel_map(dir, s.id);
            results.push_back(std::move(r));
        }
        rows.push_back(pipeline::evaluate(cls, results, test, cfg.metrics));
        out << cls << ": I-AUROC " << fmt(rows.back().i_auroc) << "  P-AUROC " << fmt(rows.back().p_auroc)
            << "  AUPRO " << fmt(rows.back().aupro) << "\n";
    }
    json report = metrics::report_json(rows);
    report["mode"] = cfg.inference_mode().name();
    report["fpr_limit"] = cfg.metrics.fpr_limit;
    write_text(cfg.output / ("report_" + cfg.inference_mode().name() + ".json"), report.dump(2) + "\n");
    pipeline::write_run_manifest(cfg.output / "eval_manifest.json", "eval", cfg, class_inputs(cfg, classes, {"test"}));
    return kExitOk;
}

// ---------------------------------------------------------------- sweep

int cmd_sweep(const Flags& f, const RunConfig& cfg, std::ostream& out) {
    const auto classes = classes_of(cfg);
    const auto extractors = cfg.extractor_set();
    RunConfig mtfi = cfg;
    mtfi.mode = "mtfi";
    const auto mode = mtfi.inference_mode();
    bank::BankConfig bcfg = cfg.bank;
    bcfg.workers = cfg.workers;
    json report = json::object();
    for (const auto& cls : classes) {
        auto train = load(cfg, cls, "train", needs_raw(cfg));
        auto test = load(cfg, cls, "test", needs_raw(cfg));
        const std::vector<Modality> both{Modality::Rgb, Modality::Pc};
        pipeline::ensure_features(train, both, extractors);
        const auto banks = pipeline::build_banks(train, both, bcfg);
        json table = json::array();
        std::size_t best = 0;
        double best_auroc = -1.0;
        const auto checkpoints = list_checkpoints(f.checkpoint, cfg, cls);
        for (std::size_t k = 0; k < checkpoints.size(); ++k) {
            const auto cp = distill::load_checkpoint(checkpoints[k]);
            score::InferenceContext ctx{.banks = banks.view(),
                                        .mode = mode,
                                        .distiller = &cp.net,
                                        .extractors = &extractors,
                                        .pixel = cfg.pixel,
                                        .workers = cfg.workers};
            const auto run = pipeline::run_class(cls, train, test, ctx, cfg.fusion, cfg.metrics);
            table.push_back({{"epoch", cp.epoch},
                             {"train_loss", cp.train_loss},
                             {"i_auroc", run.metrics.i_auroc},
                             {"p_auroc", run.metrics.p_auroc},
                             {"aupro", run.metrics.aupro}});
            if (run.metrics.i_auroc > best_auroc) {
                best_auroc = run.metrics.i_auroc;
                best = k;
            }
            out << cls << " epoch " << cp.epoch << ": loss " << cp.train_loss << "  I-AUROC " << fmt(run.metrics.i_auroc)
                << "\n";
        }
        report[cls] = {{"rows", table}, {"selected", table[best]}};
        out << cls << ": selected epoch " << table[best]["epoch"] << " (I-AUROC " << fmt(best_auroc) << ")\n";
    }
    write_text(cfg.output / "sweep.json", report.dump(2) + "\n");
    pipeline::write_run_manifest(cfg.output / "sweep_manifest.json", "sweep", cfg,
                                 class_inputs(cfg, classes, {"train", "test"}));
    return kExitOk;
}

// ---------------------------------------------------------------- ablate-metric

int cmd_ablate_metric(const Flags& f, const RunConfig& cfg, std::ostream& out) {
    const auto classes = classes_of(cfg);
    const auto extractors = cfg.extractor_set();
    const auto mode = cfg.inference_mode();
    const auto mods = pipeline::bank_modalities(mode);
    const std::vector<bank::MetricKind> kinds{bank::MetricKind::L2, bank::MetricKind::L1, bank::MetricKind::Cosine};
    std::map<bank::MetricKind, std::vector<metrics::ClassMetrics>> rows;
    for (const auto& cls : classes) {
        auto train = load(cfg, cls, "train", needs_raw(cfg));
        auto test = load(cfg, cls, "test", needs_raw(cfg));
        pipeline::ensure_features(train, mods, extractors);
        std::map<Modality, bank::PatchSet> patches;
        for (Modality m : mods) patches.emplace(m, pipeline::train_patches(train, m));
        std::optional<distill::DenseNet> net;
        if (mode.kind == score::ModeKind::Mtfi) net = distill::load_checkpoint(resolve_checkpoint(f.checkpoint, cfg, cls)).net;
        for (auto kind : kinds) {
            bank::BankConfig bcfg = cfg.bank;
            bcfg.metric = kind;
            bcfg.workers = cfg.workers;
            pipeline::ClassBanks banks;
            for (Modality m : mods) banks.of(m) = bank::build_bank_from_patches(patches.at(m), m, bcfg);
            score::InferenceContext ctx{.banks = banks.view(),
                                        .mode = mode,
                                        .distiller = net ? &*net : nullptr,
                                        .extractors = &extractors,
                                        .pixel = cfg.pixel,
                                        .workers = cfg.workers};
            rows[kind].push_back(pipeline::run_class(cls, train, test, ctx, cfg.fusion, cfg.metrics).metrics);
        }
    }
    json table = json::array();
    out << std::left << std::setw(8) << "metric";
    for (const auto& cls : classes) out << std::setw(12) << cls;
    out << "mean\n";
    for (auto kind : kinds) {
        const json r = metrics::report_json(rows[kind]);
        table.push_back({{"metric", bank::to_string(kind)}, {"classes", r["classes"]}, {"mean", r["mean"]}});
        out << std::setw(8) << bank::to_string(kind);
        for (const auto& m : rows[kind]) out << std::setw(12) << fmt(m.i_auroc);
        out << fmt(r["mean"]["i_auroc"].get<double>()) << "\n";
    }
    write_text(cfg.output / "ablate_metric.json", json{{"mode", mode.name()}, {"rows", table}}.dump(2) + "\n");
    pipeline::write_run_manifest(cfg.output / "ablate_metric_manifest.json", "ablate-metric", cfg,
                                 class_inputs(cfg, classes, {"train", "test"}));
    return kExitOk;
}

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON config file; flags override it");
    app->add_option("--root", f.root, "dataset root (also XMAD_DATASET_ROOT)");
    app->add_option("--class", f.classes, "class names (default: all under the root)");
    app->add_option("--out", f.out, "output directory");
    app->add_option("--workers", f.workers, "worker threads");
    app->add_option("--seed", f.seed, "base seed for every stage");
    app->add_option("--extractor", f.extractor, "precomputed|synthetic");
}

void add_mode(CLI::App* app, Flags& f) {
    app->add_option("--mode", f.mode, "single|dual|mtfi");
    app->add_option("--main", f.main, "main modality at inference: rgb|pc");
    app->add_option("--route", f.route, "FtoF|FtoI|ItoF");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-modal training, few-modal inference anomaly detection"};
    app.require_subcommand(1);
    Flags f;

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dual-modal dataset");
    add_common(synth_cmd, f);

    auto* pre_cmd = app.add_subcommand("preprocess", "remove the background plane from every sample");
    add_common(pre_cmd, f);

    auto* distill_cmd = app.add_subcommand("distill", "train a cross-modal distillation network");
    add_common(distill_cmd, f);
    add_mode(distill_cmd, f);
    distill_cmd->add_option("--epochs", f.epochs);
    distill_cmd->add_option("--lr", f.lr);
    distill_cmd->add_option("--batch-size", f.batch);
    distill_cmd->add_option("--warmup-epochs", f.warmup);
    distill_cmd->add_option("--checkpoint-every", f.checkpoint_every);

    auto* bank_cmd = app.add_subcommand("bank", "build coreset memory banks");
    add_common(bank_cmd, f);
    add_mode(bank_cmd, f);
    bank_cmd->add_option("--modality", f.modality, "rgb|pc|both|auto");
    bank_cmd->add_option("--metric", f.metric, "l1|l2|cosine");
    bank_cmd->add_option("--fraction", f.fraction, "coreset fraction");
    bank_cmd->add_option("--banks", f.banks, "bank directory");

    auto* infer_cmd = app.add_subcommand("infer", "score the test split");
    add_common(infer_cmd, f);
    add_mode(infer_cmd, f);
    infer_cmd->add_option("--banks", f.banks, "bank directory");
    infer_cmd->add_option("--checkpoint", f.checkpoint, "checkpoint directory");
    infer_cmd->add_option("--results", f.results, "results directory");
    infer_cmd->add_flag("--no-smooth", f.no_smooth, "skip Gaussian smoothing of pixel maps");

    auto* eval_cmd = app.add_subcommand("eval", "compute I-AUROC, P-AUROC and AUPRO");
    add_common(eval_cmd, f);
    add_mode(eval_cmd, f);
    eval_cmd->add_option("--results", f.results, "results directory");
    eval_cmd->add_option("--fpr-limit", f.fpr_limit, "AUPRO integration limit");
    eval_cmd->add_flag("--foreground-only", f.foreground_only, "P-AUROC over foreground pixels only");

    auto* sweep_cmd = app.add_subcommand("sweep", "evaluate every distillation checkpoint");
    add_common(sweep_cmd, f);
    add_mode(sweep_cmd, f);
    sweep_cmd->add_option("--checkpoint", f.checkpoint, "checkpoint directory");
    sweep_cmd->add_option("--metric", f.metric, "l1|l2|cosine");
    sweep_cmd->add_option("--fraction", f.fraction, "coreset fraction");

    auto* ablate_cmd = app.add_subcommand("ablate-metric", "compare L1, L2 and cosine distances");
    add_common(ablate_cmd, f);
    add_mode(ablate_cmd, f);
    ablate_cmd->add_option("--checkpoint", f.checkpoint, "checkpoint directory");
    ablate_cmd->add_option("--fraction", f.fraction, "coreset fraction");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const RunConfig cfg = resolve_config(f);
        if (*synth_cmd) return cmd_synth(cfg, out);
        if (*pre_cmd) return cmd_preprocess(cfg, out, err);
        if (*distill_cmd) return cmd_distill(cfg, out);
        if (*bank_cmd) return cmd_bank(f, cfg, out);
        if (*infer_cmd) return cmd_infer(f, cfg, out);
        if (*eval_cmd) return cmd_eval(f, cfg, out);
        if (*sweep_cmd) return cmd_sweep(f, cfg, out);
        if (*ablate_cmd) return cmd_ablate_metric(f, cfg, out);
    } catch (const Error& e) {
        err << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const json::exception& e) {
        err << "format error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "io error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace xmad::cli
