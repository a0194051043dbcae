// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "xmad/bank.hpp"
#include "xmad/cli.hpp"
#include "xmad/cmft.hpp"
#include "xmad/distill.hpp"
#include "xmad/metrics.hpp"
#include "xmad/pipeline.hpp"
#include "xmad/random.hpp"
#include "xmad/score.hpp"
#include "xmad/synth.hpp"

namespace fs = std::filesystem;
using namespace xmad;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

bank::MetricKind metric_at(std::size_t i) {
    static const bank::MetricKind kinds[] = {bank::MetricKind::L2, bank::MetricKind::L1, bank::MetricKind::Cosine};
    return kinds[i % 3];
}

// ------------------------------------------------------------------ coreset

Outcome coreset_oracle() {
    const auto t0 = Clock::now();
    Rng rng(101);
    std::size_t mismatches = 0, radius_checks = 0, radius_failures = 0;
    for (std::size_t inst = 0; inst < 200; ++inst) {
        const bool small = inst < 100;
        const std::size_t p = small ? 3 + uniform_index(rng, 10) : 2 + uniform_index(rng, 39);
        const std::size_t d = 1 + uniform_index(rng, 8);
        const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(small ? 3 : 10, p));
        // Covering-radius bounds need the triangle inequality, so those instances use L1/L2.
        const bank::MetricKind metric = small ? (inst % 2 ? bank::MetricKind::L1 : bank::MetricKind::L2) : metric_at(inst);
        bank::PatchSet set;
        std::vector<std::vector<float>> pts;
        for (std::size_t i = 0; i < p; ++i) {
            std::vector<float> v(d);
            for (auto& x : v) x = static_cast<float>(uniform(rng, -1.0, 1.0));
            set.push_back(v, {"x", i});
            pts.push_back(v);
        }
        bank::CoresetOptions opt;
        opt.fraction = static_cast<double>(k) / static_cast<double>(p);
        opt.metric = metric;
        opt.seed = inst;
        const auto got = bank::coreset_select(set, opt);
        Rng start_rng(inst);
        const std::size_t start = uniform_index(start_rng, p);
        const auto want = oracle::greedy_maxmin(pts, k, start, metric);
        if (got != want) ++mismatches;
        if (small) {
            ++radius_checks;
            const double r = oracle::covering_radius(pts, got, metric);
            const double opt_r = oracle::optimal_radius(pts, k, metric);
            if (r > 2.0 * opt_r + 1e-12) ++radius_failures;
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = mismatches == 0 && radius_failures == 0 && secs < 10.0;
    o.detail = "200 instances, " + std::to_string(mismatches) + " oracle mismatches; " + std::to_string(radius_checks) +
               " radius checks, " + std::to_string(radius_failures) + " above 2x optimal; " + num(secs, 2) + " s (< 10 s)";
    return o;
}

// ------------------------------------------------------------------ psi / phi

Outcome psi_phi_oracle() {
    const auto t0 = Clock::now();
    Rng rng(202);
    std::size_t identity_failures = 0, cell_mismatches = 0, cells = 0;
    for (std::size_t inst = 0; inst < 1000; ++inst) {
        const std::size_t d = 1 + uniform_index(rng, 16);
        const std::size_t k = 1 + uniform_index(rng, 30);
        const std::size_t rows = 1 + uniform_index(rng, 8), cols = 1 + uniform_index(rng, 8);
        bank::MemoryBank b;
        b.dim = d;
        b.metric = metric_at(inst);
        for (std::size_t i = 0; i < k * d; ++i) b.rows.push_back(static_cast<float>(uniform(rng, -1.0, 1.0)));
        FeatureMap map(rows, cols, d);
        for (std::size_t c = 0; c < map.cells(); ++c) {
            const double u = uniform01(rng);
            if (u < 0.1) continue;  // background
            auto cell = map.cell(c);
            if (u < 0.2) {
                const std::size_t r = uniform_index(rng, k);
                std::copy(b.row(r).begin(), b.row(r).end(), cell.begin());
            } else {
                for (auto& x : cell) x = static_cast<float>(uniform(rng, -1.0, 1.0));
            }
        }
        const ScoreMap phi = score::phi(map, b);
        const score::PsiResult psi = score::psi(map, b);
        double max_phi = -1.0;
        for (double v : phi.values) max_phi = std::max(max_phi, v);
        if (psi.score != max_phi || phi.values[psi.cell] != psi.score) ++identity_failures;
        for (std::size_t c = 0; c < map.cells(); ++c) {
            ++cells;
            double want = 0.0;
            if (!map.is_background(c)) {
                want = std::numeric_limits<double>::infinity();
                for (std::size_t r = 0; r < k; ++r) want = std::min(want, oracle::dist(b.metric, map.cell(c), b.row(r)));
            }
            if (std::memcmp(&want, &phi.values[c], sizeof want) != 0) ++cell_mismatches;
        }
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = identity_failures == 0 && cell_mismatches == 0 && secs < 30.0;
    o.detail = "1000 pairs, " + std::to_string(identity_failures) + " psi != max(phi); " + std::to_string(cell_mismatches) +
               "/" + std::to_string(cells) + " cells differ bitwise; " + num(secs, 2) + " s (< 30 s)";
    return o;
}

// ------------------------------------------------------------------ gradients

Outcome gradient_check() {
    Rng rng(303);
    const double h = 1e-6;
    double worst = 0.0;
    std::size_t coords = 0, failures = 0;
    for (auto route : {distill::Route::FtoF, distill::Route::ItoF, distill::Route::FtoI}) {
        for (int cfg = 0; cfg < 5; ++cfg) {
            const std::size_t patch = 1 + uniform_index(rng, 2);
            const std::size_t feat = 2 + uniform_index(rng, 7);
            const std::size_t in = route == distill::Route::ItoF ? 3 * patch * patch : feat;
            const std::size_t out = route == distill::Route::FtoI ? 3 * patch * patch : 2 + uniform_index(rng, 7);
            std::vector<std::size_t> widths{in};
            const std::size_t depth = uniform_index(rng, 3);
            for (std::size_t l = 0; l < depth; ++l) widths.push_back(2 + uniform_index(rng, 7));
            widths.push_back(out);
            distill::DenseNet net = distill::make_net(route, Modality::Pc, widths, 1000 + coords, patch);
            const std::size_t batch = 1 + uniform_index(rng, 4);
            Eigen::MatrixXd x(batch, in), t(batch, out);
            std::vector<std::vector<double>> xs(batch, std::vector<double>(in)), ts(batch, std::vector<double>(out));
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t i = 0; i < in; ++i) xs[b][i] = x(b, i) = normal(rng);
                for (std::size_t i = 0; i < out; ++i) ts[b][i] = t(b, i) = normal(rng);
            }
            const distill::Gradients g = distill::net_gradient(net, x, t);
            auto check = [&](double& param, double analytic) {
                const double saved = param;
                param = saved + h;
                const double up = oracle::loss(net, xs, ts);
                param = saved - h;
                const double down = oracle::loss(net, xs, ts);
                param = saved;
                const double numeric = (up - down) / (2.0 * h);
                const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-4});
                worst = std::max(worst, rel);
                ++coords;
                if (rel >= 1e-5) ++failures;
            };
            for (std::size_t l = 0; l < net.layers.size(); ++l) {
                auto& layer = net.layers[l];
                for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
                    for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) check(layer.weight(r, c), g.weight[l](r, c));
                }
                for (Eigen::Index c = 0; c < layer.bias.size(); ++c) check(layer.bias(c), g.bias[l](c));
            }
        }
    }
    Outcome o;
    o.pass = failures == 0;
    o.detail = "15 networks (5 per route), " + std::to_string(coords) + " coordinates, worst relative error " +
               num(worst * 1e6, 3) + "e-6 (< 1e-5), " + std::to_string(failures) + " failures";
    return o;
}

// ------------------------------------------------------------------ metrics

Outcome metric_oracles() {
    Rng rng(404);
    double worst_auroc = 0.0;
    for (int inst = 0; inst < 500; ++inst) {
        const std::size_t n = 2 + uniform_index(rng, 199);
        std::vector<double> s(n);
        std::vector<std::uint8_t> l(n);
        const bool coarse = inst % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse ? std::floor(uniform(rng, 0.0, 8.0)) : normal(rng);
            l[i] = uniform01(rng) < 0.4 ? 1 : 0;
        }
        l[0] = 1;
        l[1] = 0;
        worst_auroc = std::max(worst_auroc, std::abs(metrics::auroc(s, l) - oracle::auroc_pairs(s, l)));
    }
    double worst_pro = 0.0;
    for (auto [rh, rw] : {std::pair<std::size_t, std::size_t>{4, 5}, {10, 10}, {7, 3}}) {
        const auto rc = oracle::ramp_case(rh, rw);
        for (double limit : {0.05, 0.1, 0.3, 0.5, 0.7, 1.0}) {
            const double got = metrics::aupro(std::span(&rc.map, 1), std::span(&rc.mask, 1), limit);
            worst_pro = std::max(worst_pro, std::abs(got - oracle::ramp_aupro(limit)));
        }
    }
    std::size_t cc_mismatch = 0;
    for (int inst = 0; inst < 200; ++inst) {
        Mask m(1 + uniform_index(rng, 40), 1 + uniform_index(rng, 40));
        const double density = uniform(rng, 0.05, 0.7);
        for (auto& v : m.data) v = uniform01(rng) < density ? 1 : 0;
        if (metrics::connected_components(m) != oracle::flood_fill(m)) ++cc_mismatch;
    }
    Outcome o;
    o.pass = worst_auroc <= 1e-12 && worst_pro <= 1e-6 && cc_mismatch == 0;
    o.detail = "AUROC max deviation " + num(worst_auroc * 1e12, 3) + "e-12 over 500 sets (<= 1e-12); AUPRO max deviation " +
               num(worst_pro * 1e6, 3) + "e-6 (<= 1e-6); components " + std::to_string(cc_mismatch) +
               "/200 masks differ from flood fill";
    return o;
}

// ------------------------------------------------------------------ file format

Outcome file_format(const fs::path& tmp) {
    Rng rng(505);
    std::size_t failures = 0;
    for (int inst = 0; inst < 100; ++inst) {
        FeatureMap m(1 + uniform_index(rng, 20), 1 + uniform_index(rng, 20), 1 + uniform_index(rng, 64));
        for (auto& v : m.data()) {
            const double u = uniform01(rng);
            v = u < 0.05 ? 0.0f : u < 0.1 ? -0.0f : u < 0.15 ? 1e-40f : static_cast<float>(normal(rng) * std::pow(10.0, uniform(rng, -20, 20)));
        }
        std::stringstream buf;
        const auto bytes = cmft::write_feature_tensor(m, buf);
        const FeatureMap back = cmft::read_feature_tensor(buf);
        const bool same = back.rows() == m.rows() && back.cols() == m.cols() && back.dim() == m.dim() &&
                          std::memcmp(back.data().data(), m.data().data(), m.data().size() * sizeof(float)) == 0 &&
                          bytes == cmft::file_size(m.rows(), m.cols(), m.dim());
        if (!same) ++failures;
    }
    FeatureMap big(56, 56, 768);
    for (auto& v : big.data()) v = static_cast<float>(uniform01(rng));
    const fs::path path = tmp / "big.cmft";
    cmft::save(big, path);
    const auto size = fs::file_size(path);
    Outcome o;
    o.pass = failures == 0 && size == 9633816;
    o.detail = std::to_string(100 - failures) + "/100 random maps round-trip bitwise; 56x56x768 file is " +
               std::to_string(size) + " bytes (expected 9633816)";
    return o;
}

// ------------------------------------------------------------------ end to end

Outcome end_to_end() {
    const auto t0 = Clock::now();
    synth::SynthConfig cfg;  // coupling 0.9, strength 3.0
    cfg.seed = 7;
    const synth::Dataset data = synth::generate_synthetic_dataset(cfg);
    const auto extractors = synth::extractors(cfg);
    bank::BankConfig bcfg;
    bcfg.seed = 11;
    const std::vector<Modality> both{Modality::Rgb, Modality::Pc};
    const auto banks = pipeline::build_banks(data.train, both, bcfg);
    score::FusionConfig fcfg;
    fcfg.seed = 13;
    pipeline::MetricsConfig mcfg;

    score::InferenceContext single{.banks = banks.view(),
                                   .mode = score::parse_mode("single", Modality::Pc, distill::Route::FtoF),
                                   .extractors = &extractors,
                                   .pixel = {.scale = cfg.patch}};
    const auto run_single = pipeline::run_class("synthetic", data.train, data.test, single, fcfg, mcfg);

    distill::TrainConfig tcfg;
    tcfg.seed = 17;
    const auto trained = distill::train_distiller(distill::Route::FtoF, Modality::Pc, data.train, tcfg);
    const auto& net = trained.checkpoints.back().net;
    score::InferenceContext mtfi = single;
    mtfi.mode = score::parse_mode("mtfi", Modality::Pc, distill::Route::FtoF);
    mtfi.distiller = &net;
    const auto run_mtfi = pipeline::run_class("synthetic", data.train, data.test, mtfi, fcfg, mcfg);

    const double secs = seconds_since(t0);
    const double s = run_single.metrics.i_auroc, m = run_mtfi.metrics.i_auroc;
    Outcome o;
    o.pass = s >= 0.85 && m >= s && secs < 300.0;
    o.detail = "Single(PC) I-AUROC " + num(s) + " (>= 0.85); MTFI(FtoF, main=PC) I-AUROC " + num(m) +
               " (>= Single); MTFI AUPRO " + num(run_mtfi.metrics.aupro) + "; final distill loss " +
               num(trained.loss_log.back(), 6) + "; " + num(secs, 1) + " s (< 300 s)";
    return o;
}

// ------------------------------------------------------------------ determinism

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        files[fs::relative(e.path(), dir).generic_string()] = s.str();
    }
    return files;
}

int cli(std::vector<std::string> args, std::ostream& log) {
    args.insert(args.begin(), "xmad");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    return cli::run(static_cast<int>(argv.size()), argv.data(), log, log);
}

Outcome determinism(const fs::path& tmp) {
    const fs::path work = tmp / "det";
    const fs::path cfg_path = tmp / "det_config.json";
    {
        std::ofstream cfg(cfg_path);
        cfg << R"({"dataset_root": ")" << (work / "data").string() << R"(", "output": ")" << (work / "out").string()
            << R"(", "classes": ["synthetic"], "distill": {"epochs": 6, "warmup_epochs": 2, "checkpoint_every": 2},
                  "synth": {"n_train": 8, "n_test_normal": 4, "n_test_anomalous": 4, "seed": 3}})";
    }
    std::ostringstream log;
    auto pipeline_run = [&]() {
        fs::remove_all(work);
        const std::string c = cfg_path.string();
        int rc = 0;
        rc |= cli({"synth", "--config", c}, log);
        rc |= cli({"bank", "--config", c, "--mode", "dual"}, log);
        rc |= cli({"distill", "--config", c}, log);
        for (const char* mode : {"single", "dual", "mtfi"}) {
            rc |= cli({"infer", "--config", c, "--mode", mode}, log);
            rc |= cli({"eval", "--config", c, "--mode", mode}, log);
        }
        rc |= cli({"sweep", "--config", c}, log);
        rc |= cli({"ablate-metric", "--config", c, "--mode", "dual"}, log);
        return rc;
    };
    const int rc1 = pipeline_run();
    const auto first = snapshot(work);
    const int rc2 = pipeline_run();
    const auto second = snapshot(work);
    std::size_t differing = 0;
    for (const auto& [name, bytes] : first) {
        auto it = second.find(name);
        if (it == second.end() || it->second != bytes) ++differing;
    }
    differing += second.size() > first.size() ? second.size() - first.size() : 0;
    std::map<std::string, std::size_t> kinds;
    for (const auto& [name, bytes] : first) {
        if (name.find("banks/") != std::string::npos) ++kinds["bank"];
        if (name.find("checkpoints/") != std::string::npos) ++kinds["checkpoint"];
        if (name.find("report_") != std::string::npos || name.find("sweep.json") != std::string::npos ||
            name.find("ablate_metric.json") != std::string::npos) {
            ++kinds["report"];
        }
    }
    fs::remove_all(work);
    Outcome o;
    o.pass = rc1 == 0 && rc2 == 0 && differing == 0 && kinds["bank"] > 0 && kinds["checkpoint"] > 0 && kinds["report"] > 0;
    o.detail = "full CLI pipeline run twice: " + std::to_string(first.size()) + " artifacts (" +
               std::to_string(kinds["bank"]) + " bank, " + std::to_string(kinds["checkpoint"]) + " checkpoint, " +
               std::to_string(kinds["report"]) + " report files), " + std::to_string(differing) + " differ; exit codes " +
               std::to_string(rc1) + "/" + std::to_string(rc2);
    if (rc1 != 0 || rc2 != 0) o.detail += "; log: " + log.str();
    return o;
}

}  // namespace

int main() {
    const fs::path tmp = fs::temp_directory_path() / "xmad_acceptance";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"coreset oracle equivalence", coreset_oracle},
        {"psi/phi identity and oracle", psi_phi_oracle},
        {"gradient correctness", gradient_check},
        {"metric oracles", metric_oracles},
        {"file-format round trip", [&] { return file_format(tmp); }},
        {"end-to-end synthetic MTFI", end_to_end},
        {"determinism", [&] { return determinism(tmp); }},
    };
    int failed = 0;
    for (const auto& [name, fn] : criteria) {
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
        failed += o.pass ? 0 : 1;
    }
    fs::remove_all(tmp);
    std::cout << (failed == 0 ? "all acceptance criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
