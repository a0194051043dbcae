#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "xmad/distill.hpp"
#include "xmad/extractor.hpp"
#include "xmad/synth.hpp"

using namespace xmad;

namespace {

synth::SynthConfig small() {
    synth::SynthConfig cfg;
    cfg.n_train = 3;
    cfg.n_test_normal = 2;
    cfg.n_test_anomalous = 3;
    cfg.rows = 8;
    cfg.cols = 8;
    cfg.dim = 8;
    cfg.seed = 5;
    return cfg;
}

double feature_mean(const Sample& s) {
    double acc = 0.0;
    for (float v : s.pc_features->data()) acc += v;
    return acc / static_cast<double>(s.pc_features->data().size());
}

}  // namespace

TEST_CASE("generator is a pure function of its config") {
    const auto a = synth::generate_synthetic_dataset(small());
    const auto b = synth::generate_synthetic_dataset(small());
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    auto other = small();
    other.seed = 6;
    CHECK_FALSE(synth::generate_synthetic_dataset(other).train == a.train);
}

TEST_CASE("sample layout and labels") {
    const auto cfg = small();
    const auto d = synth::generate_synthetic_dataset(cfg);
    REQUIRE(d.train.size() == 3);
    REQUIRE(d.test.size() == 5);
    CHECK(d.train[0].id == "synthetic/train/good/0000");
    CHECK(d.test[4].id == "synthetic/test/block/0002");
    for (const auto& s : d.train) {
        CHECK(s.label == Label::Normal);
        CHECK_FALSE(s.gt_mask.has_value());
        CHECK(s.rgb->height() == 32);
        CHECK(s.pc_features->rows() == 8);
        CHECK(s.rgb_features->dim() == 8);
    }
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(d.test[i].label == Label::Normal);
        CHECK(std::ranges::all_of(d.test[i].gt_mask->data, [](auto v) { return v == 0; }));
    }
    for (std::size_t i = 2; i < 5; ++i) {
        CHECK(d.test[i].label == Label::Anomalous);
        CHECK(std::ranges::any_of(d.test[i].gt_mask->data, [](auto v) { return v == 1; }));
    }
}

TEST_CASE("rgb features equal the synthetic extractor applied to the image") {
    const auto cfg = small();
    const auto d = synth::generate_synthetic_dataset(cfg);
    const auto ex = synth::extractors(cfg);
    for (const auto& s : d.test) CHECK(extractor::extract_rgb(ex.rgb, *s.rgb) == *s.rgb_features);
}

TEST_CASE("mask support equals the perturbed block exactly") {
    auto cfg = small();
    const auto hit = synth::generate_synthetic_dataset(cfg);
    cfg.anomaly_strength = 0.0;
    const auto clean = synth::generate_synthetic_dataset(cfg);
    for (std::size_t i = 2; i < 5; ++i) {
        const Sample& a = hit.test[i];
        const Sample& b = clean.test[i];
        std::size_t cells = 0;
        for (std::size_t r = 0; r < cfg.rows; ++r) {
            for (std::size_t c = 0; c < cfg.cols; ++c) {
                const bool pc_moved = !std::ranges::equal(a.pc_features->cell(r, c), b.pc_features->cell(r, c));
                const bool rgb_moved = !std::ranges::equal(a.rgb_features->cell(r, c), b.rgb_features->cell(r, c));
                const bool masked = a.gt_mask->at(r * cfg.patch, c * cfg.patch) == 1;
                CHECK(pc_moved == masked);
                CHECK(rgb_moved == masked);
                for (std::size_t y = 0; y < cfg.patch; ++y) {
                    for (std::size_t x = 0; x < cfg.patch; ++x) CHECK(a.gt_mask->at(r * cfg.patch + y, c * cfg.patch + x) == masked);
                }
                cells += masked ? 1 : 0;
            }
        }
        CHECK(cells >= 4);
    }
}

TEST_CASE("zero anomaly strength makes anomalous samples indistinguishable") {
    auto cfg = small();
    cfg.n_train = 1;
    cfg.n_test_normal = 100;
    cfg.n_test_anomalous = 100;
    cfg.anomaly_strength = 0.0;
    const auto d = synth::generate_synthetic_dataset(cfg);
    std::vector<double> normals, anomalous;
    for (std::size_t i = 0; i < 100; ++i) normals.push_back(feature_mean(d.test[i]));
    for (std::size_t i = 100; i < 200; ++i) anomalous.push_back(feature_mean(d.test[i]));
    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto var = [&](const std::vector<double>& v) {
        const double m = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size() - 1);
    };
    const double se = std::sqrt(var(normals) / 100.0 + var(anomalous) / 100.0);
    CHECK(std::abs(mean(normals) - mean(anomalous)) < 3.0 * se);
}

TEST_CASE("background border and support plane") {
    auto cfg = small();
    cfg.background_border = 1;
    cfg.emit_background_plane = true;
    const auto d = synth::generate_synthetic_dataset(cfg);
    const auto plane = synth::support_plane();
    const Sample& s = d.train[0];
    CHECK(s.pc_features->is_background(0));
    CHECK_FALSE(s.pc_features->is_background(9));
    for (std::size_t pr = 0; pr < 4; ++pr) {
        for (std::size_t pc = 0; pc < 32; ++pc) {
            auto p = s.pc->at(pr, pc);
            CHECK(plane.distance({p[0], p[1], p[2]}) < 1e-6);
        }
    }
    auto inner = s.pc->at(16, 16);
    CHECK(plane.distance({inner[0], inner[1], inner[2]}) > 0.01);

    cfg.emit_background_plane = false;
    const auto z = synth::generate_synthetic_dataset(cfg);
    CHECK(z.train[0].pc->is_zero(0, 0));
    CHECK(z.train[0].rgb->is_zero(0, 0));
}

TEST_CASE("invalid configs are rejected") {
    auto cfg = small();
    cfg.cross_modal_coupling = 1.5;
    CHECK_ERROR_KIND(synth::validate(cfg), ErrorKind::Value);
    cfg = small();
    cfg.n_train = 0;
    CHECK_ERROR_KIND(synth::generate_synthetic_dataset(cfg), ErrorKind::Value);
    cfg = small();
    cfg.background_border = 4;
    CHECK_ERROR_KIND(synth::validate(cfg), ErrorKind::Value);
}

TEST_CASE("full coupling makes the cross-modal mapping learnable") {
    synth::SynthConfig cfg;
    cfg.cross_modal_coupling = 1.0;
    cfg.anomaly_strength = 5.0;
    cfg.seed = 7;
    const auto d = synth::generate_synthetic_dataset(cfg);
    distill::TrainConfig tcfg;
    tcfg.epochs = 100;
    const auto result = distill::train_distiller(distill::Route::FtoF, Modality::Pc, d.train, tcfg);
    REQUIRE(result.loss_log.size() == 100);
    CHECK(result.loss_log.back() < 1e-3);
}
