#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"
#include "xmad/random.hpp"
#include "xmad/score.hpp"

using namespace xmad;
using namespace xmad::score;
using bank::MemoryBank;
using bank::MetricKind;

namespace {

MemoryBank make_bank(Modality m, MetricKind metric, std::size_t dim, std::vector<float> rows) {
    MemoryBank b;
    b.modality = m;
    b.metric = metric;
    b.dim = dim;
    b.rows = std::move(rows);
    b.selected.resize(b.size());
    std::iota(b.selected.begin(), b.selected.end(), std::size_t{0});
    return b;
}

MemoryBank random_bank(Rng& rng, Modality m, MetricKind metric, std::size_t k, std::size_t dim) {
    std::vector<float> rows(k * dim);
    for (auto& v : rows) v = static_cast<float>(normal(rng));
    return make_bank(m, metric, dim, std::move(rows));
}

FeatureMap random_map(Rng& rng, std::size_t rows, std::size_t cols, std::size_t dim) {
    FeatureMap f(rows, cols, dim);
    for (auto& v : f.data()) v = static_cast<float>(normal(rng));
    return f;
}

FeatureMap map_from_bank(Rng& rng, const MemoryBank& b, std::size_t rows, std::size_t cols) {
    FeatureMap f(rows, cols, b.dim);
    for (std::size_t c = 0; c < f.cells(); ++c) {
        const auto src = b.row(uniform_index(rng, b.size()));
        std::copy(src.begin(), src.end(), f.cell(c).begin());
    }
    return f;
}

FeatureMap scaled(const FeatureMap& f, float s) {
    FeatureMap out = f;
    for (auto& v : out.data()) v *= s;
    return out;
}

MemoryBank scaled(const MemoryBank& b, float s) {
    MemoryBank out = b;
    for (auto& v : out.rows) v *= s;
    return out;
}

struct DualFixture {
    MemoryBank pc_bank;
    MemoryBank rgb_bank;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

DualFixture dual_fixture(std::uint64_t seed) {
    Rng rng(seed);
    DualFixture fx;
    fx.pc_bank = random_bank(rng, Modality::Pc, MetricKind::L2, 40, 6);
    fx.rgb_bank = random_bank(rng, Modality::Rgb, MetricKind::L2, 40, 5);
    for (int i = 0; i < 8; ++i) {
        Sample s;
        s.id = "t/" + std::to_string(i);
        s.pc_features = random_map(rng, 4, 4, 6);
        s.rgb_features = random_map(rng, 4, 4, 5);
        (i < 5 ? fx.train : fx.test).push_back(std::move(s));
    }
    return fx;
}

InferenceContext dual_context(const DualFixture& fx) {
    InferenceContext ctx;
    ctx.banks = {&fx.rgb_bank, &fx.pc_bank};
    ctx.mode = parse_mode("dual", Modality::Pc, distill::Route::FtoF);
    return ctx;
}

}  // namespace

TEST_CASE("phi examples") {
    const MemoryBank b = make_bank(Modality::Pc, MetricKind::L2, 2, {0, 0, 10, 10});
    FeatureMap one(1, 1, 2);
    one.cell(0)[0] = 3;
    one.cell(0)[1] = 4;
    const ScoreMap m = phi(one, b);
    REQUIRE(m.values.size() == 1);
    CHECK(m.values[0] == 5.0);

    Rng rng(1);
    const MemoryBank r = random_bank(rng, Modality::Rgb, MetricKind::L2, 30, 4);
    const ScoreMap z = phi(map_from_bank(rng, r, 5, 6), r);
    CHECK(std::all_of(z.values.begin(), z.values.end(), [](double v) { return v == 0.0; }));
    CHECK(psi(map_from_bank(rng, r, 5, 6), r).score == 0.0);

    FeatureMap wrong(2, 2, 3);
    CHECK_ERROR_KIND(phi(wrong, b), ErrorKind::Shape);
}

TEST_CASE("phi and psi match exhaustive oracles") {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        const auto metric = static_cast<MetricKind>(trial % 3);
        const MemoryBank b = random_bank(rng, Modality::Pc, metric, 1 + uniform_index(rng, 20), 5);
        FeatureMap f = random_map(rng, 3 + uniform_index(rng, 4), 3 + uniform_index(rng, 4), 5);
        // One background cell.
        std::fill(f.cell(1).begin(), f.cell(1).end(), 0.0f);
        const PhiResult got = phi_detail(f, b, 1 + trial % 4);
        double best = -1.0;
        std::size_t best_cell = 0;
        for (std::size_t c = 0; c < f.cells(); ++c) {
            double want = 0.0;
            std::size_t row = 0;
            if (!f.is_background(c)) {
                want = INFINITY;
                for (std::size_t k = 0; k < b.size(); ++k) {
                    const double d = oracle::dist(metric, f.cell(c), b.row(k));
                    if (d < want) {
                        want = d;
                        row = k;
                    }
                }
            }
            CHECK(got.map.values[c] == doctest::Approx(want).epsilon(1e-9));
            CHECK(got.nearest[c] == row);
            if (want > best) {
                best = want;
                best_cell = c;
            }
        }
        const PsiResult p = psi_of(got);
        CHECK(p.score == *std::max_element(got.map.values.begin(), got.map.values.end()));
        CHECK(p.cell == best_cell);
        CHECK(p.bank_row == got.nearest[best_cell]);
    }
}

TEST_CASE("psi ties resolve to the lowest cell") {
    const MemoryBank b = make_bank(Modality::Pc, MetricKind::L2, 1, {0});
    FeatureMap f(2, 2, 1);
    f.cell(0)[0] = 1;
    f.cell(1)[0] = 3;
    f.cell(2)[0] = -3;
    f.cell(3)[0] = 3;
    const PsiResult p = psi(f, b);
    CHECK(p.score == 3.0);
    CHECK(p.cell == 1);
}

TEST_CASE("phi is invariant to bank row order and worker count") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const MemoryBank b = random_bank(rng, Modality::Pc, static_cast<MetricKind>(trial % 3), 25, 7);
        const FeatureMap f = random_map(rng, 6, 5, 7);
        std::vector<std::size_t> perm(b.size());
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        shuffle(std::span<std::size_t>(perm), rng);
        MemoryBank p = b;
        for (std::size_t k = 0; k < b.size(); ++k) {
            std::copy(b.row(perm[k]).begin(), b.row(perm[k]).end(), p.rows.begin() + static_cast<std::ptrdiff_t>(k * b.dim));
        }
        const ScoreMap base = phi(f, b);
        CHECK(phi(f, p) == base);
        CHECK(psi(f, p).score == psi(f, b).score);
        for (std::size_t w : {2u, 3u, 16u}) CHECK(phi(f, b, w) == base);
    }
}

TEST_CASE("correction factors") {
    const std::vector<double> pc{1.0, 3.0};
    const std::vector<double> rgb{0.25, 0.75};
    const auto [a, b] = fit_correction(pc, rgb);
    CHECK(a == 0.5);
    CHECK(b == 2.0);
    double mean_pc = 0.0, mean_rgb = 0.0;
    for (double v : pc) mean_pc += a * v / 2.0;
    for (double v : rgb) mean_rgb += b * v / 2.0;
    CHECK(mean_pc == 1.0);
    CHECK(mean_rgb == 1.0);

    const std::vector<double> same{0.3, 0.9, 1.2};
    const auto [a2, b2] = fit_correction(same, same);
    CHECK(a2 == b2);

    const std::vector<double> zeros{0.0, 0.0, 0.0};
    CHECK(correction_factor(zeros) == 1.0);
    const std::vector<double> neg{1.0, -0.5};
    CHECK_ERROR_KIND(correction_factor(neg), ErrorKind::Value);
    CHECK_ERROR_KIND(correction_factor(std::vector<double>{}), ErrorKind::Value);
    const std::vector<double> bad{1.0, NAN};
    CHECK_ERROR_KIND(correction_factor(bad), ErrorKind::Value);

    const std::vector<double> odd{4.0, 1.0, 2.0};
    CHECK(correction_factor(odd, CorrectionRule::Median) == 0.5);
    CHECK(correction_factor(odd, CorrectionRule::Max) == 0.25);
    CHECK(parse_correction("median") == CorrectionRule::Median);
    CHECK_ERROR_KIND(parse_correction("mode"), ErrorKind::Usage);
}

TEST_CASE("one-class model ranks far points as more anomalous") {
    Rng rng(4);
    std::vector<std::array<double, 2>> pairs;
    for (int i = 0; i < 50; ++i) pairs.push_back({1.0 + 0.05 * normal(rng), 1.0 + 0.05 * normal(rng)});
    OneClassConfig cfg;
    cfg.seed = 9;
    const OneClassLinear m = fit_one_class(pairs, cfg);
    CHECK(m.trained);
    CHECK(m.anomaly_score(10.0, 10.0) > m.anomaly_score(1.0, 1.0));
    CHECK(m.w[0] > 0.0);
    CHECK(m.w[1] > 0.0);
}

TEST_CASE("one-class model depends on the multiset of pairs only") {
    Rng rng(5);
    std::vector<std::array<double, 2>> pairs;
    for (int i = 0; i < 20; ++i) pairs.push_back({uniform(rng, 0, 2), uniform(rng, 0, 2)});
    OneClassConfig cfg;
    cfg.seed = 3;
    const OneClassLinear base = fit_one_class(pairs, cfg);

    auto doubled = pairs;
    doubled.insert(doubled.end(), pairs.begin(), pairs.end());
    CHECK(fit_one_class(doubled, cfg) == base);

    auto shuffled = pairs;
    shuffle(std::span<std::array<double, 2>>(shuffled), rng);
    CHECK(fit_one_class(shuffled, cfg) == base);

    CHECK_ERROR_KIND(fit_one_class(std::span<const std::array<double, 2>>(pairs.data(), 1), cfg), ErrorKind::Data);
    OneClassConfig bad = cfg;
    bad.nu = 0.0;
    CHECK_ERROR_KIND(fit_one_class(pairs, bad), ErrorKind::Value);
}

TEST_CASE("one-class rankings agree across seeds") {
    Rng rng(7);
    std::vector<std::array<double, 2>> pairs;
    for (int i = 0; i < 100; ++i) pairs.push_back({1.0 + 0.3 * normal(rng), 1.0 + 0.3 * normal(rng)});
    std::vector<std::array<double, 2>> probe;
    for (int i = 0; i < 10; ++i) probe.push_back({uniform(rng, 0, 5), uniform(rng, 0, 5)});

    std::size_t good = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        OneClassConfig a, b;
        a.seed = derive_seed(100, s);
        b.seed = derive_seed(200, s);
        const auto ma = fit_one_class(pairs, a);
        const auto mb = fit_one_class(pairs, b);
        std::size_t agree = 0, total = 0;
        for (std::size_t i = 0; i < probe.size(); ++i) {
            for (std::size_t j = i + 1; j < probe.size(); ++j) {
                const double da = ma.decision(probe[i][0], probe[i][1]) - ma.decision(probe[j][0], probe[j][1]);
                const double db = mb.decision(probe[i][0], probe[i][1]) - mb.decision(probe[j][0], probe[j][1]);
                agree += (da > 0) == (db > 0);
                ++total;
            }
        }
        good += 10 * agree >= 9 * total;
    }
    CHECK(good == 20);
}

TEST_CASE("bilinear upsampling and smoothing") {
    ScoreMap flat(3, 5, 2.5);
    const ScoreMap up = upsample_bilinear(flat, 4);
    CHECK(up.rows == 12);
    CHECK(up.cols == 20);
    for (double v : up.values) CHECK(v == 2.5);
    const ScoreMap sm = gaussian_smooth(up, 4.0);
    for (double v : sm.values) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));

    ScoreMap two(1, 2);
    two.values = {0.0, 4.0};
    const ScoreMap u = upsample_bilinear(two, 2);
    CHECK(u.values == std::vector<double>{0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0});
    CHECK(upsample_bilinear(two, 1) == two);

    Rng rng(8);
    ScoreMap r(6, 7);
    for (auto& v : r.values) v = uniform(rng, 0, 1);
    const ScoreMap s = gaussian_smooth(r, 1.5);
    const double in_sum = std::accumulate(r.values.begin(), r.values.end(), 0.0);
    const double out_sum = std::accumulate(s.values.begin(), s.values.end(), 0.0);
    CHECK(*std::max_element(s.values.begin(), s.values.end()) <= *std::max_element(r.values.begin(), r.values.end()));
    CHECK(*std::min_element(s.values.begin(), s.values.end()) >= *std::min_element(r.values.begin(), r.values.end()));
    CHECK(out_sum > 0.5 * in_sum);

    PixelMapConfig raw;
    raw.smooth = false;
    CHECK(pixel_map(r, raw) == upsample_bilinear(r, 4));
    CHECK_ERROR_KIND(gaussian_smooth(r, 0.0), ErrorKind::Value);
    CHECK_ERROR_KIND(upsample_bilinear(r, 0), ErrorKind::Value);
}

TEST_CASE("smoothing mirrors at the border") {
    ScoreMap m(1, 9);
    m.values[0] = 1.0;
    m.values[5] = 0.5;
    ScoreMap ext(1, 18);
    for (std::size_t i = 0; i < 9; ++i) ext.values[9 + i] = ext.values[8 - i] = m.values[i];
    const ScoreMap a = gaussian_smooth(m, 1.0);
    const ScoreMap b = gaussian_smooth(ext, 1.0);
    for (std::size_t i = 0; i < 9; ++i) CHECK(a.values[i] == doctest::Approx(b.values[9 + i]).epsilon(1e-12));
    CHECK(a.values[0] > a.values[1]);

    ScoreMap one(1, 1);
    one.values[0] = 1.0;
    CHECK(gaussian_smooth(one, 2.0).values[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("modes and context checks") {
    CHECK(parse_mode("single", Modality::Pc, distill::Route::FtoF).name() == "single-pc");
    CHECK(parse_mode("dual", Modality::Pc, distill::Route::FtoF).name() == "dual");
    CHECK(parse_mode("mtfi", Modality::Pc, distill::Route::FtoF).name() == "mtfi-FtoF-pc");
    CHECK_ERROR_KIND(parse_mode("triple", Modality::Pc, distill::Route::FtoF), ErrorKind::Usage);

    const DualFixture fx = dual_fixture(1);
    InferenceContext ctx;
    ctx.mode = parse_mode("single", Modality::Pc, distill::Route::FtoF);
    std::string msg;
    CHECK(testing::error_kind([&] { check_context(ctx, false); }, &msg) == ErrorKind::Config);
    CHECK(msg.find("pc memory bank") != std::string::npos);

    ctx.banks.pc = &fx.pc_bank;
    check_context(ctx, false);
    ctx.mode = parse_mode("dual", Modality::Pc, distill::Route::FtoF);
    CHECK(testing::error_kind([&] { check_context(ctx, false); }, &msg) == ErrorKind::Config);
    CHECK(msg.find("rgb memory bank") != std::string::npos);
    ctx.banks.rgb = &fx.rgb_bank;
    check_context(ctx, false);
    CHECK(testing::error_kind([&] { check_context(ctx, true); }, &msg) == ErrorKind::Config);
    CHECK(msg.find("fusion") != std::string::npos);

    ctx.mode = parse_mode("mtfi", Modality::Pc, distill::Route::FtoF);
    CHECK(testing::error_kind([&] { check_context(ctx, false); }, &msg) == ErrorKind::Config);
    CHECK(msg.find("FtoF") != std::string::npos);
    const std::vector<std::size_t> widths{5, 6};
    const distill::DenseNet wrong = distill::make_net(distill::Route::FtoF, Modality::Rgb, widths, 1);
    ctx.distiller = &wrong;
    CHECK_ERROR_KIND(check_context(ctx, false), ErrorKind::Config);
}

TEST_CASE("single mode bypasses fusion") {
    const DualFixture fx = dual_fixture(2);
    InferenceContext ctx;
    ctx.banks.pc = &fx.pc_bank;
    ctx.mode = parse_mode("single", Modality::Pc, distill::Route::FtoF);
    const FusionModel untrained = fit_fusion_model(fx.train, ctx, {});
    CHECK_FALSE(untrained.trained());

    FusionModel odd;
    odd.image.w = {-3.0, 7.0};
    odd.image.trained = true;
    odd.pixel = odd.image;
    for (const auto& s : fx.test) {
        const AnomalyResult a = infer(s, ctx);
        CHECK(a.image_score == psi(*s.pc_features, fx.pc_bank).score);
        CHECK(a.pixel_map == pixel_map(phi(*s.pc_features, fx.pc_bank), ctx.pixel));
        CHECK_FALSE(a.psi_rgb.has_value());
        InferenceContext with = ctx;
        with.fusion = &odd;
        CHECK(infer(s, with) == a);
    }
}

TEST_CASE("dual mode inside the banks scores the fusion model at the origin") {
    Rng rng(9);
    const MemoryBank pc = random_bank(rng, Modality::Pc, MetricKind::L2, 20, 4);
    const MemoryBank rgb = random_bank(rng, Modality::Rgb, MetricKind::L2, 20, 3);
    Sample s;
    s.id = "in-bank";
    s.pc_features = map_from_bank(rng, pc, 3, 3);
    s.rgb_features = map_from_bank(rng, rgb, 3, 3);
    FusionModel f;
    f.alpha = 2.0;
    f.beta = 0.5;
    f.image = {{0.7, 0.2}, 0.4, true};
    f.pixel = {{0.1, 0.9}, -0.3, true};
    InferenceContext ctx;
    ctx.banks = {&rgb, &pc};
    ctx.mode = parse_mode("dual", Modality::Pc, distill::Route::FtoF);
    ctx.fusion = &f;
    const AnomalyResult r = infer(s, ctx);
    CHECK(*r.psi_pc == 0.0);
    CHECK(*r.psi_rgb == 0.0);
    CHECK(r.image_score == f.image.anomaly_score(0.0, 0.0));
    CHECK(r.pixel_map.rows == 12);
    for (double v : r.pixel_map.values) CHECK(v == f.pixel.anomaly_score(0.0, 0.0));
}

TEST_CASE("fusion fit and inference are deterministic and pure") {
    const DualFixture fx = dual_fixture(3);
    InferenceContext ctx = dual_context(fx);
    FusionConfig cfg;
    cfg.seed = 5;
    const FusionModel m = fit_fusion_model(fx.train, ctx, cfg);
    CHECK(m.trained());
    CHECK(fit_fusion_model(fx.train, ctx, cfg) == m);
    ctx.fusion = &m;
    for (const auto& s : fx.test) {
        const AnomalyResult a = infer(s, ctx);
        CHECK(infer(s, ctx) == a);
        InferenceContext par = ctx;
        par.workers = 3;
        CHECK(infer(s, par) == a);
    }
}

TEST_CASE("rescaling one modality by a power of two leaves results unchanged") {
    const DualFixture fx = dual_fixture(4);
    InferenceContext ctx = dual_context(fx);
    FusionConfig cfg;
    cfg.seed = 8;
    const FusionModel m = fit_fusion_model(fx.train, ctx, cfg);
    ctx.fusion = &m;

    for (float lambda : {0.25f, 4.0f, 1024.0f}) {
        const MemoryBank pc_scaled = scaled(fx.pc_bank, lambda);
        auto rescale = [&](std::vector<Sample> v) {
            for (auto& s : v) s.pc_features = scaled(*s.pc_features, lambda);
            return v;
        };
        const auto train = rescale(fx.train);
        const auto test = rescale(fx.test);
        InferenceContext sctx = ctx;
        sctx.banks.pc = &pc_scaled;
        sctx.fusion = nullptr;
        const FusionModel ms = fit_fusion_model(train, sctx, cfg);
        CHECK(ms.alpha == m.alpha / lambda);
        CHECK(ms.beta == m.beta);
        CHECK(ms.image == m.image);
        CHECK(ms.pixel == m.pixel);
        sctx.fusion = &ms;
        for (std::size_t i = 0; i < test.size(); ++i) {
            const AnomalyResult a = infer(fx.test[i], ctx);
            const AnomalyResult b = infer(test[i], sctx);
            CHECK(b.image_score == a.image_score);
            CHECK(b.pixel_map == a.pixel_map);
            CHECK(*b.psi_pc == *a.psi_pc * lambda);
        }
    }
}

TEST_CASE("fusion model round-trips through JSON") {
    const DualFixture fx = dual_fixture(5);
    InferenceContext ctx = dual_context(fx);
    FusionConfig cfg;
    cfg.seed = 12;
    cfg.rule = CorrectionRule::Median;
    cfg.max_pixel_samples = 50;
    const FusionModel m = fit_fusion_model(fx.train, ctx, cfg);
    const FusionModel back = fusion_from_json(nlohmann::json::parse(to_json(m).dump()));
    CHECK(back == m);
    CHECK(back.config.max_pixel_samples == 50);
    CHECK(back.config.seed == 12);
    CHECK(back.config.image.seed == m.config.image.seed);

    nlohmann::json broken = to_json(m);
    broken.erase("alpha");
    CHECK_ERROR_KIND(fusion_from_json(broken), ErrorKind::Format);
    nlohmann::json negative = to_json(m);
    negative["beta"] = -1.0;
    CHECK_ERROR_KIND(fusion_from_json(negative), ErrorKind::Value);
}

TEST_CASE("missing features are a data error naming the sample") {
    const DualFixture fx = dual_fixture(6);
    Sample s;
    s.id = "lonely";
    s.pc_features = fx.train[0].pc_features;
    std::string msg;
    CHECK(testing::error_kind([&] { (void)resolve_features(s, Modality::Rgb, nullptr); }, &msg) == ErrorKind::Data);
    CHECK(msg.find("lonely") != std::string::npos);
}
