#include "xmad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xmad/error.hpp"

namespace xmad::metrics {

RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    require(scores.size() == labels.size(), ErrorKind::Shape, "scores and labels differ in length");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        require(labels[i] <= 1, ErrorKind::Value, "labels must be 0 or 1");
        require(std::isfinite(scores[i]), ErrorKind::Value, "score " + std::to_string(i) + " is not finite");
        pos += labels[i];
    }
    const std::size_t neg = labels.size() - pos;
    require(pos > 0 && neg > 0, ErrorKind::Value, "AUROC needs both classes");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.fpr.push_back(0.0);
    roc.tpr.push_back(0.0);
    double tp = 0.0, fp = 0.0, area2 = 0.0;
    const double p = static_cast<double>(pos);
    const double n = static_cast<double>(neg);
    for (std::size_t i = 0; i < order.size();) {
        const double t = scores[order[i]];
        double gtp = 0.0, gfp = 0.0;
        for (; i < order.size() && scores[order[i]] == t; ++i) {
            if (labels[order[i]]) {
                gtp += 1.0;
            } else {
                gfp += 1.0;
            }
        }
        area2 += gfp * (2.0 * tp + gtp);
        tp += gtp;
        fp += gfp;
        roc.thresholds.push_back(t);
        roc.fpr.push_back(fp / n);
        roc.tpr.push_back(tp / p);
    }
    roc.area = area2 / (2.0 * p * n);
    return roc;
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    return roc_curve(scores, labels).area;
}

std::vector<std::vector<std::size_t>> connected_components(const Mask& mask) {
    const std::size_t h = mask.height, w = mask.width;
    std::vector<std::size_t> parent(h * w);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto find = [&](std::size_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    auto unite = [&](std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    };
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            if (!mask.at(r, c)) continue;
            const std::size_t i = r * w + c;
            if (c > 0 && mask.at(r, c - 1)) unite(i, i - 1);
            if (r > 0) {
                if (mask.at(r - 1, c)) unite(i, i - w);
                if (c > 0 && mask.at(r - 1, c - 1)) unite(i, i - w - 1);
                if (c + 1 < w && mask.at(r - 1, c + 1)) unite(i, i - w + 1);
            }
        }
    }
    std::vector<std::vector<std::size_t>> comps;
    std::vector<std::size_t> slot(h * w, SIZE_MAX);
    for (std::size_t i = 0; i < h * w; ++i) {
        if (!mask.data[i]) continue;
        const std::size_t root = find(i);
        if (slot[root] == SIZE_MAX) {
            slot[root] = comps.size();
            comps.emplace_back();
        }
        comps[slot[root]].push_back(i);
    }
    return comps;
}

double integrate_to(std::span<const double> x, std::span<const double> y, double limit) {
    require(x.size() == y.size(), ErrorKind::Shape, "curve coordinates differ in length");
    double area = 0.0;
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double x0 = x[i - 1], x1 = x[i];
        if (x0 >= limit) break;
        if (x1 <= limit) {
            area += (x1 - x0) * (y[i - 1] + y[i]) / 2.0;
        } else {
            const double t = (limit - x0) / (x1 - x0);
            const double yl = y[i - 1] + t * (y[i] - y[i - 1]);
            area += (limit - x0) * (y[i - 1] + yl) / 2.0;
            break;
        }
    }
    return area;
}

ProCurve pro_curve(std::span<const ScoreMap> maps, std::span<const Mask> masks, double fpr_limit,
                   std::size_t max_thresholds) {
    require(fpr_limit > 0.0, ErrorKind::Value, "FPR limit must be positive");
    require(maps.size() == masks.size(), ErrorKind::Shape, "one mask per score map expected");
    require(max_thresholds >= 2, ErrorKind::Value, "threshold budget must be at least 2");

    struct Pixel {
        double score;
        std::int64_t component;  // -1 for negatives
    };
    std::vector<Pixel> pixels;
    std::vector<double> comp_weight;
    std::size_t negatives = 0;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        const ScoreMap& map = maps[m];
        const Mask& mask = masks[m];
        require(map.rows == mask.height && map.cols == mask.width, ErrorKind::Shape,
                "score map " + std::to_string(m) + " does not match its mask");
        std::vector<std::int64_t> label(map.values.size(), -1);
        for (const auto& comp : connected_components(mask)) {
            const auto id = static_cast<std::int64_t>(comp_weight.size());
            comp_weight.push_back(1.0 / static_cast<double>(comp.size()));
            for (std::size_t i : comp) label[i] = id;
        }
        for (std::size_t i = 0; i < map.values.size(); ++i) {
            require(std::isfinite(map.values[i]), ErrorKind::Value, "score map " + std::to_string(m) + " is not finite");
            pixels.push_back({map.values[i], label[i]});
            if (label[i] < 0) ++negatives;
        }
    }
    require(!comp_weight.empty(), ErrorKind::Value, "AUPRO needs at least one anomalous region");
    require(negatives > 0, ErrorKind::Value, "AUPRO needs at least one normal pixel");

    std::sort(pixels.begin(), pixels.end(), [](const Pixel& a, const Pixel& b) { return a.score > b.score; });
    std::vector<double> unique;
    for (const auto& p : pixels) {
        if (unique.empty() || p.score != unique.back()) unique.push_back(p.score);
    }
    std::vector<double> thresholds;
    if (unique.size() <= max_thresholds) {
        thresholds = std::move(unique);
    } else {
        thresholds.reserve(max_thresholds);
        const double last = static_cast<double>(unique.size() - 1);
        for (std::size_t k = 0; k < max_thresholds; ++k) {
            const auto idx = static_cast<std::size_t>(
                std::llround(static_cast<double>(k) * last / static_cast<double>(max_thresholds - 1)));
            if (thresholds.empty() || unique[idx] != thresholds.back()) thresholds.push_back(unique[idx]);
        }
    }

    ProCurve curve;
    curve.limit = fpr_limit;
    curve.fpr.push_back(0.0);
    curve.pro.push_back(0.0);
    const double n_comp = static_cast<double>(comp_weight.size());
    const double n_neg = static_cast<double>(negatives);
    std::size_t fp = 0;
    double overlap = 0.0;
    std::size_t i = 0;
    for (double t : thresholds) {
        for (; i < pixels.size() && pixels[i].score >= t; ++i) {
            if (pixels[i].component < 0) {
                ++fp;
            } else {
                overlap += comp_weight[static_cast<std::size_t>(pixels[i].component)];
            }
        }
        curve.fpr.push_back(static_cast<double>(fp) / n_neg);
        curve.pro.push_back(std::min(1.0, overlap / n_comp));
    }
    curve.integral = integrate_to(curve.fpr, curve.pro, fpr_limit);
    curve.area = curve.integral / fpr_limit;
    return curve;
}

double aupro(std::span<const ScoreMap> maps, std::span<const Mask> masks, double fpr_limit) {
    return pro_curve(maps, masks, fpr_limit).area;
}

double pixel_auroc(std::span<const ScoreMap> maps, std::span<const Mask> masks, std::span<const Mask> valid) {
    require(maps.size() == masks.size(), ErrorKind::Shape, "one mask per score map expected");
    require(valid.empty() || valid.size() == maps.size(), ErrorKind::Shape, "one validity mask per score map expected");
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        require(maps[m].rows == masks[m].height && maps[m].cols == masks[m].width, ErrorKind::Shape,
                "score map " + std::to_string(m) + " does not match its mask");
        for (std::size_t i = 0; i < maps[m].values.size(); ++i) {
            if (!valid.empty() && !valid[m].data[i]) continue;
            scores.push_back(maps[m].values[i]);
            labels.push_back(masks[m].data[i] ? 1 : 0);
        }
    }
    return auroc(scores, labels);
}

nlohmann::json report_json(std::span<const ClassMetrics> rows) {
    nlohmann::json classes = nlohmann::json::array();
    double si = 0.0, sp = 0.0, sa = 0.0;
    for (const auto& r : rows) {
        classes.push_back({{"class", r.name}, {"i_auroc", r.i_auroc}, {"p_auroc", r.p_auroc}, {"aupro", r.aupro}});
        si += r.i_auroc;
        sp += r.p_auroc;
        sa += r.aupro;
    }
    const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
    return {{"classes", classes}, {"mean", {{"i_auroc", si / n}, {"p_auroc", sp / n}, {"aupro", sa / n}}}};
}

}  // namespace xmad::metrics
