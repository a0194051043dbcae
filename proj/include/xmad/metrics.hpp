#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xmad/types.hpp"

namespace xmad::metrics {

struct RocCurve {
    std::vector<double> thresholds;  // descending
    std::vector<double> fpr;         // starts at 0, ends at 1
    std::vector<double> tpr;
    double area = 0.0;
};

/// ROC with equal scores grouped into one step; labels are 0 or 1.
RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// 8-connected components, each a sorted list of row-major pixel indices,
/// ordered by their first pixel.
std::vector<std::vector<std::size_t>> connected_components(const Mask& mask);

inline constexpr std::size_t kMaxThresholds = 50000;

struct ProCurve {
    std::vector<double> fpr;
    std::vector<double> pro;
    double limit = 0.3;
    /// Trapezoid area over [0, limit] before normalization.
    double integral = 0.0;
    /// integral / limit.
    double area = 0.0;
};

ProCurve pro_curve(std::span<const ScoreMap> maps, std::span<const Mask> masks, double fpr_limit = 0.3,
                   std::size_t max_thresholds = kMaxThresholds);
double aupro(std::span<const ScoreMap> maps, std::span<const Mask> masks, double fpr_limit = 0.3);

/// Pixel AUROC over all pixels, or only pixels flagged in `valid` when given.
double pixel_auroc(std::span<const ScoreMap> maps, std::span<const Mask> masks, std::span<const Mask> valid = {});

/// Trapezoid integral of y(x) over [0, limit], interpolating at the limit.
double integrate_to(std::span<const double> x, std::span<const double> y, double limit);

struct ClassMetrics {
    std::string name;
    double i_auroc = 0.0;
    double p_auroc = 0.0;
    double aupro = 0.0;
};

/// {"classes": [{"class", "i_auroc", "p_auroc", "aupro"}, ...], "mean": {...}} in row order.
nlohmann::json report_json(std::span<const ClassMetrics> rows);

}  // namespace xmad::metrics
