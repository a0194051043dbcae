#include "xmad/types.hpp"

#include <algorithm>
#include <cmath>

#include "xmad/error.hpp"

namespace xmad {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Io: return "I/O";
        case ErrorKind::Format: return "format";
        case ErrorKind::Length: return "length";
        case ErrorKind::Value: return "value";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::DegenerateInput: return "degenerate-input";
        case ErrorKind::NoPlane: return "no-plane";
        case ErrorKind::Lookup: return "lookup";
        case ErrorKind::Data: return "data";
        case ErrorKind::Usage: return "usage";
        case ErrorKind::Config: return "configuration";
    }
    return "unknown";
}

const char* to_string(Modality m) { return m == Modality::Rgb ? "rgb" : "pc"; }

Modality parse_modality(std::string_view text) {
    if (text == "rgb") return Modality::Rgb;
    if (text == "pc") return Modality::Pc;
    fail(ErrorKind::Usage, "unknown modality '" + std::string(text) + "' (expected rgb|pc)");
}

FeatureMap::FeatureMap(std::size_t rows, std::size_t cols, std::size_t dim, float fill)
    : rows_(rows), cols_(cols), dim_(dim), data_(rows * cols * dim, fill) {}

FeatureMap::FeatureMap(std::size_t rows, std::size_t cols, std::size_t dim, std::vector<float> data)
    : rows_(rows), cols_(cols), dim_(dim), data_(std::move(data)) {
    require(data_.size() == rows * cols * dim, ErrorKind::Shape,
            "feature map data length " + std::to_string(data_.size()) + " != " + std::to_string(rows) + "x" +
                std::to_string(cols) + "x" + std::to_string(dim));
}

bool FeatureMap::is_background(std::size_t index) const {
    auto v = cell(index);
    return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

const PixelGrid* Sample::raw(Modality m) const {
    if (m == Modality::Rgb) return rgb ? &*rgb : nullptr;
    return pc ? &*pc : nullptr;
}

void validate_sample(const Sample& sample) {
    require(sample.rgb || sample.pc || sample.rgb_features || sample.pc_features, ErrorKind::Data,
            "sample '" + sample.id + "' carries no modality");
}

void require_finite(const FeatureMap& map, std::string_view what) {
    const auto& d = map.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!std::isfinite(d[i])) {
            fail(ErrorKind::Value, std::string(what) + ": non-finite value at cell " + std::to_string(i / map.dim()) +
                                       " coordinate " + std::to_string(i % map.dim()));
        }
    }
}

}  // namespace xmad
