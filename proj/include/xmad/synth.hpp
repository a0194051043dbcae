#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xmad/extractor.hpp"
#include "xmad/preprocess.hpp"
#include "xmad/types.hpp"

namespace xmad::synth {

/// Desk-scale stand-in for a dual-modal inspection class.
///
/// Point-cloud features lie on a smooth low-dimensional manifold
/// tanh(M z + b) driven by a spatially smooth latent field z. The RGB image
/// is rendered per cell from those features, blended with pixel noise by
/// `cross_modal_coupling`, and the RGB features are the synthetic RGB
/// extractor applied to that image. Anomalies displace a contiguous block of
/// cells off the manifold in both modalities.
struct SynthConfig {
    std::size_t n_train = 20;
    std::size_t n_test_normal = 10;
    std::size_t n_test_anomalous = 10;
    std::size_t rows = 16;
    std::size_t cols = 16;
    std::size_t dim = 32;
    double cross_modal_coupling = 0.9;
    double anomaly_strength = 3.0;
    std::uint64_t seed = 0;

    std::size_t latent_dim = 3;
    /// Raw-input pixels per feature cell along each axis.
    std::size_t patch = 4;
    /// Width, in cells, of a background frame around the object.
    std::size_t background_border = 0;
    /// When set, background pixels of the raw inputs hold a tilted support plane
    /// and a dark backdrop (as captured); otherwise they are already zero.
    bool emit_background_plane = false;
};

void validate(const SynthConfig& cfg);

struct Dataset {
    std::vector<Sample> train;
    std::vector<Sample> test;
};

Dataset generate_synthetic_dataset(const SynthConfig& cfg);

/// The extractors consistent with a generated dataset: the RGB features are
/// exactly `extract_rgb(extractors(cfg).rgb, zero-background image)`.
extractor::ExtractorSet extractors(const SynthConfig& cfg);

/// The support plane used when `emit_background_plane` is set.
preprocess::Plane support_plane();

}  // namespace xmad::synth
