#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xmad/extractor.hpp"
#include "xmad/types.hpp"

namespace xmad::distill {

/// Distillation routes: feature->feature, feature->input (then re-extract), input->feature.
enum class Route { FtoF, FtoI, ItoF };

const char* to_string(Route route);
Route parse_route(std::string_view text);

enum class Activation { Relu, Identity };

struct Layer {
    Eigen::MatrixXd weight;  // in x out
    Eigen::VectorXd bias;    // out
    Activation activation = Activation::Relu;
};

/// Fully connected network; the last layer is linear. `source` is the modality
/// the network reads (the main modality at inference); it hallucinates the other.
struct DenseNet {
    std::vector<Layer> layers;
    Route route = Route::FtoF;
    Modality source = Modality::Pc;
    /// Raw-input pixels per cell edge for routes that read or write pixel blocks.
    std::size_t patch = 0;

    std::size_t in_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.rows()); }
    std::size_t out_dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.cols()); }
    std::size_t parameter_count() const;
    /// Throws a shape error when layer dims do not chain, the last activation is
    /// not identity, or a parameter is non-finite.
    void validate() const;

    bool operator==(const DenseNet& other) const;
};

/// Widths [in, hidden..., out]; uniform(+-1/sqrt(fan_in)) initialization from `seed`.
DenseNet make_net(Route route, Modality source, std::span<const std::size_t> widths, std::uint64_t seed,
                  std::size_t patch = 0);

/// Default hidden widths per route: 2.5x the input width twice for FtoF, 1024 twice otherwise.
std::vector<std::size_t> default_hidden(Route route, std::size_t in_dim);

std::vector<double> net_forward(const DenseNet& net, std::span<const double> x);
/// Row-wise forward pass: inputs are batch x in_dim.
Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& inputs);

struct Gradients {
    std::vector<Eigen::MatrixXd> weight;
    std::vector<Eigen::VectorXd> bias;
    double loss = 0.0;
};

/// Loss is the batch mean of ||net(x) - t||^2 / out_dim; gradients by backpropagation.
Gradients net_gradient(const DenseNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Eigen::MatrixXd> m_weight, v_weight;
    std::vector<Eigen::VectorXd> m_bias, v_bias;
    std::uint64_t step = 0;

    static AdamState zeros_like(const DenseNet& net);
};

/// Bias-corrected Adam: theta -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(DenseNet& net, AdamState& state, const Gradients& grads, double lr, const AdamConfig& cfg = {});

struct TrainConfig {
    double learning_rate = 5e-4;
    std::size_t epochs = 100;
    std::size_t warmup_epochs = 10;
    std::size_t batch_size = 32;
    AdamConfig adam{};
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 1;
    /// Empty selects default_hidden(route, in_dim).
    std::vector<std::size_t> hidden;

    void validate() const;
};

/// Learning-rate default per route: ItoF trains slower.
double default_learning_rate(Route route);

/// Training pairs addressed by index; `fill` writes one (input, target) pair.
struct PairSource {
    std::size_t count = 0;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::function<void(std::size_t, std::span<double>, std::span<double>)> fill;
};

/// Per-cell pairs for a route over paired normal samples. FtoF maps a feature
/// cell of `source` to the other modality's cell; ItoF maps the flattened raw
/// pixel block of `source` to the other's feature cell; FtoI maps a `source`
/// feature cell to the other modality's raw pixel block. Samples are borrowed.
PairSource make_pairs(Route route, Modality source, std::span<const Sample> samples);

struct Checkpoint {
    DenseNet net;
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
};

struct TrainResult {
    std::vector<Checkpoint> checkpoints;
    std::vector<double> loss_log;  // one mean train loss per epoch
};

/// Seeded per-epoch shuffle, mini-batch Adam with linear per-step warm-up to
/// the configured rate over `warmup_epochs`, then a constant rate.
TrainResult train_on_pairs(DenseNet net, const PairSource& pairs, const TrainConfig& cfg);

TrainResult train_distiller(Route route, Modality source, std::span<const Sample> samples, const TrainConfig& cfg);

/// Hallucinated feature map of the modality `net.source` does not cover.
/// FtoF and ItoF map cell by cell; FtoI assembles a raw grid from pixel blocks
/// and runs the extractor of the missing modality on it. Cells whose input is
/// all zeros (background) stay zero.
FeatureMap hallucinate(const DenseNet& net, const Sample& sample, const extractor::ExtractorSet& extractors);

FeatureMap hallucinate_features(const DenseNet& net, const FeatureMap& source_features);
FeatureMap hallucinate_from_input(const DenseNet& net, const PixelGrid& source_input, std::size_t rows, std::size_t cols);
PixelGrid hallucinate_input(const DenseNet& net, const FeatureMap& source_features);

/// Checkpoint directory: layer_<i>_weight.cmft (in x out x 1), layer_<i>_bias.cmft
/// (1 x out x 1) and manifest.json. Parameters are stored as float32.
void save_checkpoint(const Checkpoint& checkpoint, const TrainConfig& cfg, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace xmad::distill
