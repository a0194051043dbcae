#include "xmad/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "xmad/cmft.hpp"
#include "xmad/error.hpp"
#include "xmad/fsutil.hpp"
#include "xmad/random.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace xmad::distill {
namespace {

void apply_activation(Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::Relu) z = z.cwiseMax(0.0);
}

bool all_zero(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

std::size_t square_patch(std::size_t values, const char* what) {
    const auto p = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(values) / 3.0)));
    require(p > 0 && p * p * 3 == values, ErrorKind::Shape,
            std::string(what) + " width " + std::to_string(values) + " is not a square 3-channel pixel block");
    return p;
}

void read_block(const PixelGrid& grid, std::size_t r, std::size_t c, std::size_t patch, std::span<double> out) {
    std::size_t k = 0;
    for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) {
            auto px = grid.at(r * patch + y, c * patch + x);
            for (std::size_t ch = 0; ch < 3; ++ch) out[k++] = px[ch];
        }
    }
}

const char* activation_name(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    fail(ErrorKind::Format, "unknown activation '" + s + "'");
}

}  // namespace

const char* to_string(Route route) {
    switch (route) {
        case Route::FtoF: return "FtoF";
        case Route::FtoI: return "FtoI";
        case Route::ItoF: return "ItoF";
    }
    return "?";
}

Route parse_route(std::string_view text) {
    std::string t(text);
    std::ranges::transform(t, t.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    if (t == "ftof") return Route::FtoF;
    if (t == "ftoi") return Route::FtoI;
    if (t == "itof") return Route::ItoF;
    fail(ErrorKind::Usage, "unknown route '" + std::string(text) + "' (expected FtoF|FtoI|ItoF)");
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

void DenseNet::validate() const {
    require(!layers.empty(), ErrorKind::Shape, "network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        require(l.bias.size() == l.weight.cols(), ErrorKind::Shape, "layer " + std::to_string(i) + " bias size mismatch");
        if (i > 0) {
            require(layers[i - 1].weight.cols() == l.weight.rows(), ErrorKind::Shape,
                    "layer " + std::to_string(i) + " input width does not chain");
        }
        require(l.weight.allFinite() && l.bias.allFinite(), ErrorKind::Value,
                "layer " + std::to_string(i) + " has non-finite parameters");
    }
    require(layers.back().activation == Activation::Identity, ErrorKind::Shape, "last layer must be linear");
}

bool DenseNet::operator==(const DenseNet& other) const {
    if (route != other.route || source != other.source || patch != other.patch || layers.size() != other.layers.size()) {
        return false;
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& a = layers[i];
        const auto& b = other.layers[i];
        if (a.activation != b.activation || a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols() ||
            a.weight != b.weight || a.bias != b.bias) {
            return false;
        }
    }
    return true;
}

DenseNet make_net(Route route, Modality source, std::span<const std::size_t> widths, std::uint64_t seed,
                  std::size_t patch) {
    require(widths.size() >= 2, ErrorKind::Shape, "network needs at least input and output widths");
    Rng rng(seed);
    DenseNet net;
    net.route = route;
    net.source = source;
    net.patch = patch;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        require(widths[i] > 0 && widths[i + 1] > 0, ErrorKind::Shape, "layer widths must be positive");
        Layer layer;
        const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
        layer.weight.resize(static_cast<Eigen::Index>(widths[i]), static_cast<Eigen::Index>(widths[i + 1]));
        layer.bias.resize(static_cast<Eigen::Index>(widths[i + 1]));
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) layer.weight(r, c) = uniform(rng, -bound, bound);
        }
        for (Eigen::Index c = 0; c < layer.bias.size(); ++c) layer.bias(c) = uniform(rng, -bound, bound);
        layer.activation = i + 2 == widths.size() ? Activation::Identity : Activation::Relu;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

std::vector<std::size_t> default_hidden(Route route, std::size_t in_dim) {
    if (route == Route::FtoF) {
        const auto h = static_cast<std::size_t>(std::lround(2.5 * static_cast<double>(in_dim)));
        return {h, h};
    }
    return {1024, 1024};
}

double default_learning_rate(Route route) { return route == Route::ItoF ? 3e-4 : 5e-4; }

std::vector<double> net_forward(const DenseNet& net, std::span<const double> x) {
    require(x.size() == net.in_dim(), ErrorKind::Shape,
            "input width " + std::to_string(x.size()) + " != network input " + std::to_string(net.in_dim()));
    Eigen::MatrixXd row(1, static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) row(0, static_cast<Eigen::Index>(i)) = x[i];
    const Eigen::MatrixXd y = forward_batch(net, row);
    return {y.data(), y.data() + y.size()};
}

Eigen::MatrixXd forward_batch(const DenseNet& net, const Eigen::MatrixXd& inputs) {
    require(static_cast<std::size_t>(inputs.cols()) == net.in_dim(), ErrorKind::Shape,
            "input width " + std::to_string(inputs.cols()) + " != network input " + std::to_string(net.in_dim()));
    Eigen::MatrixXd a = inputs;
    for (const auto& layer : net.layers) {
        Eigen::MatrixXd z = a * layer.weight;
        z.rowwise() += layer.bias.transpose();
        apply_activation(z, layer.activation);
        a = std::move(z);
    }
    return a;
}

Gradients net_gradient(const DenseNet& net, const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets) {
    require(inputs.rows() > 0, ErrorKind::Shape, "gradient of an empty batch");
    require(inputs.rows() == targets.rows(), ErrorKind::Shape, "input and target batch sizes differ");
    require(static_cast<std::size_t>(inputs.cols()) == net.in_dim(), ErrorKind::Shape, "input width mismatch");
    require(static_cast<std::size_t>(targets.cols()) == net.out_dim(), ErrorKind::Shape, "target width mismatch");

    const std::size_t n_layers = net.layers.size();
    std::vector<Eigen::MatrixXd> activations;  // activations[0] = inputs
    std::vector<Eigen::MatrixXd> pre;
    activations.reserve(n_layers + 1);
    pre.reserve(n_layers);
    activations.push_back(inputs);
    for (const auto& layer : net.layers) {
        Eigen::MatrixXd z = activations.back() * layer.weight;
        z.rowwise() += layer.bias.transpose();
        pre.push_back(z);
        apply_activation(z, layer.activation);
        activations.push_back(std::move(z));
    }

    const double scale = 1.0 / (static_cast<double>(inputs.rows()) * static_cast<double>(targets.cols()));
    const Eigen::MatrixXd diff = activations.back() - targets;
    Gradients g;
    g.loss = diff.squaredNorm() * scale;
    g.weight.resize(n_layers);
    g.bias.resize(n_layers);

    Eigen::MatrixXd delta = 2.0 * scale * diff;
    for (std::size_t i = n_layers; i-- > 0;) {
        const auto& layer = net.layers[i];
        if (layer.activation == Activation::Relu) delta = delta.cwiseProduct((pre[i].array() > 0.0).cast<double>().matrix());
        g.weight[i] = activations[i].transpose() * delta;
        g.bias[i] = delta.colwise().sum().transpose();
        if (i > 0) delta = delta * layer.weight.transpose();
    }
    return g;
}

AdamState AdamState::zeros_like(const DenseNet& net) {
    AdamState s;
    for (const auto& layer : net.layers) {
        s.m_weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
        s.v_weight.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
        s.m_bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
        s.v_bias.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
    }
    return s;
}

namespace {

void adam_update(double* param, double* m, double* v, const double* g, Eigen::Index n, double lr, double bc1,
                 double bc2, const AdamConfig& cfg) {
    for (Eigen::Index i = 0; i < n; ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * (g[i] * g[i]);
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

}  // namespace

void adam_step(DenseNet& net, AdamState& state, const Gradients& grads, double lr, const AdamConfig& cfg) {
    require(state.m_weight.size() == net.layers.size() && grads.weight.size() == net.layers.size(), ErrorKind::Shape,
            "optimizer state does not match the network");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& layer = net.layers[i];
        require(grads.weight[i].rows() == layer.weight.rows() && grads.weight[i].cols() == layer.weight.cols() &&
                    grads.bias[i].size() == layer.bias.size() && state.m_weight[i].size() == layer.weight.size(),
                ErrorKind::Shape, "gradient shape mismatch at layer " + std::to_string(i));
        adam_update(layer.weight.data(), state.m_weight[i].data(), state.v_weight[i].data(), grads.weight[i].data(),
                    layer.weight.size(), lr, bc1, bc2, cfg);
        adam_update(layer.bias.data(), state.m_bias[i].data(), state.v_bias[i].data(), grads.bias[i].data(),
                    layer.bias.size(), lr, bc1, bc2, cfg);
    }
}

void TrainConfig::validate() const {
    require(learning_rate > 0.0, ErrorKind::Value, "learning rate must be positive");
    require(epochs >= 1, ErrorKind::Value, "epochs must be at least 1");
    require(warmup_epochs <= epochs, ErrorKind::Value, "warm-up epochs exceed total epochs");
    require(batch_size >= 1, ErrorKind::Value, "batch size must be at least 1");
    require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0,
            ErrorKind::Value, "invalid Adam hyper-parameters");
}

PairSource make_pairs(Route route, Modality source, std::span<const Sample> samples) {
    require(!samples.empty(), ErrorKind::Data, "no training samples");
    const Modality target = other(source);

    for (const auto& s : samples) {
        const bool ok = route == Route::FtoF   ? s.features(source) && s.features(target)
                        : route == Route::ItoF ? s.raw(source) && s.features(target)
                                               : s.features(source) && s.raw(target);
        if (!ok) {
            fail(ErrorKind::Data, "sample '" + s.id + "' lacks the " + to_string(source) + "/" + to_string(target) +
                                      " inputs required by route " + to_string(route));
        }
    }

    const FeatureMap& ref = route == Route::ItoF ? *samples[0].features(target) : *samples[0].features(source);
    const std::size_t rows = ref.rows();
    const std::size_t cols = ref.cols();
    const std::size_t cells = rows * cols;
    std::size_t patch = 0;
    if (route != Route::FtoF) {
        const PixelGrid& raw = route == Route::ItoF ? *samples[0].raw(source) : *samples[0].raw(target);
        require(raw.height() % rows == 0 && raw.width() % cols == 0 && raw.height() / rows == raw.width() / cols,
                ErrorKind::Shape, "raw input does not tile into square blocks over the feature grid");
        patch = raw.height() / rows;
    }
    for (const auto& s : samples) {
        auto check_map = [&](const FeatureMap& m, std::size_t dim) {
            require(m.rows() == rows && m.cols() == cols && m.dim() == dim, ErrorKind::Shape,
                    "sample '" + s.id + "' has a feature map of a different shape");
        };
        auto check_raw = [&](const PixelGrid& g) {
            require(g.height() == rows * patch && g.width() == cols * patch, ErrorKind::Shape,
                    "sample '" + s.id + "' has raw input of a different size");
        };
        if (route == Route::FtoF) {
            check_map(*s.features(source), samples[0].features(source)->dim());
            check_map(*s.features(target), samples[0].features(target)->dim());
        } else if (route == Route::ItoF) {
            check_raw(*s.raw(source));
            check_map(*s.features(target), samples[0].features(target)->dim());
        } else {
            check_map(*s.features(source), samples[0].features(source)->dim());
            check_raw(*s.raw(target));
        }
    }

    PairSource pairs;
    pairs.count = samples.size() * cells;
    switch (route) {
        case Route::FtoF:
            pairs.in_dim = samples[0].features(source)->dim();
            pairs.out_dim = samples[0].features(target)->dim();
            break;
        case Route::ItoF:
            pairs.in_dim = patch * patch * 3;
            pairs.out_dim = samples[0].features(target)->dim();
            break;
        case Route::FtoI:
            pairs.in_dim = samples[0].features(source)->dim();
            pairs.out_dim = patch * patch * 3;
            break;
    }
    pairs.fill = [samples, route, source, target, cells, cols, patch](std::size_t index, std::span<double> in,
                                                                        std::span<double> out) {
        const Sample& s = samples[index / cells];
        const std::size_t cell = index % cells;
        auto copy_cell = [](const FeatureMap& m, std::size_t c, std::span<double> dst) {
            auto src = m.cell(c);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
        };
        if (route == Route::ItoF) {
            read_block(*s.raw(source), cell / cols, cell % cols, patch, in);
        } else {
            copy_cell(*s.features(source), cell, in);
        }
        if (route == Route::FtoI) {
            read_block(*s.raw(target), cell / cols, cell % cols, patch, out);
        } else {
            copy_cell(*s.features(target), cell, out);
        }
    };
    return pairs;
}

TrainResult train_on_pairs(DenseNet net, const PairSource& pairs, const TrainConfig& cfg) {
    cfg.validate();
    net.validate();
    require(pairs.count > 0, ErrorKind::Data, "no training pairs");
    require(pairs.in_dim == net.in_dim() && pairs.out_dim == net.out_dim(), ErrorKind::Shape,
            "training pairs (" + std::to_string(pairs.in_dim) + " -> " + std::to_string(pairs.out_dim) +
                ") do not match the network (" + std::to_string(net.in_dim()) + " -> " + std::to_string(net.out_dim()) +
                ")");

    Rng rng(derive_seed(cfg.seed, 2));
    AdamState state = AdamState::zeros_like(net);
    std::vector<std::size_t> order(pairs.count);
    std::iota(order.begin(), order.end(), std::size_t{0});

    const std::size_t steps_per_epoch = (pairs.count + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    std::size_t global_step = 0;

    TrainResult result;
    result.loss_log.reserve(cfg.epochs);
    Eigen::MatrixXd inputs, targets;
    std::vector<double> in_row(pairs.in_dim), out_row(pairs.out_dim);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(std::span<std::size_t>(order), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < pairs.count; start += cfg.batch_size) {
            const std::size_t n = std::min(cfg.batch_size, pairs.count - start);
            inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pairs.in_dim));
            targets.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(pairs.out_dim));
            for (std::size_t b = 0; b < n; ++b) {
                pairs.fill(order[start + b], in_row, out_row);
                for (std::size_t j = 0; j < pairs.in_dim; ++j) inputs(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = in_row[j];
                for (std::size_t j = 0; j < pairs.out_dim; ++j) targets(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(j)) = out_row[j];
            }
            const Gradients g = net_gradient(net, inputs, targets);
            const double lr = global_step < warmup_steps
                                  ? cfg.learning_rate * static_cast<double>(global_step + 1) / static_cast<double>(warmup_steps)
                                  : cfg.learning_rate;
            adam_step(net, state, g, lr, cfg.adam);
            loss_sum += g.loss * static_cast<double>(n);
            ++global_step;
        }
        const double epoch_loss = loss_sum / static_cast<double>(pairs.count);
        result.loss_log.push_back(epoch_loss);
        const bool due = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
        if (due || epoch == cfg.epochs) result.checkpoints.push_back({net, epoch, epoch_loss});
    }
    return result;
}

TrainResult train_distiller(Route route, Modality source, std::span<const Sample> samples, const TrainConfig& cfg) {
    for (const auto& s : samples) {
        require(s.label != Label::Anomalous, ErrorKind::Data, "training sample '" + s.id + "' is anomalous");
    }
    const PairSource pairs = make_pairs(route, source, samples);
    std::vector<std::size_t> widths{pairs.in_dim};
    const auto hidden = cfg.hidden.empty() ? default_hidden(route, pairs.in_dim) : cfg.hidden;
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(pairs.out_dim);
    std::size_t patch = 0;
    if (route == Route::ItoF) patch = square_patch(pairs.in_dim, "ItoF input");
    if (route == Route::FtoI) patch = square_patch(pairs.out_dim, "FtoI output");
    DenseNet net = make_net(route, source, widths, derive_seed(cfg.seed, 1), patch);
    return train_on_pairs(std::move(net), pairs, cfg);
}

FeatureMap hallucinate_features(const DenseNet& net, const FeatureMap& source_features) {
    require(net.route == Route::FtoF, ErrorKind::Usage, "feature hallucination needs an FtoF network");
    require(source_features.dim() == net.in_dim(), ErrorKind::Shape,
            "feature width " + std::to_string(source_features.dim()) + " != network input " + std::to_string(net.in_dim()));
    const std::size_t cells = source_features.cells();
    Eigen::MatrixXd inputs(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(net.in_dim()));
    std::vector<std::uint8_t> background(cells, 0);
    for (std::size_t c = 0; c < cells; ++c) {
        auto v = source_features.cell(c);
        background[c] = source_features.is_background(c) ? 1 : 0;
        for (std::size_t j = 0; j < v.size(); ++j) inputs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = v[j];
    }
    const Eigen::MatrixXd y = forward_batch(net, inputs);
    FeatureMap out(source_features.rows(), source_features.cols(), net.out_dim());
    for (std::size_t c = 0; c < cells; ++c) {
        if (background[c]) continue;
        auto dst = out.cell(c);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<float>(y(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)));
    }
    return out;
}

FeatureMap hallucinate_from_input(const DenseNet& net, const PixelGrid& source_input, std::size_t rows, std::size_t cols) {
    require(net.route == Route::ItoF, ErrorKind::Usage, "input-to-feature hallucination needs an ItoF network");
    const std::size_t patch = square_patch(net.in_dim(), "ItoF input");
    require(source_input.height() == rows * patch && source_input.width() == cols * patch, ErrorKind::Shape,
            "raw input " + std::to_string(source_input.height()) + "x" + std::to_string(source_input.width()) +
                " does not match a " + std::to_string(rows) + "x" + std::to_string(cols) + " grid of " +
                std::to_string(patch) + "-pixel blocks");
    const std::size_t cells = rows * cols;
    Eigen::MatrixXd inputs(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(net.in_dim()));
    std::vector<std::uint8_t> background(cells, 0);
    std::vector<double> block(net.in_dim());
    for (std::size_t c = 0; c < cells; ++c) {
        read_block(source_input, c / cols, c % cols, patch, block);
        background[c] = all_zero(block) ? 1 : 0;
        for (std::size_t j = 0; j < block.size(); ++j) inputs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = block[j];
    }
    const Eigen::MatrixXd y = forward_batch(net, inputs);
    FeatureMap out(rows, cols, net.out_dim());
    for (std::size_t c = 0; c < cells; ++c) {
        if (background[c]) continue;
        auto dst = out.cell(c);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<float>(y(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)));
    }
    return out;
}

PixelGrid hallucinate_input(const DenseNet& net, const FeatureMap& source_features) {
    require(net.route == Route::FtoI, ErrorKind::Usage, "feature-to-input hallucination needs an FtoI network");
    require(source_features.dim() == net.in_dim(), ErrorKind::Shape, "feature width does not match the network input");
    const std::size_t patch = square_patch(net.out_dim(), "FtoI output");
    const std::size_t rows = source_features.rows();
    const std::size_t cols = source_features.cols();
    const std::size_t cells = rows * cols;
    Eigen::MatrixXd inputs(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(net.in_dim()));
    for (std::size_t c = 0; c < cells; ++c) {
        auto v = source_features.cell(c);
        for (std::size_t j = 0; j < v.size(); ++j) inputs(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) = v[j];
    }
    const Eigen::MatrixXd y = forward_batch(net, inputs);
    PixelGrid out(rows * patch, cols * patch);
    for (std::size_t c = 0; c < cells; ++c) {
        if (source_features.is_background(c)) continue;
        const std::size_t r0 = c / cols * patch;
        const std::size_t c0 = c % cols * patch;
        std::size_t k = 0;
        for (std::size_t y0 = 0; y0 < patch; ++y0) {
            for (std::size_t x0 = 0; x0 < patch; ++x0) {
                auto px = out.at(r0 + y0, c0 + x0);
                for (std::size_t ch = 0; ch < 3; ++ch) px[ch] = static_cast<float>(y(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(k++)));
            }
        }
    }
    return out;
}

FeatureMap hallucinate(const DenseNet& net, const Sample& sample, const extractor::ExtractorSet& extractors) {
    const Modality source = net.source;
    const Modality target = other(source);
    switch (net.route) {
        case Route::FtoF: {
            const auto& f = sample.features(source);
            require(f.has_value(), ErrorKind::Usage,
                    "FtoF hallucination of '" + sample.id + "' needs " + to_string(source) + " features");
            return hallucinate_features(net, *f);
        }
        case Route::ItoF: {
            const PixelGrid* raw = sample.raw(source);
            require(raw != nullptr, ErrorKind::Usage,
                    "ItoF hallucination of '" + sample.id + "' needs the raw " + to_string(source) + " input");
            const auto& spec = extractors.of(target);
            return hallucinate_from_input(net, *raw, spec.out_rows, spec.out_cols);
        }
        case Route::FtoI: {
            const auto& f = sample.features(source);
            require(f.has_value(), ErrorKind::Usage,
                    "FtoI hallucination of '" + sample.id + "' needs " + to_string(source) + " features");
            require(extractors.of(target).kind == extractor::Kind::Synthetic, ErrorKind::Usage,
                    std::string("FtoI needs a callable ") + to_string(target) +
                        " extractor to re-extract features from the hallucinated input");
            const PixelGrid image = hallucinate_input(net, *f);
            return extractor::extract(extractors, target, image, sample.id);
        }
    }
    fail(ErrorKind::Usage, "unknown route");
}

void save_checkpoint(const Checkpoint& checkpoint, const TrainConfig& cfg, const fs::path& dir) {
    const DenseNet& net = checkpoint.net;
    net.validate();
    fs::create_directories(dir);
    json layers = json::array();
    std::vector<std::size_t> widths{net.in_dim()};
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const auto in = static_cast<std::size_t>(l.weight.rows());
        const auto out = static_cast<std::size_t>(l.weight.cols());
        FeatureMap w(in, out, 1);
        for (std::size_t r = 0; r < in; ++r) {
            for (std::size_t c = 0; c < out; ++c) w.cell(r, c)[0] = static_cast<float>(l.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
        }
        FeatureMap b(1, out, 1);
        for (std::size_t c = 0; c < out; ++c) b.cell(0, c)[0] = static_cast<float>(l.bias(static_cast<Eigen::Index>(c)));
        const std::string stem = "layer_" + std::to_string(i);
        cmft::save(w, dir / (stem + "_weight.cmft"));
        cmft::save(b, dir / (stem + "_bias.cmft"));
        layers.push_back({{"in", in}, {"out", out}, {"activation", activation_name(l.activation)}});
        widths.push_back(out);
    }
    json manifest = {
        {"route", to_string(net.route)},
        {"source", to_string(net.source)},
        {"patch", net.patch},
        {"widths", widths},
        {"layers", layers},
        {"epoch", checkpoint.epoch},
        {"loss", checkpoint.train_loss},
        {"seed", cfg.seed},
        {"config",
         {{"learning_rate", cfg.learning_rate},
          {"epochs", cfg.epochs},
          {"warmup_epochs", cfg.warmup_epochs},
          {"batch_size", cfg.batch_size},
          {"adam_beta1", cfg.adam.beta1},
          {"adam_beta2", cfg.adam.beta2},
          {"adam_eps", cfg.adam.eps},
          {"checkpoint_every", cfg.checkpoint_every},
          {"hidden", cfg.hidden}}},
    };
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, (dir / "manifest.json").string() + ": " + e.what());
    }
    try {
        Checkpoint cp;
        cp.net.route = parse_route(manifest.at("route").get<std::string>());
        cp.net.source = parse_modality(manifest.at("source").get<std::string>());
        cp.net.patch = manifest.at("patch").get<std::size_t>();
        cp.epoch = manifest.at("epoch").get<std::size_t>();
        cp.train_loss = manifest.at("loss").get<double>();
        const auto& layers = manifest.at("layers");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string stem = "layer_" + std::to_string(i);
            const FeatureMap w = cmft::load(dir / (stem + "_weight.cmft"));
            const FeatureMap b = cmft::load(dir / (stem + "_bias.cmft"));
            require(w.rows() == layers[i].at("in").get<std::size_t>() && w.cols() == layers[i].at("out").get<std::size_t>() &&
                        w.dim() == 1 && b.rows() == 1 && b.cols() == w.cols() && b.dim() == 1,
                    ErrorKind::Shape, stem + " tensors disagree with the manifest");
            Layer layer;
            layer.weight.resize(static_cast<Eigen::Index>(w.rows()), static_cast<Eigen::Index>(w.cols()));
            for (std::size_t r = 0; r < w.rows(); ++r) {
                for (std::size_t c = 0; c < w.cols(); ++c) layer.weight(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w.cell(r, c)[0];
            }
            layer.bias.resize(static_cast<Eigen::Index>(b.cols()));
            for (std::size_t c = 0; c < b.cols(); ++c) layer.bias(static_cast<Eigen::Index>(c)) = b.cell(0, c)[0];
            layer.activation = parse_activation(layers[i].at("activation").get<std::string>());
            cp.net.layers.push_back(std::move(layer));
        }
        cp.net.validate();
        return cp;
    } catch (const json::exception& e) {
        fail(ErrorKind::Format, (dir / "manifest.json").string() + ": " + e.what());
    }
}

}  // namespace xmad::distill
