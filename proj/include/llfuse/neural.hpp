#pragma once

// Dense feed-forward networks with exact reverse-mode gradients and Adam.
//
// Batches are row-major in the mathematical sense: a batch is a B x d matrix,
// one sample per row. A layer computes Y = act(X W^T + 1 b^T).

#include "llfuse/common.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace llfuse::nn {

enum class Activation { Identity, Relu };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "identity") return Activation::Identity;
    throw DataError("unknown activation tag: " + s);
}

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::Relu;

    Eigen::Index in_dim() const { return weight.cols(); }
    Eigen::Index out_dim() const { return weight.rows(); }
};

struct MlpSpec {
    int input_dim = 0;
    std::vector<int> latent_dims;              // output dimension of each layer
    std::vector<Activation> activations;       // one per layer

    static MlpSpec uniform(int input_dim, std::vector<int> dims, Activation act) {
        MlpSpec s{input_dim, std::move(dims), {}};
        s.activations.assign(s.latent_dims.size(), act);
        return s;
    }

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("MLP input dimension must be positive");
        if (latent_dims.empty()) throw std::invalid_argument("MLP needs at least one layer");
        if (activations.size() != latent_dims.size())
            throw std::invalid_argument("MLP needs one activation per layer");
        for (int d : latent_dims)
            if (d < 1) throw std::invalid_argument("MLP layer dimensions must be positive");
    }
};

struct Mlp {
    std::vector<DenseLayer> layers;
    /// Bumped whenever parameters are updated through this API; recorded
    /// activations from an older revision are rejected by backward().
    std::uint64_t revision = 0;

    Eigen::Index in_dim() const { return layers.front().in_dim(); }
    Eigen::Index out_dim() const { return layers.back().out_dim(); }

    std::vector<int> latent_dims() const {
        std::vector<int> d;
        for (const auto& l : layers) d.push_back(static_cast<int>(l.out_dim()));
        return d;
    }

    /// Encoder shape: latent dimensions never grow with depth.
    bool is_encoder_shaped() const {
        const auto d = latent_dims();
        for (std::size_t i = 1; i < d.size(); ++i)
            if (d[i] > d[i - 1]) return false;
        return true;
    }

    /// Decoder shape: latent dimensions never shrink with depth.
    bool is_decoder_shaped() const {
        const auto d = latent_dims();
        for (std::size_t i = 1; i < d.size(); ++i)
            if (d[i] < d[i - 1]) return false;
        return true;
    }

    std::size_t parameter_count() const {
        std::size_t c = 0;
        for (const auto& l : layers) c += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return c;
    }

    /// Weight then bias of each layer, in layer order.
    std::vector<std::span<double>> parameter_blocks() {
        std::vector<std::span<double>> blocks;
        for (auto& l : layers) {
            blocks.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
            blocks.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        }
        return blocks;
    }
};

/// Uniform in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Glorot-uniform weights, zero biases.
inline Mlp init_params(const MlpSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    Mlp mlp;
    int fan_in = spec.input_dim;
    for (std::size_t k = 0; k < spec.latent_dims.size(); ++k) {
        const int fan_out = spec.latent_dims[k];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        DenseLayer layer;
        layer.weight.resize(fan_out, fan_in);
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
                layer.weight(i, j) = (2.0 * uniform01(rng) - 1.0) * bound;
        layer.bias = Vector::Zero(fan_out);
        layer.activation = spec.activations[k];
        mlp.layers.push_back(std::move(layer));
        fan_in = fan_out;
    }
    return mlp;
}

inline Mlp init_params(const MlpSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return init_params(spec, rng);
}

/// Everything backward() needs: each layer's input and pre-activation.
struct Activations {
    std::vector<Matrix> inputs;
    std::vector<Matrix> preactivations;
    Matrix output;
    const Mlp* source = nullptr;
    std::uint64_t revision = 0;
};

inline Activations forward(const Mlp& mlp, const Matrix& x) {
    if (mlp.layers.empty()) throw std::invalid_argument("forward: empty MLP");
    if (x.cols() != mlp.in_dim())
        throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                    " columns, MLP expects " + std::to_string(mlp.in_dim()));
    Activations acts;
    acts.source = &mlp;
    acts.revision = mlp.revision;
    Matrix current = x;
    for (const auto& layer : mlp.layers) {
        Matrix z = current * layer.weight.transpose();
        z.rowwise() += layer.bias.transpose();
        acts.inputs.push_back(std::move(current));
        current = layer.activation == Activation::Relu ? Matrix(z.cwiseMax(0.0)) : z;
        acts.preactivations.push_back(std::move(z));
    }
    acts.output = std::move(current);
    return acts;
}

struct LayerGradient {
    Matrix weight;
    Vector bias;
};

struct MlpGradient {
    std::vector<LayerGradient> layers;
    Matrix input_grad;

    /// Same order as Mlp::parameter_blocks().
    std::vector<std::span<const double>> blocks() const {
        std::vector<std::span<const double>> out;
        for (const auto& l : layers) {
            out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
            out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
        }
        return out;
    }
};

/// Reverse pass through the computation recorded in `acts`. The ReLU
/// derivative at exactly zero is taken as zero.
inline MlpGradient backward(const Mlp& mlp, const Activations& acts, const Matrix& output_grad) {
    if (acts.source != &mlp || acts.revision != mlp.revision ||
        acts.inputs.size() != mlp.layers.size())
        throw std::logic_error("backward: activations were not produced by this MLP state");
    if (output_grad.rows() != acts.output.rows() || output_grad.cols() != acts.output.cols())
        throw std::invalid_argument("backward: output gradient shape mismatch");

    MlpGradient grad;
    grad.layers.resize(mlp.layers.size());
    Matrix upstream = output_grad;
    for (std::size_t k = mlp.layers.size(); k-- > 0;) {
        const auto& layer = mlp.layers[k];
        Matrix dz = upstream;
        if (layer.activation == Activation::Relu)
            dz = (acts.preactivations[k].array() > 0.0).select(upstream, 0.0);
        grad.layers[k].weight = dz.transpose() * acts.inputs[k];
        grad.layers[k].bias = dz.colwise().sum().transpose();
        upstream = dz * layer.weight;
    }
    grad.input_grad = std::move(upstream);
    return grad;
}

inline double mse(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw std::invalid_argument("mse: shape mismatch");
    if (pred.size() == 0) return 0.0;
    return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

/// d mse / d pred.
inline Matrix mse_grad(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw std::invalid_argument("mse_grad: shape mismatch");
    return 2.0 * (pred - target) / static_cast<double>(pred.size());
}

struct AdamState {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    long step = 0;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
};

/// One bias-corrected Adam update in place. Accumulators are sized on first
/// use and must keep the same block layout afterwards.
inline void adam_step(AdamState& state, std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: block count mismatch");
    if (state.first_moment.empty()) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), 0.0);
            state.second_moment.emplace_back(p.size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size())
        throw std::invalid_argument("adam: parameter layout changed between steps");
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].size() != grads[b].size() || state.first_moment[b].size() != params[b].size())
            throw std::invalid_argument("adam: block " + std::to_string(b) + " shape mismatch");
        for (std::size_t i = 0; i < grads[b].size(); ++i)
            if (!std::isfinite(grads[b][i]))
                throw NumericError("adam: non-finite gradient in block " + std::to_string(b) +
                                   " at index " + std::to_string(i));
    }

    ++state.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto& m = state.first_moment[b];
        auto& v = state.second_moment[b];
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double g = grads[b][i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            params[b][i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON, row-major parameter arrays.

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json to_json(const Mlp& mlp) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : mlp.layers) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.weight.size()));
        for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
            for (Eigen::Index j = 0; j < l.weight.cols(); ++j) w.push_back(l.weight(i, j));
        layers.push_back({{"in", l.in_dim()},
                          {"out", l.out_dim()},
                          {"activation", to_string(l.activation)},
                          {"weight", w},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return {{"format_version", kCheckpointFormatVersion}, {"layers", layers}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
    if (j.value("format_version", 0) != kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version");
    Mlp mlp;
    for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        const auto in = lj.at("in").get<Eigen::Index>();
        const auto out = lj.at("out").get<Eigen::Index>();
        const auto w = lj.at("weight").get<std::vector<double>>();
        const auto b = lj.at("bias").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(w.size()) != in * out || static_cast<Eigen::Index>(b.size()) != out)
            throw DataError("checkpoint layer parameter count mismatch");
        l.weight.resize(out, in);
        for (Eigen::Index i = 0; i < out; ++i)
            for (Eigen::Index k = 0; k < in; ++k) l.weight(i, k) = w[static_cast<std::size_t>(i * in + k)];
        l.bias = Eigen::Map<const Vector>(b.data(), out);
        l.activation = activation_from_string(lj.at("activation").get<std::string>());
        if (!mlp.layers.empty() && mlp.layers.back().out_dim() != in)
            throw DataError("checkpoint layers do not chain");
        mlp.layers.push_back(std::move(l));
    }
    if (mlp.layers.empty()) throw DataError("checkpoint has no layers");
    return mlp;
}

}  // namespace llfuse::nn
