#pragma once

// Multimodal autoencoder that fuses N per-graph PPMI feature rows into one
// embedding per node:
//
//   P^(l)_i --enc_l--> z^(l)_i ; concat --shared enc--> z_i
//   z_i --shared dec--> split into N chunks --dec_l--> reconstruction of P^(l)_i
//
// The loss is the mean over graphs of the per-graph MSE.

#include "llfuse/common.hpp"
#include "llfuse/io.hpp"
#include "llfuse/neural.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace llfuse::fusion {

using nn::Activation;

struct FusionArchitecture {
    int graph_count = 6;                       // N
    int input_dim = 69;                        // n
    std::vector<int> graph_encoder_dims{25, 10};
    std::vector<int> shared_encoder_dims{30, 15};
    Activation hidden_activation = Activation::Relu;
    Activation embedding_activation = Activation::Relu;
    Activation output_activation = Activation::Identity;

    int graph_code_dim() const { return graph_encoder_dims.back(); }
    int concat_dim() const { return graph_count * graph_code_dim(); }
    int embedding_dim() const { return shared_encoder_dims.back(); }

    nn::MlpSpec graph_encoder_spec() const {
        nn::MlpSpec s{input_dim, graph_encoder_dims, {}};
        s.activations.assign(s.latent_dims.size(), hidden_activation);
        return s;
    }

    nn::MlpSpec shared_encoder_spec() const {
        nn::MlpSpec s{concat_dim(), shared_encoder_dims, {}};
        s.activations.assign(s.latent_dims.size(), hidden_activation);
        s.activations.back() = embedding_activation;
        return s;
    }

    /// Mirror of the shared encoder: hidden dims reversed, ending at the concat width.
    nn::MlpSpec shared_decoder_spec() const {
        nn::MlpSpec s{embedding_dim(), {}, {}};
        for (auto it = shared_encoder_dims.rbegin() + 1; it != shared_encoder_dims.rend(); ++it)
            s.latent_dims.push_back(*it);
        s.latent_dims.push_back(concat_dim());
        s.activations.assign(s.latent_dims.size(), hidden_activation);
        return s;
    }

    /// Mirror of a graph encoder, ending at the input width n.
    nn::MlpSpec graph_decoder_spec() const {
        nn::MlpSpec s{graph_code_dim(), {}, {}};
        for (auto it = graph_encoder_dims.rbegin() + 1; it != graph_encoder_dims.rend(); ++it)
            s.latent_dims.push_back(*it);
        s.latent_dims.push_back(input_dim);
        s.activations.assign(s.latent_dims.size(), hidden_activation);
        s.activations.back() = output_activation;
        return s;
    }

    void validate() const {
        if (graph_count < 1) throw ConfigError("fusion model needs at least one graph");
        if (input_dim < 1) throw ConfigError("fusion model input dimension must be positive");
        if (graph_encoder_dims.empty() || shared_encoder_dims.empty())
            throw ConfigError("encoder dimension lists must be non-empty");
        for (int d : graph_encoder_dims)
            if (d < 1) throw ConfigError("encoder dimensions must be positive");
        for (int d : shared_encoder_dims)
            if (d < 1) throw ConfigError("encoder dimensions must be positive");
    }

    /// Architecture with the given sizes and default hidden widths.
    static FusionArchitecture defaults(int graph_count, int input_dim) {
        FusionArchitecture a;
        a.graph_count = graph_count;
        a.input_dim = input_dim;
        return a;
    }
};

struct FusionModel {
    FusionArchitecture arch;
    std::vector<nn::Mlp> graph_encoders;
    nn::Mlp shared_encoder;
    nn::Mlp shared_decoder;
    std::vector<nn::Mlp> graph_decoders;

    /// Graph encoders, shared encoder, shared decoder, graph decoders.
    std::vector<nn::Mlp*> parts() {
        std::vector<nn::Mlp*> p;
        for (auto& m : graph_encoders) p.push_back(&m);
        p.push_back(&shared_encoder);
        p.push_back(&shared_decoder);
        for (auto& m : graph_decoders) p.push_back(&m);
        return p;
    }

    std::vector<std::span<double>> parameter_blocks() {
        std::vector<std::span<double>> blocks;
        for (auto* m : parts()) {
            auto b = m->parameter_blocks();
            blocks.insert(blocks.end(), b.begin(), b.end());
        }
        return blocks;
    }

    void bump_revision() {
        for (auto* m : parts()) ++m->revision;
    }
};

inline FusionModel make_model(const FusionArchitecture& arch, std::uint64_t seed) {
    arch.validate();
    std::mt19937_64 rng(seed);
    FusionModel m;
    m.arch = arch;
    for (int l = 0; l < arch.graph_count; ++l)
        m.graph_encoders.push_back(nn::init_params(arch.graph_encoder_spec(), rng));
    m.shared_encoder = nn::init_params(arch.shared_encoder_spec(), rng);
    m.shared_decoder = nn::init_params(arch.shared_decoder_spec(), rng);
    for (int l = 0; l < arch.graph_count; ++l)
        m.graph_decoders.push_back(nn::init_params(arch.graph_decoder_spec(), rng));
    return m;
}

/// One node at one date: its N feature rows.
struct TrainingSample {
    std::size_t asset_index = 0;
    std::size_t date_index = 0;
    std::vector<Vector> rows;
};

struct SampleKey {
    std::size_t asset_index = 0;
    std::size_t date_index = 0;
};

/// Column-stacked form of many samples: features[l] is S x n, one row per sample.
struct FusionDataset {
    std::vector<Matrix> features;
    std::vector<SampleKey> keys;

    std::size_t size() const { return keys.size(); }
    std::size_t graph_count() const { return features.size(); }

    static FusionDataset from_samples(const std::vector<TrainingSample>& samples) {
        FusionDataset d;
        if (samples.empty()) return d;
        const auto graphs = samples.front().rows.size();
        const auto n = samples.front().rows.front().size();
        d.features.assign(graphs, Matrix(static_cast<Eigen::Index>(samples.size()), n));
        for (std::size_t s = 0; s < samples.size(); ++s) {
            if (samples[s].rows.size() != graphs) throw std::invalid_argument("sample graph count mismatch");
            for (std::size_t l = 0; l < graphs; ++l) {
                if (samples[s].rows[l].size() != n) throw std::invalid_argument("sample row length mismatch");
                d.features[l].row(static_cast<Eigen::Index>(s)) = samples[s].rows[l].transpose();
            }
            d.keys.push_back({samples[s].asset_index, samples[s].date_index});
        }
        return d;
    }

    FusionDataset subset(const std::vector<std::size_t>& idx) const {
        FusionDataset d;
        for (const auto& f : features) {
            Matrix m(static_cast<Eigen::Index>(idx.size()), f.cols());
            for (std::size_t r = 0; r < idx.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = f.row(static_cast<Eigen::Index>(idx[r]));
            d.features.push_back(std::move(m));
        }
        for (auto i : idx) d.keys.push_back(keys[i]);
        return d;
    }
};

struct ForwardPass {
    std::vector<nn::Activations> encoders;
    nn::Activations shared_encoder;
    nn::Activations shared_decoder;
    std::vector<nn::Activations> decoders;

    const Matrix& embeddings() const { return shared_encoder.output; }
};

inline void check_inputs(const FusionModel& model, const std::vector<Matrix>& features) {
    if (static_cast<int>(features.size()) != model.arch.graph_count)
        throw std::invalid_argument("fusion model expects " + std::to_string(model.arch.graph_count) +
                                    " graphs, got " + std::to_string(features.size()));
    for (const auto& f : features) {
        if (f.cols() != model.arch.input_dim)
            throw std::invalid_argument("fusion model expects rows of length " +
                                        std::to_string(model.arch.input_dim));
        if (f.rows() != features.front().rows())
            throw std::invalid_argument("per-graph batches differ in size");
    }
}

inline ForwardPass forward(const FusionModel& model, const std::vector<Matrix>& features) {
    check_inputs(model, features);
    const auto batch = features.front().rows();
    const int code = model.arch.graph_code_dim();
    ForwardPass pass;
    Matrix concat(batch, model.arch.concat_dim());
    for (int l = 0; l < model.arch.graph_count; ++l) {
        pass.encoders.push_back(nn::forward(model.graph_encoders[static_cast<std::size_t>(l)],
                                            features[static_cast<std::size_t>(l)]));
        concat.middleCols(l * code, code) = pass.encoders.back().output;
    }
    pass.shared_encoder = nn::forward(model.shared_encoder, concat);
    pass.shared_decoder = nn::forward(model.shared_decoder, pass.shared_encoder.output);
    for (int l = 0; l < model.arch.graph_count; ++l)
        pass.decoders.push_back(nn::forward(model.graph_decoders[static_cast<std::size_t>(l)],
                                            pass.shared_decoder.output.middleCols(l * code, code)));
    return pass;
}

/// Fused embedding of one sample.
inline Vector encode(const FusionModel& model, const TrainingSample& sample) {
    std::vector<Matrix> features;
    for (const auto& r : sample.rows) features.push_back(r.transpose());
    check_inputs(model, features);
    const int code = model.arch.graph_code_dim();
    RowVector concat(model.arch.concat_dim());
    for (int l = 0; l < model.arch.graph_count; ++l)
        concat.segment(l * code, code) =
            nn::forward(model.graph_encoders[static_cast<std::size_t>(l)], features[static_cast<std::size_t>(l)]).output;
    return nn::forward(model.shared_encoder, Matrix(concat)).output.transpose();
}

/// N reconstructed feature rows from an embedding.
inline std::vector<Vector> decode(const FusionModel& model, const Vector& z) {
    if (z.size() != model.arch.embedding_dim())
        throw std::invalid_argument("decode: embedding has dimension " + std::to_string(z.size()) +
                                    ", model expects " + std::to_string(model.arch.embedding_dim()));
    const Matrix expanded = nn::forward(model.shared_decoder, Matrix(z.transpose())).output;
    const int code = model.arch.graph_code_dim();
    std::vector<Vector> out;
    for (int l = 0; l < model.arch.graph_count; ++l)
        out.push_back(nn::forward(model.graph_decoders[static_cast<std::size_t>(l)],
                                  Matrix(expanded.middleCols(l * code, code)))
                          .output.transpose());
    return out;
}

inline double reconstruction_loss(const ForwardPass& pass, const std::vector<Matrix>& features) {
    double total = 0.0;
    for (std::size_t l = 0; l < features.size(); ++l) total += nn::mse(pass.decoders[l].output, features[l]);
    return total / static_cast<double>(features.size());
}

inline double reconstruction_loss(const FusionModel& model, const std::vector<Matrix>& features) {
    return reconstruction_loss(forward(model, features), features);
}

struct FusionGradient {
    double loss = 0.0;
    std::vector<nn::MlpGradient> parts;  // same order as FusionModel::parts()

    std::vector<std::span<const double>> blocks() const {
        std::vector<std::span<const double>> out;
        for (const auto& g : parts) {
            auto b = g.blocks();
            out.insert(out.end(), b.begin(), b.end());
        }
        return out;
    }
};

inline FusionGradient loss_and_gradient(const FusionModel& model, const std::vector<Matrix>& features) {
    const ForwardPass pass = forward(model, features);
    const int graphs = model.arch.graph_count;
    const int code = model.arch.graph_code_dim();
    FusionGradient out;
    out.loss = reconstruction_loss(pass, features);

    std::vector<nn::MlpGradient> dec_grads;
    Matrix d_expanded(features.front().rows(), model.arch.concat_dim());
    for (int l = 0; l < graphs; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        const Matrix d_out = nn::mse_grad(pass.decoders[ul].output, features[ul]) / graphs;
        dec_grads.push_back(nn::backward(model.graph_decoders[ul], pass.decoders[ul], d_out));
        d_expanded.middleCols(l * code, code) = dec_grads.back().input_grad;
    }
    auto shared_dec_grad = nn::backward(model.shared_decoder, pass.shared_decoder, d_expanded);
    auto shared_enc_grad = nn::backward(model.shared_encoder, pass.shared_encoder, shared_dec_grad.input_grad);
    for (int l = 0; l < graphs; ++l) {
        const auto ul = static_cast<std::size_t>(l);
        out.parts.push_back(nn::backward(model.graph_encoders[ul], pass.encoders[ul],
                                         shared_enc_grad.input_grad.middleCols(l * code, code)));
    }
    out.parts.push_back(std::move(shared_enc_grad));
    out.parts.push_back(std::move(shared_dec_grad));
    for (auto& g : dec_grads) out.parts.push_back(std::move(g));
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    int max_epochs = 500;
    double learning_rate = 0.001;
    double validation_fraction = 0.3;
    int patience = 20;          // <= 0 disables early stopping
    double min_delta = 1e-6;
    std::uint64_t split_seed = 0;
};

struct TrainReport {
    std::vector<double> train_losses;       // loss at the start of each epoch's update
    std::vector<double> validation_losses;  // after each epoch's update; empty without a split
    int stop_epoch = 0;                     // epochs actually run
    int best_epoch = 0;                     // 1-based epoch whose weights were kept
    double best_validation_loss = std::numeric_limits<double>::quiet_NaN();
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    std::string stop_reason;
    std::uint64_t split_seed = 0;
    std::size_t train_size = 0;
    std::size_t validation_size = 0;
    TrainOptions options;

    friend bool operator==(const TrainReport& a, const TrainReport& b) {
        return a.train_losses == b.train_losses && a.validation_losses == b.validation_losses &&
               a.stop_epoch == b.stop_epoch && a.best_epoch == b.best_epoch &&
               a.stop_reason == b.stop_reason && a.train_size == b.train_size &&
               a.validation_size == b.validation_size &&
               a.final_train_loss == b.final_train_loss;
    }
};

/// Training aborted on a non-finite loss; carries the partial report.
class TrainingAborted : public NumericError {
public:
    TrainingAborted(const std::string& what, TrainReport report)
        : NumericError(what), report_(std::move(report)) {}
    const TrainReport& report() const { return report_; }

private:
    TrainReport report_;
};

/// Fisher-Yates with the portable uniform01 draw.
inline std::vector<std::size_t> shuffled_indices(std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = count; i > 1; --i) {
        const auto j = static_cast<std::size_t>(nn::uniform01(rng) * static_cast<double>(i));
        std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
    }
    return idx;
}

/// Full-batch Adam. With a validation split, keeps the weights with the best
/// validation loss and stops after `patience` epochs without an improvement
/// of at least `min_delta`.
inline TrainReport train(FusionModel& model, const FusionDataset& data, const TrainOptions& opt) {
    if (opt.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (!(opt.validation_fraction >= 0.0 && opt.validation_fraction < 1.0))
        throw ConfigError("validation fraction must lie in [0, 1)");
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");

    TrainReport report;
    report.options = opt;
    report.split_seed = opt.split_seed;

    FusionDataset train_set;
    std::optional<FusionDataset> val_set;
    if (opt.validation_fraction > 0.0) {
        if (data.size() < 10)
            throw std::invalid_argument("train: a validation split needs at least 10 samples, got " +
                                        std::to_string(data.size()));
        const auto order = shuffled_indices(data.size(), opt.split_seed);
        auto n_val = static_cast<std::size_t>(std::llround(opt.validation_fraction * static_cast<double>(data.size())));
        n_val = std::clamp<std::size_t>(n_val, 1, data.size() - 1);
        const std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
        const std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
        train_set = data.subset(train_idx);
        val_set = data.subset(val_idx);
    } else {
        train_set = data;
    }
    report.train_size = train_set.size();
    report.validation_size = val_set ? val_set->size() : 0;

    nn::AdamState adam;
    adam.learning_rate = opt.learning_rate;
    FusionModel best = model;
    double best_val = std::numeric_limits<double>::infinity();
    int stalled = 0;
    report.stop_reason = "max_epochs";

    for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
        const auto grad = loss_and_gradient(model, train_set.features);
        if (!std::isfinite(grad.loss)) {
            report.stop_epoch = epoch;
            report.stop_reason = "non_finite_loss";
            throw TrainingAborted("training loss became non-finite at epoch " + std::to_string(epoch), report);
        }
        report.train_losses.push_back(grad.loss);
        const auto params = model.parameter_blocks();
        const auto grads = grad.blocks();
        nn::adam_step(adam, params, grads);
        model.bump_revision();
        report.stop_epoch = epoch;

        if (!val_set) continue;
        const double val = reconstruction_loss(model, val_set->features);
        if (!std::isfinite(val)) {
            report.stop_reason = "non_finite_loss";
            throw TrainingAborted("validation loss became non-finite at epoch " + std::to_string(epoch), report);
        }
        report.validation_losses.push_back(val);
        if (val < best_val - opt.min_delta) {
            best_val = val;
            best = model;
            report.best_epoch = epoch;
            stalled = 0;
        } else if (opt.patience > 0 && ++stalled >= opt.patience) {
            report.stop_reason = "early_stopping";
            break;
        }
    }

    if (val_set) {
        model = std::move(best);
        model.bump_revision();
        report.best_validation_loss = best_val;
    } else {
        report.best_epoch = report.stop_epoch;
    }
    report.final_train_loss = reconstruction_loss(model, train_set.features);
    return report;
}

inline nlohmann::json to_json(const TrainReport& r) {
    return {
        {"train_losses", r.train_losses},
        {"validation_losses", r.validation_losses},
        {"stop_epoch", r.stop_epoch},
        {"best_epoch", r.best_epoch},
        {"best_validation_loss", std::isfinite(r.best_validation_loss) ? nlohmann::json(r.best_validation_loss) : nlohmann::json(nullptr)},
        {"final_train_loss", r.final_train_loss},
        {"stop_reason", r.stop_reason},
        {"split_seed", r.split_seed},
        {"train_size", r.train_size},
        {"validation_size", r.validation_size},
        {"options",
         {{"max_epochs", r.options.max_epochs},
          {"learning_rate", r.options.learning_rate},
          {"validation_fraction", r.options.validation_fraction},
          {"patience", r.options.patience},
          {"min_delta", r.options.min_delta}}},
    };
}

// ---------------------------------------------------------------------------
// Embeddings

struct EmbeddingRow {
    std::string asset;
    Timestamp window_end = 0;
    Vector z;
};

struct EmbeddingFrame {
    std::vector<EmbeddingRow> rows;

    Eigen::Index dim() const { return rows.empty() ? 0 : rows.front().z.size(); }

    /// Rows as a matrix, one embedding per row, in frame order.
    Matrix stacked() const {
        Matrix m(static_cast<Eigen::Index>(rows.size()), dim());
        for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].z.transpose();
        return m;
    }
};

inline EmbeddingFrame extract_embeddings(const FusionModel& model, const FusionDataset& data,
                                         const std::vector<std::string>& assets,
                                         const std::vector<Timestamp>& window_ends) {
    EmbeddingFrame frame;
    if (data.size() == 0) return frame;
    const Matrix z = forward(model, data.features).embeddings();
    for (std::size_t s = 0; s < data.size(); ++s) {
        const auto& key = data.keys[s];
        frame.rows.push_back({assets.at(key.asset_index), window_ends.at(key.date_index),
                              z.row(static_cast<Eigen::Index>(s)).transpose()});
    }
    return frame;
}

/// CSV with header `asset,window_end,z0,...,z{k-1}`.
inline std::string to_csv(const EmbeddingFrame& frame) {
    std::string out = "asset,window_end";
    for (Eigen::Index k = 0; k < frame.dim(); ++k) out += ",z" + std::to_string(k);
    out += '\n';
    for (const auto& r : frame.rows) {
        out += r.asset + "," + std::to_string(r.window_end);
        for (Eigen::Index k = 0; k < r.z.size(); ++k) out += "," + io::format_double(r.z(k));
        out += '\n';
    }
    return out;
}

inline EmbeddingFrame read_embeddings_csv(const std::filesystem::path& path) {
    const auto lines = io::read_lines(path);
    if (lines.empty()) throw DataError("empty embeddings file: " + path.string());
    const auto header = io::split_fields(lines.front());
    if (header.size() < 3 || header[0] != "asset" || header[1] != "window_end")
        throw DataError("embeddings header malformed: " + path.string());
    const auto dim = static_cast<Eigen::Index>(header.size() - 2);
    EmbeddingFrame frame;
    for (std::size_t row = 1; row < lines.size(); ++row) {
        const auto f = io::split_fields(lines[row]);
        EmbeddingRow r;
        if (f.size() != header.size() || !io::parse_int(f[1], r.window_end))
            throw DataError(path.string() + ": malformed row " + std::to_string(row));
        r.asset = std::string(f[0]);
        r.z.resize(dim);
        for (Eigen::Index k = 0; k < dim; ++k)
            if (!io::parse_double(f[static_cast<std::size_t>(k) + 2], r.z(k)))
                throw DataError(path.string() + ": bad value at row " + std::to_string(row));
        frame.rows.push_back(std::move(r));
    }
    return frame;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline nlohmann::json to_json(const FusionModel& m) {
    auto mlps = [](const std::vector<nn::Mlp>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& x : v) a.push_back(nn::to_json(x));
        return a;
    };
    return {
        {"format_version", nn::kCheckpointFormatVersion},
        {"architecture",
         {{"graph_count", m.arch.graph_count},
          {"input_dim", m.arch.input_dim},
          {"graph_encoder_dims", m.arch.graph_encoder_dims},
          {"shared_encoder_dims", m.arch.shared_encoder_dims},
          {"hidden_activation", nn::to_string(m.arch.hidden_activation)},
          {"embedding_activation", nn::to_string(m.arch.embedding_activation)},
          {"output_activation", nn::to_string(m.arch.output_activation)}}},
        {"graph_encoders", mlps(m.graph_encoders)},
        {"shared_encoder", nn::to_json(m.shared_encoder)},
        {"shared_decoder", nn::to_json(m.shared_decoder)},
        {"graph_decoders", mlps(m.graph_decoders)},
    };
}

inline FusionModel model_from_json(const nlohmann::json& j) {
    if (j.value("format_version", 0) != nn::kCheckpointFormatVersion)
        throw DataError("unsupported checkpoint format version");
    FusionModel m;
    const auto& a = j.at("architecture");
    m.arch.graph_count = a.at("graph_count").get<int>();
    m.arch.input_dim = a.at("input_dim").get<int>();
    m.arch.graph_encoder_dims = a.at("graph_encoder_dims").get<std::vector<int>>();
    m.arch.shared_encoder_dims = a.at("shared_encoder_dims").get<std::vector<int>>();
    m.arch.hidden_activation = nn::activation_from_string(a.at("hidden_activation").get<std::string>());
    m.arch.embedding_activation = nn::activation_from_string(a.at("embedding_activation").get<std::string>());
    m.arch.output_activation = nn::activation_from_string(a.at("output_activation").get<std::string>());
    for (const auto& x : j.at("graph_encoders")) m.graph_encoders.push_back(nn::mlp_from_json(x));
    m.shared_encoder = nn::mlp_from_json(j.at("shared_encoder"));
    m.shared_decoder = nn::mlp_from_json(j.at("shared_decoder"));
    for (const auto& x : j.at("graph_decoders")) m.graph_decoders.push_back(nn::mlp_from_json(x));
    if (static_cast<int>(m.graph_encoders.size()) != m.arch.graph_count ||
        static_cast<int>(m.graph_decoders.size()) != m.arch.graph_count)
        throw DataError("checkpoint graph count does not match its parts");
    return m;
}

}  // namespace llfuse::fusion
