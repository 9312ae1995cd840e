// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "llfuse/cli.hpp"
#include "llfuse/diffusion.hpp"
#include "llfuse/fusion_model.hpp"
#include "llfuse/infotheory.hpp"
#include "llfuse/leadlag.hpp"
#include "llfuse/market_data.hpp"
#include "llfuse/pipeline.hpp"
#include "llfuse/postprocess.hpp"
#include "llfuse/synthetic.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <sstream>

using namespace llfuse;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double time_limit_s;  // <= 0: no limit
    std::function<Verdict()> check;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

info::DiscreteSeries random_states(std::size_t len, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> s(0, 3);
    info::DiscreteSeries d;
    d.cardinality = 4;
    for (std::size_t k = 0; k < len; ++k) d.states.push_back(s(rng));
    return d;
}

std::vector<double> gaussian_series(std::size_t len, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    std::vector<double> v(len);
    for (auto& x : v) x = g(rng);
    return v;
}

Verdict mi_oracle() {
    std::mt19937_64 rng(101);
    std::uniform_int_distribution<std::size_t> len(8, 256);
    double worst = 0.0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto n = len(rng);
        const auto x = random_states(n, rng);
        const auto y = random_states(n, rng);
        std::vector<std::vector<long>> counts(4, std::vector<long>(4, 0));
        for (std::size_t k = 0; k < n; ++k) ++counts[static_cast<std::size_t>(x.states[k])][static_cast<std::size_t>(y.states[k])];
        worst = std::max(worst, std::abs(info::mutual_information_bits(x, y) - oracle::mi_bits_table(counts)));
    }
    return {worst <= 1e-12, fmt("max |MI - oracle| = %.3g over 500 pairs", worst)};
}

Verdict self_information() {
    std::mt19937_64 rng(102);
    double worst = 0.0;
    for (std::size_t n = 4; n <= 2048; n += 4) {
        const auto v = gaussian_series(n, rng);
        const auto x = info::discretize_equal_frequency(v, 4);
        worst = std::max(worst, std::abs(info::mutual_information_bits(x, x) - 2.0));
    }
    return {worst <= 1e-12, fmt("max |MI(X,X) - 2| = %.3g for lengths 4..2048", worst)};
}

Verdict null_calibration() {
    constexpr int kSims = 2000;
    constexpr long kN = 1440;
    std::mt19937_64 rng(103);
    info::MiTestConfig c05{4, 4, kN, 0.05, 1}, c01{4, 4, kN, 0.01, 1};
    const double t05 = info::significance_threshold(c05);
    const double t01 = info::significance_threshold(c01);
    int r05 = 0, r01 = 0;
    for (int s = 0; s < kSims; ++s) {
        const auto a = gaussian_series(kN, rng);
        const auto b = gaussian_series(kN, rng);
        const double mi = info::mutual_information_bits(info::discretize_equal_frequency(a, 4),
                                                        info::discretize_equal_frequency(b, 4));
        r05 += info::test_link(mi, t05);
        r01 += info::test_link(mi, t01);
    }
    const double f05 = r05 / static_cast<double>(kSims), f01 = r01 / static_cast<double>(kSims);
    return {f05 >= 0.03 && f05 <= 0.07 && f01 >= 0.005 && f01 <= 0.02,
            fmt("rejection rate %.4f at p=0.05 (want [0.03,0.07]), %.4f at p=0.01 (want [0.005,0.02])", f05, f01)};
}

Verdict gamma_quantile_checks() {
    double worst_exp = 0.0;
    for (double beta : {1.0, 0.25, 1.0 / (1440.0 * std::log(2.0))})
        for (double q : {1e-9, 1e-4, 0.01, 0.1, 0.5, 0.9, 0.99, 0.999, 1.0 - 1e-6, 1.0 - 0.01 / 4761.0}) {
            const double expected = -beta * std::log1p(-q);
            const double got = info::gamma_quantile(q, 1.0, beta);
            worst_exp = std::max(worst_exp, std::abs(got - expected) / std::max(1.0, expected));
        }
    double worst_rt = 0.0;
    int points = 0;
    for (double alpha : {0.5, 1.0, 2.5, 4.5, 12.0})
        for (double beta : {1.0, 1.0 / (1440.0 * std::log(2.0))})
            for (int k = 0; k <= 60; ++k) {
                const double x = alpha * beta * std::pow(10.0, -3.0 + 4.0 * k / 60.0);
                const double p = info::gamma_cdf(x, alpha, beta);
                // Outside this band the CDF is not invertible in double precision.
                if (p < 1e-300 || p > 1.0 - 1e-7) continue;
                worst_rt = std::max(worst_rt, std::abs(info::gamma_quantile(p, alpha, beta) - x) / x);
                ++points;
            }
    return {worst_exp <= 1e-9 && worst_rt <= 1e-8,
            fmt("exponential max err %.3g; round trip max rel err %.3g over %d grid points", worst_exp, worst_rt, points)};
}

Verdict corrected_level_and_sample_size() {
    info::MiTestConfig cfg{4, 4, 1440, 0.01, 69L * 69L};
    const bool level_ok = cfg.corrected_level() == 0.01 / 4761.0;
    std::mt19937_64 rng(104);
    Matrix window(1440, 69);
    std::normal_distribution<double> g;
    for (Eigen::Index i = 0; i < window.size(); ++i) window.data()[i] = g(rng);
    std::vector<std::string> assets;
    for (int j = 0; j < 69; ++j) assets.push_back(synth::asset_name(j));
    bool n_ok = true;
    std::string detail = fmt("corrected level %.6g (0.01/4761 = %.6g)", cfg.corrected_level(), 0.01 / 4761.0);
    double previous = 0.0;
    for (int lag : {0, 1, 2}) {
        const auto graph = leadlag::build_graph(window, assets, {1, lag}, 0, 4, 0.01);
        info::MiTestConfig expect{4, 4, 1440 - lag, 0.01, 4761};
        n_ok = n_ok && graph.sample_size == 1440 - lag && graph.threshold == info::significance_threshold(expect) &&
               graph.threshold > previous;
        previous = graph.threshold;
        detail += fmt("; T=%d: N=%ld threshold=%.6g bits", lag, graph.sample_size, graph.threshold);
    }
    return {level_ok && n_ok, detail};
}

Verdict planted_lag() {
    const synth::UniverseSpec spec;  // 10 assets, 30 days, S00 -> S01 at lag 1, coupling 0.8
    const auto universe = synth::generate(spec, 7);
    oracle::TempDir dir("acc_planted");
    const auto panel = load_prices(synth::write_price_files(universe, dir.path()), 1);

    const RunConfig cfg = parse_run_config(default_config_json());
    const auto stage = build_graphs(cfg, panel);
    const auto windows = stage.window_ends.size();
    std::size_t hits = 0;
    long false_positives = 0;
    for (std::size_t d = 0; d < windows; ++d)
        for (std::size_t s = 0; s < stage.specs.size(); ++s) {
            const auto& g = stage.graphs[d][s];
            if (g.spec.period_minutes == 1 && g.spec.lag == 1) hits += g.directed(0, 1) > 0.0;
            if (g.spec.lag >= 2) false_positives += g.validated_link_count;
        }
    const double rate = hits / static_cast<double>(windows);
    const double fp = false_positives / static_cast<double>(windows);
    return {windows == 30 && rate >= 0.9 && fp <= 0.1,
            fmt("%zu windows; planted link validated in %.1f%% at d1_T1; %.3f false positives per window at lags >= 2",
                windows, 100.0 * rate, fp)};
}

Verdict rwr_invariants() {
    std::mt19937_64 rng(105);
    std::bernoulli_distribution edge(0.3);
    const diffusion::RwrConfig cfg;
    double worst_p = 0.0, worst_v = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + trial % 20;
        Matrix upper = Matrix::Zero(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) upper(i, j) = edge(rng) ? 1.0 : 0.0;
        const Matrix w = upper + upper.transpose();
        const Matrix adj = leadlag::binarize(w);
        std::vector<Matrix> trace;
        const Matrix v = diffusion::rwr_accumulate(adj, cfg, &trace);
        for (const auto& p : trace) worst_p = std::max(worst_p, (p.rowwise().sum().array() - 1.0).abs().maxCoeff());
        worst_v = std::max(worst_v, (v.rowwise().sum().array() - cfg.steps).abs().maxCoeff());
    }
    Matrix ring = Matrix::Zero(4, 4);
    for (int i = 0; i < 4; ++i) ring(i, (i + 1) % 4) = ring((i + 1) % 4, i) = 1.0;
    const Matrix v = diffusion::rwr_accumulate(ring, cfg);
    double worst_ring = 0.0;
    for (int i = 0; i < 4; ++i) {
        const auto row = oracle::rwr_row(ring, i, cfg.restart_keep, cfg.steps);
        for (int j = 0; j < 4; ++j) worst_ring = std::max(worst_ring, std::abs(v(i, j) - row[static_cast<std::size_t>(j)]));
    }
    return {worst_p <= 1e-12 && worst_v <= 1e-9 && worst_ring <= 1e-12,
            fmt("max |p row sum - 1| = %.3g; max |V row sum - K| = %.3g; 4-ring vs oracle %.3g", worst_p, worst_v,
                worst_ring)};
}

Verdict ppmi_checks() {
    bool uniform_zero = true;
    for (int n : {2, 3, 4, 5, 7, 10, 69})
        for (double k : {1.0, 3.0, 5.0}) {
            const Matrix p = diffusion::ppmi(Matrix::Constant(n, n, k / n));
            uniform_zero = uniform_zero && (p.array() == 0.0).all();
        }
    std::mt19937_64 rng(106);
    double worst = 0.0, min_value = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 30;
        const Matrix v = oracle::random_row_stochastic(n, 3.0, rng);
        const Matrix p = diffusion::ppmi(v);
        worst = std::max(worst, (p - oracle::ppmi_probabilistic(v)).cwiseAbs().maxCoeff());
        min_value = std::min(min_value, p.minCoeff());
    }
    return {uniform_zero && worst <= 1e-12 && min_value >= 0.0,
            fmt("uniform V gives exact zeros: %s; max |simplified - probabilistic| = %.3g; min entry %.3g",
                uniform_zero ? "yes" : "no", worst, min_value)};
}

Verdict gradient_check() {
    fusion::FusionArchitecture arch;
    arch.graph_count = 2;
    arch.input_dim = 5;
    arch.graph_encoder_dims = {4, 2};
    arch.shared_encoder_dims = {4, 3};
    auto model = fusion::make_model(arch, 31);
    std::mt19937_64 rng(107);
    std::normal_distribution<double> g(0.0, 0.1);
    for (auto* part : model.parts())
        for (auto& l : part->layers)
            for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = g(rng);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::vector<Matrix> features;
    for (int l = 0; l < 2; ++l) {
        Matrix f(6, 5);
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng) < 0.8 ? 0.0 : u(rng);
        features.push_back(f);
    }
    // Distance of every ReLU preactivation from the kink.
    const auto pass = fusion::forward(model, features);
    double margin = INFINITY;
    auto scan = [&](const nn::Activations& a, const nn::Mlp& m) {
        for (std::size_t k = 0; k < m.layers.size(); ++k)
            if (m.layers[k].activation == nn::Activation::Relu)
                margin = std::min(margin, a.preactivations[k].cwiseAbs().minCoeff());
    };
    for (std::size_t l = 0; l < 2; ++l) scan(pass.encoders[l], model.graph_encoders[l]);
    scan(pass.shared_encoder, model.shared_encoder);
    scan(pass.shared_decoder, model.shared_decoder);
    for (std::size_t l = 0; l < 2; ++l) scan(pass.decoders[l], model.graph_decoders[l]);

    const auto grad = fusion::loss_and_gradient(model, features);
    const auto blocks = grad.blocks();
    auto params = model.parameter_blocks();
    auto loss = [&] { return fusion::reconstruction_loss(model, features); };
    double worst = 0.0;
    std::size_t checked = 0;
    for (std::size_t b = 0; b < params.size(); ++b)
        for (std::size_t i = 0; i < params[b].size(); ++i) {
            const double fd = oracle::central_difference(loss, &params[b][i]);
            const double an = blocks[b][i];
            worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
            ++checked;
        }
    return {margin > 1e-5 && worst < 1e-4,
            fmt("max relative error %.3g over %zu parameters (min ReLU margin %.3g)", worst, checked, margin)};
}

Verdict overfit() {
    auto model = fusion::make_model(fusion::FusionArchitecture::defaults(2, 5), 71);
    std::mt19937_64 rng(108);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    fusion::FusionDataset data;
    for (int l = 0; l < 2; ++l) {
        Matrix f(5, 5);
        for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = u(rng) < 0.8 ? 0.0 : u(rng);
        data.features.push_back(f);
    }
    for (std::size_t i = 0; i < 5; ++i) data.keys.push_back({i, 0});
    fusion::TrainOptions opt;
    opt.max_epochs = 2000;
    opt.validation_fraction = 0.0;
    opt.patience = 0;
    const auto report = fusion::train(model, data, opt);
    return {report.final_train_loss < 1e-3,
            fmt("train MSE %.3g after %d epochs (start %.3g)", report.final_train_loss, report.stop_epoch,
                report.train_losses.front())};
}

Verdict pca_checks() {
    Matrix q(3, 3);
    q << 2, 3, 6, 3, -6, 2, 6, 2, -3;
    q /= 7.0;
    const Vector lambda = (Vector(3) << 5.0, 2.0, 0.5).finished();
    Matrix u(4, 3);
    u << 1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, 1;
    u /= 2.0;
    Matrix samples = std::sqrt(3.0) * u * lambda.cwiseSqrt().asDiagonal() * q.transpose();
    samples.rowwise() += Eigen::RowVector3d(1.0, -2.0, 0.5);
    const auto r = post::pca(samples, 3);
    double eig_err = 0.0;
    for (int k = 0; k < 3; ++k) {
        Vector expected = q.col(k);
        Eigen::Index arg = 0;
        expected.cwiseAbs().maxCoeff(&arg);
        if (expected(arg) < 0) expected = -expected;
        eig_err = std::max(eig_err, (r.components.row(k).transpose() - expected).cwiseAbs().maxCoeff());
        eig_err = std::max(eig_err, std::abs(r.explained_variance(k) - lambda(k)));
    }
    std::mt19937_64 rng(109);
    std::normal_distribution<double> g;
    double ortho = (r.components * r.components.transpose() - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff();
    bool ordered = true;
    for (int trial = 0; trial < 20; ++trial) {
        Matrix x(50, 15);
        for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = g(rng) * (1 + i % 15);
        const auto p = post::pca(x, 5);
        ortho = std::max(ortho, (p.components * p.components.transpose() - Matrix::Identity(5, 5)).cwiseAbs().maxCoeff());
        for (Eigen::Index k = 1; k < p.explained_variance.size(); ++k)
            ordered = ordered && p.explained_variance(k) <= p.explained_variance(k - 1);
    }
    for (Eigen::Index k = 1; k < 3; ++k) ordered = ordered && r.explained_variance(k) <= r.explained_variance(k - 1);
    return {ortho <= 1e-10 && eig_err <= 1e-9 && ordered,
            fmt("orthonormality err %.3g; analytic eigenpair err %.3g; variances non-increasing: %s", ortho, eig_err,
                ordered ? "yes" : "no")};
}

Verdict cosine_checks() {
    std::mt19937_64 rng(110);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> scale(1e-3, 1e3);
    double worst = 0.0;
    fusion::EmbeddingFrame frame;
    for (int i = 0; i < 100; ++i) {
        Vector z(15), w(15);
        for (Eigen::Index k = 0; k < 15; ++k) {
            z(k) = g(rng);
            w(k) = g(rng);
        }
        worst = std::max(worst, std::abs(*post::cosine_similarity(z, z) - 1.0));
        worst = std::max(worst, std::abs(*post::cosine_similarity(z, -z) + 1.0));
        const double base = *post::cosine_similarity(z, w);
        worst = std::max(worst, std::abs(*post::cosine_similarity(scale(rng) * z, scale(rng) * w) - base));
        frame.rows.push_back({"A" + std::to_string(i), 0, z});
    }
    const auto m = post::similarity_matrix(frame, 0);
    bool symmetric = true;
    for (Eigen::Index i = 0; i < m.values.rows(); ++i)
        for (Eigen::Index j = 0; j < m.values.cols(); ++j)
            symmetric = symmetric && std::memcmp(&m.values(i, j), &m.values(j, i), sizeof(double)) == 0;
    return {worst <= 1e-12 && symmetric,
            fmt("max identity / scale-invariance error %.3g over 100 vectors; matrix bitwise symmetric: %s", worst,
                symmetric ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// End-to-end runs through the command-line entry point.

struct EndToEnd {
    oracle::TempDir dir{"acc_e2e"};
    int codes[3] = {-1, -1, -1};
    double run_seconds = 0.0;
    std::string errors;

    fs::path config() const { return dir.path() / "config.json"; }
    fs::path run(int k) const { return dir.path() / ("run" + std::to_string(k)); }

    int invoke(std::vector<std::string> args) {
        args.insert(args.begin(), "llfuse");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
        if (code != 0) errors += err.str();
        return code;
    }

    EndToEnd() {
        io::write_text(config(), R"({"data": {"prices_dir": "prices"}})");
        codes[0] = invoke({"synth", "--config", config().string(), "-q"});
        const auto t0 = std::chrono::steady_clock::now();
        codes[1] = invoke({"run-all", "--config", config().string(), "--out", run(1).string(), "-q"});
        run_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        codes[2] = invoke({"run-all", "--config", config().string(), "--out", run(2).string(), "-q"});
    }
};

EndToEnd& end_to_end() {
    static EndToEnd e;
    return e;
}

Verdict determinism() {
    auto& e = end_to_end();
    if (e.codes[0] || e.codes[1] || e.codes[2]) return {false, "run-all failed: " + e.errors};
    std::vector<fs::path> files{"embeddings.csv", "pca.csv"};
    for (const auto& entry : fs::recursive_directory_iterator(e.run(1) / "graphs"))
        if (entry.path().extension() == ".csv") files.push_back(fs::relative(entry.path(), e.run(1)));
    std::size_t differing = 0;
    for (const auto& f : files)
        if (!fs::exists(e.run(2) / f) || io::read_text(e.run(1) / f) != io::read_text(e.run(2) / f)) ++differing;
    return {differing == 0 && files.size() == 2 + 30 * 6,
            fmt("%zu files compared, %zu differ", files.size(), differing)};
}

Verdict end_to_end_run() {
    auto& e = end_to_end();
    if (e.codes[0] || e.codes[1]) return {false, "run-all failed: " + e.errors};
    const auto out = e.run(1);
    std::vector<std::string> missing;
    for (const char* f : {"panel.csv", "graphs/index.json", "embeddings.csv", "model.json", "pca.csv", "report.json"})
        if (!fs::exists(out / f) || fs::file_size(out / f) == 0) missing.emplace_back(f);
    std::size_t graph_csv = 0, graph_json = 0, similarity = 0;
    for (const auto& entry : fs::recursive_directory_iterator(out / "graphs")) {
        graph_csv += entry.path().extension() == ".csv";
        graph_json += entry.path().extension() == ".json" && entry.path().filename() != "index.json";
    }
    for (const auto& entry : fs::directory_iterator(out / "similarity")) similarity += entry.is_regular_file();
    const auto report = nlohmann::json::parse(io::read_text(out / "report.json"));
    bool tables_ok = true;
    for (const char* period : {"d1", "d5"}) {
        const auto& t = report["link_counts"]["tables"][period];
        tables_ok = tables_ok && t.is_object() && t["lag"] == nlohmann::json::array({0, 1, 2});
        for (const char* k : {"min", "quantile_25", "median", "quantile_75", "max"})
            tables_ok = tables_ok && t.contains(k) && t[k].size() == 3;
    }
    const bool counts_ok = graph_csv == 180 && graph_json == 180 && similarity == 45 &&
                           report["samples"].get<int>() == 300 && report["graphs"]["graph_count"].get<int>() == 180;
    std::ostringstream tables;
    for (const char* period : {"d1", "d5"}) tables << " " << period << " median " << report["link_counts"]["tables"][period]["median"].dump();
    return {missing.empty() && counts_ok && tables_ok && e.run_seconds < 600.0,
            fmt("run-all %.1f s; %zu graphs; %zu similarity series; %d embeddings; missing files %zu; link-count "
                "tables %s;",
                e.run_seconds, graph_csv, similarity, report["samples"].get<int>(), missing.size(),
                tables_ok ? "ok" : "bad") +
                tables.str()};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "MI oracle equivalence", 5.0, mi_oracle},
        {2, "self-information", 0.0, self_information},
        {3, "null calibration", 120.0, null_calibration},
        {4, "gamma quantile", 0.0, gamma_quantile_checks},
        {5, "corrected level and sample size", 0.0, corrected_level_and_sample_size},
        {6, "planted-lag detection", 180.0, planted_lag},
        {7, "RWR invariants", 0.0, rwr_invariants},
        {8, "PPMI", 0.0, ppmi_checks},
        {9, "gradient check", 0.0, gradient_check},
        {10, "overfit capacity", 0.0, overfit},
        {11, "determinism", 0.0, determinism},
        {12, "PCA", 0.0, pca_checks},
        {13, "cosine similarity", 0.0, cosine_checks},
        {14, "end-to-end run", 0.0, end_to_end_run},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit_s > 0.0 && seconds >= c.time_limit_s) {
            v.pass = false;
            v.detail += fmt(" [over the %.0f s limit]", c.time_limit_s);
        }
        failures += !v.pass;
        std::printf("%s  [%2d] %-32s %7.2fs  %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), seconds,
                    v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
