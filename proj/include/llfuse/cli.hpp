#pragma once

// Command-line front end. Each subcommand is one pipeline stage reading and
// writing a run directory:
//
//   panel.csv                     aligned price panel (ingest)
//   returns/d<period>.csv         optional return dumps (ingest)
//   graphs/<spec>/<window_end>.csv + .json, graphs/index.json   (graphs)
//   features/<spec>/<window_end>_{rwr,ppmi}.csv                  (fuse, optional)
//   embeddings.csv, model.json    (fuse)
//   similarity/<a>__<b>.csv, pca.csv   (postprocess)
//   report.json                   merged by every stage

#include "llfuse/common.hpp"
#include "llfuse/config.hpp"
#include "llfuse/io.hpp"
#include "llfuse/market_data.hpp"
#include "llfuse/pipeline.hpp"
#include "llfuse/postprocess.hpp"
#include "llfuse/synthetic.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace llfuse::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,
    kInvalidConfig = 3,
    kMissingInput = 4,
    kDataError = 5,
    kNumericError = 6,
    kInternalError = 7,
};

struct Invocation {
    std::string subcommand;
    fs::path config_path;
    fs::path out_dir;
    std::vector<std::string> overrides;
    int threads = 0;  // 0: keep the config value
    std::optional<std::uint64_t> seed_data, seed_split, seed_init;
    int verbosity = 1;  // 0 quiet, 1 normal, 2 verbose
};

class Context {
public:
    Context(const Invocation& inv, std::ostream& log) : inv_(inv), log_(log) {
        effective_ = load_config_json(inv.config_path);
        for (const auto& o : inv.overrides) apply_override(effective_, o);
        if (inv.threads > 0) effective_["runtime"]["threads"] = inv.threads;
        if (inv.seed_data) effective_["seeds"]["data"] = *inv.seed_data;
        if (inv.seed_split) effective_["seeds"]["split"] = *inv.seed_split;
        if (inv.seed_init) effective_["seeds"]["init"] = *inv.seed_init;
        config_ = parse_run_config(effective_);
        if (config_.prices_dir.is_relative())
            config_.prices_dir = fs::absolute(inv.config_path).parent_path() / config_.prices_dir;
        out_ = inv.out_dir;
        const auto report_path = out_ / "report.json";
        if (fs::exists(report_path)) {
            try {
                report_ = nlohmann::json::parse(io::read_text(report_path));
            } catch (const nlohmann::json::exception&) {
                report_ = nlohmann::json::object();
            }
        }
        report_["schema_version"] = kConfigSchemaVersion;
        report_["config"] = effective_;
        report_["seeds"] = {{"data", config_.seed_data}, {"split", config_.seed_split}, {"init", config_.seed_init}};
    }

    const RunConfig& config() const { return config_; }
    const fs::path& out() const { return out_; }
    nlohmann::json& report() { return report_; }

    void info(const std::string& msg) const {
        if (inv_.verbosity >= 1) log_ << "[llfuse] " << msg << "\n";
    }
    void debug(const std::string& msg) const {
        if (inv_.verbosity >= 2) log_ << "[llfuse] " << msg << "\n";
    }
    void warn(const std::string& msg) const {
        if (inv_.verbosity >= 1) log_ << "[llfuse] warning: " << msg << "\n";
    }

    /// Writes a file under the run directory and records it as an output.
    void emit(const fs::path& relative, const std::string& text) {
        io::write_text(out_ / relative, text);
        outputs_.insert(relative.generic_string());
    }

    /// Drops recorded outputs under a directory that is being regenerated.
    void forget_outputs_under(const std::string& prefix) {
        std::erase_if(outputs_, [&](const std::string& p) { return p.starts_with(prefix); });
        auto& list = report_["outputs"];
        if (!list.is_array()) return;
        nlohmann::json kept = nlohmann::json::array();
        for (const auto& p : list)
            if (!p.get<std::string>().starts_with(prefix)) kept.push_back(p);
        list = kept;
    }

    void flush_report() {
        std::set<std::string> all(outputs_);
        if (report_.contains("outputs") && report_["outputs"].is_array())
            for (const auto& p : report_["outputs"]) all.insert(p.get<std::string>());
        all.insert("report.json");
        for (const auto& p : all)
            if (p != "report.json" && (!fs::exists(out_ / p) || fs::file_size(out_ / p) == 0))
                throw DataError("declared output missing or empty: " + p);
        report_["outputs"] = std::vector<std::string>(all.begin(), all.end());
        io::write_text(out_ / "report.json", report_.dump(2) + "\n");
    }

private:
    Invocation inv_;
    std::ostream& log_;
    nlohmann::json effective_;
    RunConfig config_;
    fs::path out_;
    nlohmann::json report_ = nlohmann::json::object();
    std::set<std::string> outputs_;
};

inline std::vector<fs::path> price_files(const RunConfig& cfg) {
    std::vector<fs::path> files;
    if (!cfg.files.empty()) {
        for (const auto& f : cfg.files) files.push_back(f.is_relative() ? cfg.prices_dir / f : f);
        return files;
    }
    if (!fs::is_directory(cfg.prices_dir))
        throw MissingInputError("prices directory not found: " + cfg.prices_dir.string());
    for (const auto& e : fs::directory_iterator(cfg.prices_dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw MissingInputError("no .csv price files in " + cfg.prices_dir.string());
    return files;
}

inline PricePanel load_panel_from_sources(const RunConfig& cfg) {
    const Eigen::Index min_rows = cfg.window_minutes / cfg.base_period_minutes + 1;
    return load_prices(price_files(cfg), cfg.base_period_minutes, min_rows);
}

// ---------------------------------------------------------------------------
// Stages

inline void stage_synth(Context& ctx) {
    const auto& cfg = ctx.config();
    const auto universe = synth::generate(cfg.synth, cfg.seed_data);
    const auto paths = synth::write_price_files(universe, cfg.prices_dir);
    nlohmann::json couplings = nlohmann::json::array();
    for (const auto& c : cfg.synth.couplings)
        couplings.push_back({{"leader", synth::asset_name(c.leader)},
                             {"follower", synth::asset_name(c.follower)},
                             {"lag", c.lag},
                             {"coupling", c.coupling},
                             {"noise", c.noise}});
    io::write_text(cfg.prices_dir / "synth.json",
                   nlohmann::json{{"seed", cfg.seed_data},
                                  {"assets", universe.assets},
                                  {"days", cfg.synth.days},
                                  {"base_period_minutes", cfg.synth.base_period_minutes},
                                  {"couplings", couplings}}
                           .dump(2) + "\n");
    ctx.info("wrote " + std::to_string(paths.size()) + " synthetic price files to " + cfg.prices_dir.string());
}

inline PricePanel stage_ingest(Context& ctx) {
    const auto& cfg = ctx.config();
    auto panel = load_panel_from_sources(cfg);
    ctx.emit("panel.csv", to_csv(panel));
    ctx.forget_outputs_under("returns/");
    if (cfg.dump_returns) {
        for (const auto& [period, r] : returns_by_period(cfg, panel))
            ctx.emit("returns/d" + std::to_string(period) + ".csv", to_csv(r));
    }
    ctx.report()["ingest"] = {{"assets", panel.assets},
                              {"rows", panel.rows()},
                              {"first_timestamp", panel.timestamps.front()},
                              {"last_timestamp", panel.timestamps.back()},
                              {"base_period_minutes", panel.base_period_minutes}};
    ctx.info("ingested " + std::to_string(panel.asset_count()) + " assets x " + std::to_string(panel.rows()) + " rows");
    return panel;
}

inline GraphStage stage_graphs(Context& ctx) {
    const auto& cfg = ctx.config();
    const auto cache = ctx.out() / "panel.csv";
    const PricePanel panel = fs::exists(cache) ? read_panel_csv(cache, cfg.base_period_minutes)
                                               : load_panel_from_sources(cfg);
    auto stage = build_graphs(cfg, panel, [&](const std::string& m) { ctx.warn(m); });

    fs::remove_all(ctx.out() / "graphs");
    ctx.forget_outputs_under("graphs/");
    for (std::size_t d = 0; d < stage.window_ends.size(); ++d) {
        for (std::size_t s = 0; s < stage.specs.size(); ++s) {
            const auto& g = stage.graphs[d][s];
            const fs::path base = fs::path("graphs") / g.spec.label() / std::to_string(g.window_end);
            ctx.emit(base.string() + ".csv", leadlag::edge_list_csv(g));
            ctx.emit(base.string() + ".json", leadlag::sidecar_json(g).dump(2) + "\n");
        }
    }
    nlohmann::json specs = nlohmann::json::array();
    for (const auto& s : stage.specs) specs.push_back(to_json(s));
    ctx.emit("graphs/index.json", nlohmann::json{{"assets", stage.assets},
                                                 {"specs", specs},
                                                 {"window_ends", stage.window_ends}}
                                          .dump(2) + "\n");
    ctx.report()["skips"] = skips_json(stage);
    ctx.report()["constant_columns"] = constant_columns_json(stage);
    ctx.report()["link_counts"] = link_count_summary(stage);
    ctx.report()["graphs"] = {{"usable_dates", stage.window_ends.size()},
                              {"specs", stage.specs.size()},
                              {"graph_count", stage.graph_count()}};
    ctx.info("built " + std::to_string(stage.graph_count()) + " graphs over " +
             std::to_string(stage.window_ends.size()) + " dates (" + std::to_string(stage.skips.size()) + " skips)");
    return stage;
}

inline GraphStage read_graph_stage(const fs::path& out) {
    const auto index_path = out / "graphs" / "index.json";
    if (!fs::exists(index_path)) throw MissingInputError("graph index not found: " + index_path.string() +
                                                         " (run the graphs stage first)");
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(io::read_text(index_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("graph index unreadable: " + std::string(e.what()));
    }
    GraphStage stage;
    stage.assets = index.at("assets").get<std::vector<std::string>>();
    for (const auto& s : index.at("specs")) stage.specs.push_back({s.at("period_minutes").get<int>(), s.at("lag").get<int>()});
    stage.window_ends = index.at("window_ends").get<std::vector<Timestamp>>();
    for (Timestamp t : stage.window_ends) {
        std::vector<LeadLagGraph> row;
        for (const auto& s : stage.specs) {
            auto g = leadlag::read_graph(out / "graphs" / s.label() / (std::to_string(t) + ".csv"));
            if (g.assets != stage.assets) throw DataError("graph asset list differs from index");
            row.push_back(std::move(g));
        }
        stage.graphs.push_back(std::move(row));
    }
    return stage;
}

inline fusion::EmbeddingFrame stage_fuse(Context& ctx) {
    const auto& cfg = ctx.config();
    const auto stage = read_graph_stage(ctx.out());
    ctx.forget_outputs_under("features/");
    if (cfg.dump_features) {
        const auto features = graph_features(stage, cfg.rwr, cfg.threads);
        for (std::size_t d = 0; d < stage.window_ends.size(); ++d)
            for (std::size_t s = 0; s < stage.specs.size(); ++s) {
                const auto base = "features/" + stage.specs[s].label() + "/" + std::to_string(stage.window_ends[d]);
                ctx.emit(base + "_rwr.csv", io::matrix_to_csv(features[d][s].rwr));
                ctx.emit(base + "_ppmi.csv", io::matrix_to_csv(features[d][s].ppmi));
            }
    }
    auto outcome = fuse(cfg, stage, cfg.threads);
    ctx.emit("embeddings.csv", fusion::to_csv(outcome.frame));
    ctx.emit("model.json", fusion::to_json(outcome.model).dump() + "\n");
    ctx.report()["training"] = fusion::to_json(outcome.report);
    ctx.report()["samples"] = outcome.frame.rows.size();
    ctx.info("trained on " + std::to_string(outcome.report.train_size) + " samples, stopped at epoch " +
             std::to_string(outcome.report.stop_epoch) + " (" + outcome.report.stop_reason + ")");
    return std::move(outcome.frame);
}

inline std::string pair_file_name(const std::string& a, const std::string& b) { return a + "__" + b + ".csv"; }

inline void stage_postprocess(Context& ctx) {
    const auto& cfg = ctx.config();
    const auto path = ctx.out() / "embeddings.csv";
    if (!fs::exists(path)) throw MissingInputError("embeddings not found: " + path.string() + " (run the fuse stage first)");
    const auto frame = fusion::read_embeddings_csv(path);

    std::vector<std::string> assets;
    for (const auto& r : frame.rows)
        if (std::find(assets.begin(), assets.end(), r.asset) == assets.end()) assets.push_back(r.asset);
    auto pairs = cfg.similarity_pairs;
    for (const auto& [a, b] : pairs)
        for (const auto& name : {a, b})
            if (std::find(assets.begin(), assets.end(), name) == assets.end())
                throw ConfigError("postprocess.similarity_pairs names unknown asset " + name);
    if (pairs.empty())
        for (std::size_t i = 0; i < assets.size(); ++i)
            for (std::size_t j = i + 1; j < assets.size(); ++j) pairs.emplace_back(assets[i], assets[j]);

    fs::remove_all(ctx.out() / "similarity");
    ctx.forget_outputs_under("similarity/");
    std::size_t missing = 0;
    for (const auto& [a, b] : pairs) {
        const auto series = post::similarity_series(frame, a, b);
        for (const auto& p : series.points) missing += p.value ? 0 : 1;
        ctx.emit("similarity/" + pair_file_name(a, b), post::to_csv(series));
    }

    const auto pca = post::pca_project(frame, cfg.pca_components);
    for (const auto& w : pca.warnings) ctx.warn(w);
    ctx.emit("pca.csv", post::to_csv(frame, pca));
    std::vector<std::vector<double>> components;
    for (Eigen::Index k = 0; k < pca.components.rows(); ++k) {
        const Vector row = pca.components.row(k).transpose();
        components.emplace_back(row.data(), row.data() + row.size());
    }
    ctx.report()["pca"] = {{"explained_variance", std::vector<double>(pca.explained_variance.data(),
                                                                       pca.explained_variance.data() + pca.explained_variance.size())},
                           {"total_variance", pca.total_variance},
                           {"components", components},
                           {"warnings", pca.warnings}};
    ctx.report()["similarity"] = {{"pairs", pairs.size()}, {"missing_values", missing}};
    ctx.info("wrote " + std::to_string(pairs.size()) + " similarity series and a " +
             std::to_string(pca.coordinates.cols()) + "-component PCA projection");
}

// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Lead-lag graph inference and deep fusion of asset embeddings", "llfuse"};
    app.require_subcommand(1);
    Invocation inv;

    const std::vector<std::pair<std::string, std::string>> commands{
        {"ingest", "Align price files into the panel cache"},
        {"graphs", "Build lead-lag graphs for every window end and spec"},
        {"fuse", "Train the fusion autoencoder and export embeddings"},
        {"postprocess", "Similarity series and PCA projection of embeddings"},
        {"run-all", "ingest, graphs, fuse and postprocess in one go"},
        {"synth", "Generate a synthetic universe with planted lead-lag couplings"},
    };
    std::string out_dir;
    bool quiet = false;
    bool verbose = false;
    std::uint64_t seed_data = 0, seed_split = 0, seed_init = 0;
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", inv.config_path, "Config file (JSON)")->required();
        sub->add_option("--out", out_dir, "Run directory (default: $LEADLAG_FUSE_OUT or ./llfuse_out)");
        sub->add_option("--set", inv.overrides, "Override a config key: key=value (repeatable)");
        sub->add_option("--threads", inv.threads, "Worker threads for graph construction")->check(CLI::PositiveNumber);
        sub->add_option("--seed-data", seed_data, "Seed for synthetic data");
        sub->add_option("--seed-split", seed_split, "Seed for the train/validation split");
        sub->add_option("--seed-init", seed_init, "Seed for parameter initialization");
        sub->add_flag("--quiet,-q", quiet, "Only report errors");
        sub->add_flag("--verbose,-v", verbose, "Extra diagnostics");
        sub->callback([&inv, name = name] { inv.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "llfuse: " << e.what() << "\n" << app.help();
        return kUsage;
    }

    auto* sub = app.get_subcommands().front();
    if (sub->count("--seed-data")) inv.seed_data = seed_data;
    if (sub->count("--seed-split")) inv.seed_split = seed_split;
    if (sub->count("--seed-init")) inv.seed_init = seed_init;
    inv.verbosity = quiet ? 0 : (verbose ? 2 : 1);
    if (!out_dir.empty()) inv.out_dir = out_dir;
    else if (const char* env = std::getenv("LEADLAG_FUSE_OUT"); env && *env) inv.out_dir = env;
    else inv.out_dir = "llfuse_out";

    try {
        Context ctx(inv, err);
        const auto& cmd = inv.subcommand;
        if (cmd == "synth") {
            stage_synth(ctx);
            return kOk;
        }
        fs::create_directories(ctx.out());
        if (cmd == "ingest" || cmd == "run-all") stage_ingest(ctx);
        if (cmd == "graphs" || cmd == "run-all") stage_graphs(ctx);
        if (cmd == "fuse" || cmd == "run-all") stage_fuse(ctx);
        if (cmd == "postprocess" || cmd == "run-all") stage_postprocess(ctx);
        ctx.flush_report();
        return kOk;
    } catch (const ConfigError& e) {
        err << "llfuse: invalid config: " << e.what() << "\n";
        return kInvalidConfig;
    } catch (const MissingInputError& e) {
        err << "llfuse: missing input: " << e.what() << "\n";
        return kMissingInput;
    } catch (const DataError& e) {
        err << "llfuse: data error: " << e.what() << "\n";
        return kDataError;
    } catch (const NumericError& e) {
        err << "llfuse: numeric failure: " << e.what() << "\n";
        return kNumericError;
    } catch (const std::exception& e) {
        err << "llfuse: error: " << e.what() << "\n";
        return kInternalError;
    }
}

}  // namespace llfuse::cli
