#pragma once

// Run configuration: a JSON key tree with a schema version. Every key has a
// default; files and `--set key=value` overrides may only touch known keys.
// The one open map is `window.rows_override`, keyed by sampling period.

#include "llfuse/common.hpp"
#include "llfuse/diffusion.hpp"
#include "llfuse/fusion_model.hpp"
#include "llfuse/leadlag.hpp"
#include "llfuse/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace llfuse {

inline constexpr int kConfigSchemaVersion = 1;

using json = nlohmann::json;

inline json default_config_json() {
    json specs = json::array();
    for (int d : {1, 5})
        for (int t : {0, 1, 2}) specs.push_back({{"period_minutes", d}, {"lag", t}});
    return {
        {"schema_version", kConfigSchemaVersion},
        {"data", {{"prices_dir", "prices"}, {"base_period_minutes", 1}, {"files", json::array()}}},
        {"specs", specs},
        {"window", {{"minutes", 1440}, {"rows_override", json::object()}}},
        {"dates", {{"mode", "daily"}, {"day_offset_minutes", 0}, {"window_ends", json::array()}}},
        {"test", {{"states", 4}, {"p_value", 0.01}}},
        {"rwr", {{"alpha", 0.98}, {"steps", 3}}},
        {"model",
         {{"graph_encoder_dims", {25, 10}},
          {"shared_encoder_dims", {30, 15}},
          {"hidden_activation", "relu"},
          {"embedding_activation", "relu"},
          {"output_activation", "identity"},
          {"max_epochs", 500},
          {"learning_rate", 0.001},
          {"validation_fraction", 0.3},
          {"patience", 20},
          {"min_delta", 1e-6}}},
        {"seeds", {{"data", 7}, {"split", 11}, {"init", 13}}},
        {"synth",
         {{"assets", 10},
          {"days", 30},
          {"base_period_minutes", 1},
          {"start_ms", 1'609'459'200'000LL},
          {"volatility", 1e-3},
          {"initial_price", 100.0},
          {"couplings", json::array({{{"leader", 0}, {"follower", 1}, {"lag", 1}, {"coupling", 0.8}, {"noise", 0.5}}})}}},
        {"postprocess", {{"pca_components", 2}, {"similarity_pairs", json::array()}}},
        {"output", {{"dump_returns", false}, {"dump_features", false}}},
        {"runtime", {{"threads", 1}}},
    };
}

namespace detail {

inline bool is_open_map(const std::string& path) { return path == "window.rows_override"; }

/// Rejects keys absent from the schema (defaults), recursing into objects.
inline void check_known_keys(const json& value, const json& schema, const std::string& path) {
    if (!value.is_object() || !schema.is_object() || is_open_map(path)) return;
    for (const auto& [key, child] : value.items()) {
        const std::string child_path = path.empty() ? key : path + "." + key;
        if (!schema.contains(key)) throw ConfigError("unknown config key: " + child_path);
        check_known_keys(child, schema.at(key), child_path);
    }
}

inline void merge_into(json& base, const json& patch) {
    for (const auto& [key, value] : patch.items()) {
        if (value.is_object() && base.contains(key) && base[key].is_object())
            merge_into(base[key], value);
        else
            base[key] = value;
    }
}

}  // namespace detail

/// Defaults overlaid with a config file's contents.
inline json load_config_json(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw MissingInputError("config file not found: " + path.string());
    json file;
    try {
        file = json::parse(io::read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config root must be an object");
    if (file.contains("schema_version") && file["schema_version"] != kConfigSchemaVersion)
        throw ConfigError("unsupported config schema_version " + file["schema_version"].dump());
    const json defaults = default_config_json();
    detail::check_known_keys(file, defaults, "");
    json merged = defaults;
    detail::merge_into(merged, file);
    return merged;
}

/// Applies `dotted.key=value`; the value is parsed as JSON, falling back to a string.
inline void apply_override(json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }

    const json schema = default_config_json();
    json* node = &config;
    const json* schema_node = &schema;
    std::string path;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        const bool open = detail::is_open_map(path);
        if (!open && (schema_node == nullptr || !schema_node->is_object() || !schema_node->contains(part)))
            throw ConfigError("unknown config key: " + key);
        path = path.empty() ? part : path + "." + part;
        schema_node = open ? nullptr : &schema_node->at(part);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

struct RunConfig {
    std::filesystem::path prices_dir = "prices";
    std::vector<std::filesystem::path> files;
    int base_period_minutes = 1;
    std::vector<LagSpec> specs;
    int window_minutes = 1440;
    std::map<int, int> rows_override;
    std::string date_mode = "daily";
    int day_offset_minutes = 0;
    std::vector<Timestamp> window_ends;
    int states = 4;
    double p_value = 0.01;
    diffusion::RwrConfig rwr;
    fusion::FusionArchitecture arch;  // graph_count and input_dim filled at run time
    fusion::TrainOptions train;
    std::uint64_t seed_data = 7;
    std::uint64_t seed_split = 11;
    std::uint64_t seed_init = 13;
    synth::UniverseSpec synth;
    int pca_components = 2;
    std::vector<std::pair<std::string, std::string>> similarity_pairs;
    bool dump_returns = false;
    bool dump_features = false;
    int threads = 1;

    /// Return rows in one window at sampling period d.
    int window_rows(int period_minutes) const {
        if (auto it = rows_override.find(period_minutes); it != rows_override.end()) return it->second;
        return window_minutes / period_minutes;
    }

    void validate() const {
        if (base_period_minutes < 1) throw ConfigError("data.base_period_minutes must be positive");
        if (specs.empty()) throw ConfigError("specs must not be empty");
        std::set<LagSpec> seen;
        for (const auto& s : specs) {
            if (s.period_minutes < 1 || s.period_minutes % base_period_minutes != 0)
                throw ConfigError("spec " + s.label() + ": period must be a positive multiple of the base period");
            if (s.lag < 0) throw ConfigError("spec " + s.label() + ": lag must be nonnegative");
            if (!seen.insert(s).second) throw ConfigError("duplicate spec " + s.label());
            if (window_rows(s.period_minutes) - s.lag < states)
                throw ConfigError("spec " + s.label() + ": window of " +
                                  std::to_string(window_rows(s.period_minutes)) +
                                  " rows leaves fewer shifted rows than states");
        }
        if (window_minutes < 1) throw ConfigError("window.minutes must be positive");
        if (date_mode != "daily" && date_mode != "list")
            throw ConfigError("dates.mode must be \"daily\" or \"list\"");
        if (date_mode == "list") {
            if (window_ends.empty()) throw ConfigError("dates.window_ends must be non-empty in list mode");
            for (std::size_t i = 1; i < window_ends.size(); ++i)
                if (window_ends[i] <= window_ends[i - 1])
                    throw ConfigError("dates.window_ends must be strictly increasing");
        }
        if (states < 2) throw ConfigError("test.states must be >= 2");
        if (!(p_value > 0.0 && p_value < 1.0)) throw ConfigError("test.p_value must lie in (0,1)");
        rwr.validate();
        if (pca_components < 1) throw ConfigError("postprocess.pca_components must be >= 1");
        if (threads < 1) throw ConfigError("runtime.threads must be >= 1");
    }
};

inline json to_json(const LagSpec& s) { return {{"period_minutes", s.period_minutes}, {"lag", s.lag}}; }

/// Typed view of a merged config tree. Throws ConfigError on bad values.
inline RunConfig parse_run_config(const json& j) {
    RunConfig c;
    try {
        const auto& data = j.at("data");
        c.prices_dir = data.at("prices_dir").get<std::string>();
        c.base_period_minutes = data.at("base_period_minutes").get<int>();
        for (const auto& f : data.at("files")) c.files.emplace_back(f.get<std::string>());
        for (const auto& s : j.at("specs"))
            c.specs.push_back({s.at("period_minutes").get<int>(), s.at("lag").get<int>()});
        c.window_minutes = j.at("window").at("minutes").get<int>();
        for (const auto& [k, v] : j.at("window").at("rows_override").items()) {
            std::int64_t period = 0;
            if (!io::parse_int(k, period)) throw ConfigError("window.rows_override keys must be periods in minutes");
            c.rows_override[static_cast<int>(period)] = v.get<int>();
        }
        c.date_mode = j.at("dates").at("mode").get<std::string>();
        c.day_offset_minutes = j.at("dates").at("day_offset_minutes").get<int>();
        c.window_ends = j.at("dates").at("window_ends").get<std::vector<Timestamp>>();
        c.states = j.at("test").at("states").get<int>();
        c.p_value = j.at("test").at("p_value").get<double>();
        c.rwr.restart_keep = j.at("rwr").at("alpha").get<double>();
        c.rwr.steps = j.at("rwr").at("steps").get<int>();

        const auto& m = j.at("model");
        c.arch.graph_encoder_dims = m.at("graph_encoder_dims").get<std::vector<int>>();
        c.arch.shared_encoder_dims = m.at("shared_encoder_dims").get<std::vector<int>>();
        c.arch.hidden_activation = nn::activation_from_string(m.at("hidden_activation").get<std::string>());
        c.arch.embedding_activation = nn::activation_from_string(m.at("embedding_activation").get<std::string>());
        c.arch.output_activation = nn::activation_from_string(m.at("output_activation").get<std::string>());
        c.train.max_epochs = m.at("max_epochs").get<int>();
        c.train.learning_rate = m.at("learning_rate").get<double>();
        c.train.validation_fraction = m.at("validation_fraction").get<double>();
        c.train.patience = m.at("patience").get<int>();
        c.train.min_delta = m.at("min_delta").get<double>();

        c.seed_data = j.at("seeds").at("data").get<std::uint64_t>();
        c.seed_split = j.at("seeds").at("split").get<std::uint64_t>();
        c.seed_init = j.at("seeds").at("init").get<std::uint64_t>();
        c.train.split_seed = c.seed_split;

        const auto& s = j.at("synth");
        c.synth.assets = s.at("assets").get<int>();
        c.synth.days = s.at("days").get<int>();
        c.synth.base_period_minutes = s.at("base_period_minutes").get<int>();
        c.synth.start_ms = s.at("start_ms").get<Timestamp>();
        c.synth.volatility = s.at("volatility").get<double>();
        c.synth.initial_price = s.at("initial_price").get<double>();
        c.synth.couplings.clear();
        for (const auto& cp : s.at("couplings"))
            c.synth.couplings.push_back({cp.at("leader").get<int>(), cp.at("follower").get<int>(),
                                         cp.at("lag").get<int>(), cp.at("coupling").get<double>(),
                                         cp.at("noise").get<double>()});

        c.pca_components = j.at("postprocess").at("pca_components").get<int>();
        for (const auto& p : j.at("postprocess").at("similarity_pairs")) {
            if (!p.is_array() || p.size() != 2)
                throw ConfigError("postprocess.similarity_pairs entries must be [asset, asset]");
            c.similarity_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
        }
        c.dump_returns = j.at("output").at("dump_returns").get<bool>();
        c.dump_features = j.at("output").at("dump_features").get<bool>();
        c.threads = j.at("runtime").at("threads").get<int>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    } catch (const DataError& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    c.validate();
    return c;
}

}  // namespace llfuse
