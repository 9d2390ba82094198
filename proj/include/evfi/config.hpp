#pragma once

// Run configuration as `key = value` text with `#` comments.

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "evfi/errors.hpp"
#include "evfi/eval.hpp"
#include "evfi/toy_data.hpp"
#include "evfi/training.hpp"

namespace evfi {

struct RunConfig {
    std::uint64_t seed = 0;
    int stage = 1;
    // Data
    std::string kind = "translate";
    std::size_t sequences = 16;
    std::size_t size = 64;
    std::size_t intervals = 2;
    std::size_t substeps = 8;
    double speed = 3.0;
    double contrast_threshold = 0.2;
    std::string data_dir;  // frame directory for eval; empty means a generated toy sequence
    // Networks
    std::size_t flow_channels = 16;
    std::size_t synth_channels = 8;
    std::size_t event_bins = 16;
    std::size_t corr_radius = 3;
    std::size_t heads = 2;
    bool use_fbiof = true;
    bool use_ibiof = true;
    // Optimization
    std::size_t steps = 2000;
    std::size_t batch = 2;
    std::size_t crop = 32;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    double lambda1 = 1.0;
    double lambda2 = 0.1;
    std::vector<double> lambda_s{0.1, 0.1, 1.0};
    // Evaluation
    std::vector<std::size_t> skips{3, 7};
    std::string mode = "middle";

    bool operator==(const RunConfig&) const = default;

    PyramidConfig flow_config() const {
        PyramidConfig c;
        c.base_channels = flow_channels;
        c.event_bins = event_bins;
        c.corr_radius = corr_radius;
        c.use_fbiof = use_fbiof;
        c.use_ibiof = use_ibiof;
        return c;
    }
    SynthConfig synth_config() const {
        SynthConfig c;
        c.base_channels = synth_channels;
        c.event_bins = event_bins;
        c.heads = heads;
        return c;
    }
    ToyOptions toy_options() const {
        ToyOptions o;
        o.intervals = intervals;
        o.substeps = substeps;
        o.speed = speed;
        o.contrast_threshold = contrast_threshold;
        return o;
    }
    TrainConfig train_config() const {
        TrainConfig t;
        t.stage = stage;
        t.steps = steps;
        t.batch = batch;
        t.crop = crop;
        t.lr = lr;
        t.weight_decay = weight_decay;
        t.seed = seed;
        t.lambda1 = lambda1;
        t.lambda2 = lambda2;
        for (std::size_t s = 0; s < kScales; ++s) t.lambda_s[s] = lambda_s[s];
        return t;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) out.push_back(trim(item));
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    const auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end || v.empty()) {
        throw UsageError("config key '" + key + "': cannot parse '" + v + "' as a number");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
    return std::string(buf, ptr);
}

struct ConfigField {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
ConfigField number_field(T RunConfig::*m) {
    return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<T>(k, v); },
            [m](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) return format_double(c.*m);
                else return std::to_string(c.*m);
            }};
}

inline ConfigField bool_field(bool RunConfig::*m) {
    return {[m](RunConfig& c, const std::string& k, const std::string& v) { c.*m = parse_bool(k, v); },
            [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

inline ConfigField string_field(std::string RunConfig::*m) {
    return {[m](RunConfig& c, const std::string&, const std::string& v) { c.*m = v; },
            [m](const RunConfig& c) { return c.*m; }};
}

template <typename T>
ConfigField list_field(std::vector<T> RunConfig::*m) {
    return {[m](RunConfig& c, const std::string& k, const std::string& v) {
                std::vector<T> out;
                for (const auto& item : split_list(v)) out.push_back(parse_number<T>(k, item));
                c.*m = out;
            },
            [m](const RunConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < (c.*m).size(); ++i) {
                    if (i) s += ",";
                    if constexpr (std::is_floating_point_v<T>) s += format_double((c.*m)[i]);
                    else s += std::to_string((c.*m)[i]);
                }
                return s;
            }};
}

/// Ordered key table; serialization follows this order.
inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
    static const std::vector<std::pair<std::string, ConfigField>> fields = {
        {"seed", number_field(&RunConfig::seed)},
        {"stage", number_field(&RunConfig::stage)},
        {"kind", string_field(&RunConfig::kind)},
        {"sequences", number_field(&RunConfig::sequences)},
        {"size", number_field(&RunConfig::size)},
        {"intervals", number_field(&RunConfig::intervals)},
        {"substeps", number_field(&RunConfig::substeps)},
        {"speed", number_field(&RunConfig::speed)},
        {"contrast_threshold", number_field(&RunConfig::contrast_threshold)},
        {"data_dir", string_field(&RunConfig::data_dir)},
        {"flow_channels", number_field(&RunConfig::flow_channels)},
        {"synth_channels", number_field(&RunConfig::synth_channels)},
        {"event_bins", number_field(&RunConfig::event_bins)},
        {"corr_radius", number_field(&RunConfig::corr_radius)},
        {"heads", number_field(&RunConfig::heads)},
        {"use_fbiof", bool_field(&RunConfig::use_fbiof)},
        {"use_ibiof", bool_field(&RunConfig::use_ibiof)},
        {"steps", number_field(&RunConfig::steps)},
        {"batch", number_field(&RunConfig::batch)},
        {"crop", number_field(&RunConfig::crop)},
        {"lr", number_field(&RunConfig::lr)},
        {"weight_decay", number_field(&RunConfig::weight_decay)},
        {"lambda1", number_field(&RunConfig::lambda1)},
        {"lambda2", number_field(&RunConfig::lambda2)},
        {"lambda_s", list_field(&RunConfig::lambda_s)},
        {"skips", list_field(&RunConfig::skips)},
        {"mode", string_field(&RunConfig::mode)},
    };
    return fields;
}

}  // namespace detail

inline void validate(const RunConfig& c) {
    parse_toy_kind(c.kind);
    parse_eval_mode(c.mode);
    if (c.stage != 1 && c.stage != 2) throw UsageError("stage must be 1 or 2");
    if (c.lambda_s.size() != kScales) throw UsageError("lambda_s needs exactly 3 values");
    if (c.skips.empty()) throw UsageError("skips must list at least one value");
    if (c.size % 8 != 0 || c.crop % 8 != 0 || c.crop > c.size) {
        throw UsageError("size and crop must be multiples of 8 with crop <= size");
    }
    if (c.event_bins == 0 || c.heads == 0 || c.flow_channels == 0 || c.synth_channels == 0 || c.batch == 0) {
        throw UsageError("channel, bin, head and batch counts must be positive");
    }
    if (c.synth_channels % c.heads != 0) throw UsageError("synth_channels must be divisible by heads");
}

/// Parses a config document over the defaults. Unknown or repeated keys and
/// malformed lines are errors that name the line.
inline RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    std::map<std::string, const detail::ConfigField*> table;
    for (const auto& [k, f] : detail::config_fields()) table[k] = &f;
    std::map<std::string, std::size_t> seen;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        const auto it = table.find(key);
        if (it == table.end()) throw UsageError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (seen.count(key)) {
            throw UsageError("config line " + std::to_string(lineno) + ": key '" + key + "' repeats line " +
                             std::to_string(seen[key]));
        }
        seen[key] = lineno;
        it->second->set(c, key, value);
    }
    validate(c);
    return c;
}

inline std::string serialize_run_config(const RunConfig& c) {
    std::string out;
    for (const auto& [k, f] : detail::config_fields()) out += k + " = " + f.get(c) + "\n";
    return out;
}

/// EVFI_SEED, when set, replaces the configured seed.
inline void apply_environment(RunConfig& c) {
    if (const char* s = std::getenv("EVFI_SEED")) {
        c.seed = detail::parse_number<std::uint64_t>("EVFI_SEED", detail::trim(s));
    }
}

}  // namespace evfi
