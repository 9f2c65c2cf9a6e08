#pragma once

// Flat key=value run configuration. '#' starts a comment; blank lines are
// ignored; unknown keys are errors.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "sig/graph_store.hpp"
#include "sig/model.hpp"
#include "sig/trainer.hpp"

namespace sig {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// How a CSV becomes a dataset.
struct DataConfig {
    double train_frac = 0.70;
    double val_frac = 0.15;
    std::size_t one_hot_cap = kDefaultOneHotCap;  // larger graphs use landmark features
    std::size_t landmarks = 64;
    bool bipartite = false;
};

struct RunConfig {
    SigConfig model;
    TrainConfig train;
    DataConfig data;

    void validate() const {
        model.validate();
        train.validate();
        if (!(data.train_frac > 0) || !(data.val_frac > 0) || data.train_frac + data.val_frac >= 1.0) {
            throw ConfigError("train_frac and val_frac must be > 0 with sum < 1");
        }
        if (data.landmarks < 1) throw ConfigError("landmarks must be >= 1");
    }
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
    return out;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    }
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field count_field(std::string key, T RunConfig::*group, std::size_t T::*member) {
    return {key,
            [=](RunConfig& c, const std::string& v) { (c.*group).*member = std::size_t(parse_count(key, v)); },
            [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <class T>
Field real_field(std::string key, T RunConfig::*group, double T::*member) {
    return {key, [=](RunConfig& c, const std::string& v) { (c.*group).*member = parse_real(key, v); },
            [=](const RunConfig& c) { return format_real((c.*group).*member); }};
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> f = [] {
        using R = RunConfig;
        std::vector<Field> v{
            count_field("recent_n", &R::model, &SigConfig::recent_n),
            count_field("hidden", &R::model, &SigConfig::hidden),
            count_field("hops", &R::model, &SigConfig::hops),
            real_field("window", &R::model, &SigConfig::window),
            count_field("k_select", &R::model, &SigConfig::k_select),
            count_field("k_confounders", &R::model, &SigConfig::k_confounders),
            real_field("token_expansion", &R::model, &SigConfig::token_expansion),
            real_field("channel_expansion", &R::model, &SigConfig::channel_expansion),
            count_field("epochs", &R::train, &TrainConfig::epochs),
            count_field("batch_size", &R::train, &TrainConfig::batch_size),
            count_field("micro_batch", &R::train, &TrainConfig::micro_batch),
            real_field("lr", &R::train, &TrainConfig::lr),
            real_field("weight_decay", &R::train, &TrainConfig::weight_decay),
            count_field("patience", &R::train, &TrainConfig::patience),
            count_field("neg_ratio_train", &R::train, &TrainConfig::neg_ratio_train),
            count_field("neg_ratio_eval", &R::train, &TrainConfig::neg_ratio_eval),
            count_field("warmup_epochs", &R::train, &TrainConfig::warmup_epochs),
            count_field("refresh_every", &R::train, &TrainConfig::refresh_every),
            count_field("dictionary_sample", &R::train, &TrainConfig::dictionary_sample),
            count_field("kmeans_iters", &R::train, &TrainConfig::kmeans_iters),
            count_field("eval_batch", &R::train, &TrainConfig::eval_batch),
            real_field("train_frac", &R::data, &DataConfig::train_frac),
            real_field("val_frac", &R::data, &DataConfig::val_frac),
            count_field("one_hot_cap", &R::data, &DataConfig::one_hot_cap),
            count_field("landmarks", &R::data, &DataConfig::landmarks),
        };
        v.push_back({"time_alpha", [](R& c, const std::string& s) { c.model.time.alpha = parse_real("time_alpha", s); },
                     [](const R& c) { return format_real(c.model.time.alpha); }});
        v.push_back({"time_beta", [](R& c, const std::string& s) { c.model.time.beta = parse_real("time_beta", s); },
                     [](const R& c) { return format_real(c.model.time.beta); }});
        v.push_back({"time_dim", [](R& c, const std::string& s) { c.model.time.dim = parse_count("time_dim", s); },
                     [](const R& c) { return std::to_string(c.model.time.dim); }});
        v.push_back({"lambda_i", [](R& c, const std::string& s) { c.model.lambda.iid = parse_real("lambda_i", s); },
                     [](const R& c) { return format_real(c.model.lambda.iid); }});
        v.push_back({"lambda_t", [](R& c, const std::string& s) { c.model.lambda.temporal = parse_real("lambda_t", s); },
                     [](const R& c) { return format_real(c.model.lambda.temporal); }});
        v.push_back({"lambda_s", [](R& c, const std::string& s) { c.model.lambda.structural = parse_real("lambda_s", s); },
                     [](const R& c) { return format_real(c.model.lambda.structural); }});
        v.push_back({"seed", [](R& c, const std::string& s) { c.train.seed = parse_count("seed", s); },
                     [](const R& c) { return std::to_string(c.train.seed); }});
        v.push_back({"bipartite", [](R& c, const std::string& s) { c.data.bipartite = parse_bool("bipartite", s); },
                     [](const R& c) { return std::string(c.data.bipartite ? "true" : "false"); }});
        return v;
    }();
    return f;
}

}  // namespace detail

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
    for (const auto& f : detail::fields()) {
        if (f.key == key) {
            f.set(c, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

// Applies every assignment in `in` on top of `c`.
inline void apply_config(RunConfig& c, std::istream& in, const std::string& source = "config") {
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(source + ":" + std::to_string(n) + ": expected key=value");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(n) + ": empty key");
        try {
            set_config_value(c, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(n) + ": " + e.what());
        }
    }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    apply_config(c, in, path);
}

// Every key with its current value, in a fixed order.
inline std::vector<std::pair<std::string, std::string>> resolved_config(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& f : detail::fields()) out.emplace_back(f.key, f.get(c));
    return out;
}

inline void write_config(std::ostream& out, const RunConfig& c) {
    for (const auto& [k, v] : resolved_config(c)) out << k << " = " << v << '\n';
}

// One-hot node features when they fit under the cap, landmark distances
// otherwise.
inline EventStore with_default_node_features(const EventStore& store, const DataConfig& d, std::uint64_t seed) {
    if (store.node_count() <= d.one_hot_cap) return with_one_hot_features(store, d.one_hot_cap);
    return with_landmark_features(store, std::min(d.landmarks, store.node_count()), seed);
}

// Raw events -> node features -> chronological split -> labelled eval sets.
inline LinkDataset prepare_dataset(const EventStore& raw, const RunConfig& c) {
    const EventStore store = with_default_node_features(raw, c.data, c.train.seed);
    const double test_frac = 1.0 - c.data.train_frac - c.data.val_frac;
    const SplitRanges split = split_chronological(store, c.data.train_frac, c.data.val_frac, test_frac);
    return dataset_from_split(store, split, c.train.seed, c.train.neg_ratio_eval);
}

}  // namespace sig
