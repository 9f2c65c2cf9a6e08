#pragma once

// Synthetic data: planted-pattern graphs with a decoy shortcut, and bias
// injection for out-of-distribution variants of an existing stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "sig/graph_store.hpp"

namespace sig {

enum class PlantedRule { triadic_closure, recency_burst };

inline PlantedRule parse_rule(const std::string& s) {
    if (s == "triadic_closure") return PlantedRule::triadic_closure;
    if (s == "recency_burst") return PlantedRule::recency_burst;
    throw std::invalid_argument("unknown rule '" + s + "' (expected triadic_closure or recency_burst)");
}

enum class Role { train, val, test };

struct LabeledQuery {
    Query query;
    double label = 0.0;
    Role role = Role::train;
    bool decoy = false;  // dst has a bridging event just before t0
};

struct PlantedConfig {
    std::size_t nodes = 2000;
    std::size_t events = 50000;       // approximate total
    std::size_t patterns = 2000;      // planted positives
    double horizon = 100000.0;
    double pattern_window = 600.0;    // causal events fall in [t0 - window, t0)
    std::size_t bridge_nodes = 20;
    double bridge_prob = 0.85;        // P(decoy | positive) outside the OOD slice
    double bridge_lag = 20.0;         // decoys land in [t0 - lag, t0)
    std::size_t burst_size = 3;
    double train_frac = 0.70;
    double val_frac = 0.15;
    PlantedRule rule = PlantedRule::triadic_closure;
    bool ood = false;                 // decorrelate the decoy in the test slice
    std::uint64_t seed = 1;
};

// Edge feature layout: [pattern flag, bridge flag, 4 key dims].
inline constexpr std::size_t kPlantedFeatureDim = 6;

struct PlantedDataset {
    EventStore store;
    std::vector<LabeledQuery> queries;
    double train_decoy_corr = 0.0;
    double test_decoy_corr = 0.0;
    PlantedConfig config;
};

// Pearson correlation of two 0/1 indicator sequences (0 if either is constant).
inline double indicator_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = double(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0 || sbb == 0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

namespace detail {

// Does the causal pattern of `rule` hold for (u, v) at t0 in the given store?
inline bool rule_holds(const EventStore& s, PlantedRule rule, NodeId u, NodeId v, double t0, double window,
                       std::size_t burst) {
    auto partners = [&](NodeId n) {
        std::set<NodeId> out;
        for (EventId e : s.incident(n)) {
            const Event& ev = s.event(e);
            if (ev.time >= t0 - window && ev.time < t0) out.insert(ev.src == n ? ev.dst : ev.src);
        }
        return out;
    };
    if (rule == PlantedRule::triadic_closure) {
        const auto a = partners(u), b = partners(v);
        for (NodeId w : a)
            if (w != u && w != v && b.count(w)) return true;
        return false;
    }
    std::size_t hits = 0;
    for (EventId e : s.incident(v)) {
        const Event& ev = s.event(e);
        if (ev.time >= t0 - window && ev.time < t0 && ev.features[0] == 1.0) ++hits;
    }
    return hits >= burst;
}

}  // namespace detail

inline PlantedDataset planted_pattern_generate(const PlantedConfig& cfg) {
    if (cfg.nodes < cfg.bridge_nodes + 4) throw std::invalid_argument("planted: too few nodes");
    if (!(cfg.horizon > cfg.pattern_window) || !(cfg.pattern_window > cfg.bridge_lag) || cfg.bridge_lag <= 0) {
        throw std::invalid_argument("planted: need horizon > window > bridge lag > 0");
    }
    std::mt19937_64 rng(cfg.seed);
    // Test-slice decisions draw from their own stream so the train and
    // validation portions are identical between the ID and OOD variants.
    std::mt19937_64 test_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const NodeId first_regular = static_cast<NodeId>(cfg.bridge_nodes);
    std::uniform_int_distribution<NodeId> any_regular(first_regular, static_cast<NodeId>(cfg.nodes - 1));
    std::uniform_int_distribution<NodeId> any_bridge(0, first_regular - 1);
    const double t_val = cfg.train_frac * cfg.horizon;
    const double t_test = (cfg.train_frac + cfg.val_frac) * cfg.horizon;
    auto role_of = [&](double t) { return t < t_val ? Role::train : (t < t_test ? Role::val : Role::test); };

    std::vector<double> bridge_signature(4);
    for (double& x : bridge_signature) x = gauss(rng);
    auto noise_features = [&](std::mt19937_64& r) {
        std::vector<double> f(kPlantedFeatureDim, 0.0);
        for (std::size_t j = 2; j < kPlantedFeatureDim; ++j) f[j] = 0.5 * gauss(r);
        return f;
    };
    auto bridge_event = [&](NodeId v, double t0, std::mt19937_64& r) {
        Event e;
        e.src = any_bridge(r);
        e.dst = v;
        e.time = t0 - std::uniform_real_distribution<double>(0.0, cfg.bridge_lag)(r) - 1e-3;
        e.features.assign(kPlantedFeatureDim, 0.0);
        e.features[1] = 1.0;
        for (std::size_t j = 0; j < 4; ++j) e.features[2 + j] = bridge_signature[j] + 0.1 * gauss(r);
        return e;
    };
    auto distinct = [&](std::initializer_list<NodeId> taken) {
        for (;;) {
            const NodeId n = any_regular(rng);
            if (std::find(taken.begin(), taken.end(), n) == taken.end()) return n;
        }
    };

    std::vector<Event> events;
    std::vector<LabeledQuery> positives;
    const std::size_t per_pattern = cfg.rule == PlantedRule::triadic_closure ? 3 : cfg.burst_size + 1;
    std::uniform_real_distribution<double> when(cfg.pattern_window + 1.0, cfg.horizon);
    for (std::size_t p = 0; p < cfg.patterns; ++p) {
        const double t0 = when(rng);
        const NodeId u = any_regular(rng);
        const NodeId v = distinct({u});
        std::vector<double> key(4);
        for (double& x : key) x = gauss(rng);
        auto leg = [&](NodeId a, NodeId b, double lo, double hi) {
            Event e;
            e.src = a;
            e.dst = b;
            e.time = t0 - std::uniform_real_distribution<double>(lo, hi)(rng);
            e.features.assign(kPlantedFeatureDim, 0.0);
            e.features[0] = 1.0;
            for (std::size_t j = 0; j < 4; ++j) e.features[2 + j] = key[j] + 0.1 * gauss(rng);
            events.push_back(std::move(e));
        };
        const double w = cfg.pattern_window;
        if (cfg.rule == PlantedRule::triadic_closure) {
            const NodeId mid = distinct({u, v});
            leg(u, mid, 0.5 * w, 0.95 * w);
            leg(mid, v, 0.05 * w, 0.5 * w);
        } else {
            for (std::size_t b = 0; b < cfg.burst_size; ++b) leg(distinct({u, v}), v, 0.05 * w, 0.95 * w);
        }
        Event closure;
        closure.src = u;
        closure.dst = v;
        closure.time = t0;
        closure.label = 1.0;
        closure.features = noise_features(rng);
        events.push_back(std::move(closure));
        positives.push_back({{u, v, t0}, 1.0, role_of(t0), false});
    }

    const std::size_t planted = cfg.patterns * per_pattern;
    const std::size_t background = cfg.events > planted ? cfg.events - planted : 0;
    std::uniform_real_distribution<double> any_time(0.0, cfg.horizon);
    for (std::size_t i = 0; i < background; ++i) {
        Event e;
        e.src = any_regular(rng);
        e.dst = distinct({e.src});
        e.time = any_time(rng);
        e.features = noise_features(rng);
        events.push_back(std::move(e));
    }

    // Decoys on positives.
    std::vector<std::size_t> test_pos;
    for (std::size_t i = 0; i < positives.size(); ++i) {
        if (positives[i].role == Role::test) {
            test_pos.push_back(i);
            continue;
        }
        positives[i].decoy = std::bernoulli_distribution(cfg.bridge_prob)(rng);
    }
    if (cfg.ood) {
        std::vector<std::size_t> order = test_pos;
        std::shuffle(order.begin(), order.end(), test_rng);
        for (std::size_t j = 0; j < order.size(); ++j) positives[order[j]].decoy = j < order.size() / 2;
    } else {
        for (std::size_t i : test_pos) positives[i].decoy = std::bernoulli_distribution(cfg.bridge_prob)(test_rng);
    }
    for (const LabeledQuery& q : positives) {
        if (!q.decoy) continue;
        auto& r = q.role == Role::test ? test_rng : rng;
        events.push_back(bridge_event(q.query.dst, q.query.t0, r));
    }

    // One rule-violating negative per positive, same src and time.
    EventStore provisional = EventStore::build(events, cfg.nodes);
    std::vector<LabeledQuery> negatives;
    for (const LabeledQuery& p : positives) {
        auto& r = p.role == Role::test ? test_rng : rng;
        std::uniform_int_distribution<NodeId> pick(first_regular, static_cast<NodeId>(cfg.nodes - 1));
        for (;;) {
            const NodeId v = pick(r);
            if (v == p.query.src || v == p.query.dst) continue;
            if (detail::rule_holds(provisional, cfg.rule, p.query.src, v, p.query.t0, cfg.pattern_window,
                                   cfg.burst_size)) {
                continue;
            }
            negatives.push_back({{p.query.src, v, p.query.t0}, 0.0, p.role, false});
            break;
        }
    }
    if (cfg.ood) {
        std::vector<std::size_t> test_neg;
        for (std::size_t i = 0; i < negatives.size(); ++i)
            if (negatives[i].role == Role::test) test_neg.push_back(i);
        std::shuffle(test_neg.begin(), test_neg.end(), test_rng);
        for (std::size_t j = 0; j < test_neg.size() / 2; ++j) {
            LabeledQuery& q = negatives[test_neg[j]];
            q.decoy = true;
            events.push_back(bridge_event(q.query.dst, q.query.t0, test_rng));
        }
    }

    PlantedDataset out;
    out.config = cfg;
    out.store = with_one_hot_features(EventStore::build(std::move(events), cfg.nodes), std::max(cfg.nodes, kDefaultOneHotCap));
    // Interleave so each positive is followed by its negative.
    for (std::size_t i = 0; i < positives.size(); ++i) {
        out.queries.push_back(positives[i]);
        out.queries.push_back(negatives[i]);
    }
    std::stable_sort(out.queries.begin(), out.queries.end(),
                     [](const LabeledQuery& a, const LabeledQuery& b) { return a.query.t0 < b.query.t0; });

    auto corr_for = [&](Role role) {
        std::vector<double> y, d;
        for (const LabeledQuery& q : out.queries) {
            if (q.role != role) continue;
            y.push_back(q.label);
            d.push_back(q.decoy ? 1.0 : 0.0);
        }
        return y.empty() ? 0.0 : indicator_correlation(y, d);
    };
    out.train_decoy_corr = corr_for(Role::train);
    out.test_decoy_corr = corr_for(Role::test);
    if (!(out.train_decoy_corr > 0.6)) {
        throw std::runtime_error("planted: train decoy correlation " + std::to_string(out.train_decoy_corr) +
                                 " not above 0.6");
    }
    if (cfg.ood && !(std::abs(out.test_decoy_corr) < 0.05)) {
        throw std::runtime_error("planted: OOD decoy correlation " + std::to_string(out.test_decoy_corr) +
                                 " not below 0.05");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Bias injection
// ---------------------------------------------------------------------------

struct OodInjection {
    EventStore store;
    std::size_t added = 0;
    std::size_t to_neighbors = 0;
};

// For every node u of degree d(u), adds 2 d(u) events from u at times uniform
// over u's active window. Each goes to an existing neighbour with probability
// `scale`, otherwise to a uniformly drawn non-neighbour. Features are copied
// from a random existing event of u.
template <class Rng>
OodInjection ood_inject(const EventStore& store, double scale, Rng& rng) {
    if (!(scale > 0.0 && scale < 1.0)) throw std::invalid_argument("ood_inject: scale must be in (0, 1)");
    const std::size_t n = store.node_count();
    std::vector<Event> events(store.events().begin(), store.events().end());
    OodInjection out;
    std::bernoulli_distribution to_nb(scale);
    for (NodeId u = 0; u < n; ++u) {
        const auto inc = store.incident(u);
        if (inc.empty()) continue;
        std::vector<NodeId> nbrs;
        for (EventId e : inc) {
            const Event& ev = store.event(e);
            nbrs.push_back(ev.src == u ? ev.dst : ev.src);
        }
        std::sort(nbrs.begin(), nbrs.end());
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
        const double lo = store.event(inc.front()).time, hi = store.event(inc.back()).time;
        const bool has_non = nbrs.size() + (std::binary_search(nbrs.begin(), nbrs.end(), u) ? 0 : 1) < n;
        std::uniform_int_distribution<std::size_t> pick_nb(0, nbrs.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_ev(0, inc.size() - 1);
        std::uniform_int_distribution<NodeId> pick_any(0, static_cast<NodeId>(n - 1));
        for (std::size_t k = 0; k < 2 * inc.size(); ++k) {
            Event e;
            e.src = u;
            e.time = hi > lo ? std::uniform_real_distribution<double>(lo, hi)(rng) : lo;
            e.features = store.event(inc[pick_ev(rng)]).features;
            if (to_nb(rng) || !has_non) {
                e.dst = nbrs[pick_nb(rng)];
                ++out.to_neighbors;
            } else {
                NodeId d;
                do d = pick_any(rng);
                while (d == u || std::binary_search(nbrs.begin(), nbrs.end(), d));
                e.dst = d;
            }
            events.push_back(std::move(e));
            ++out.added;
        }
    }
    out.store = EventStore::build(std::move(events), n).with_node_features(store.node_features());
    return out;
}

}  // namespace sig
