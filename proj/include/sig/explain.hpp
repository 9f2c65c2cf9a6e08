#pragma once

// Explanations read off the extractor scores, fidelity against residual
// histories, and JSONL export.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sig/graph_store.hpp"
#include "sig/metrics.hpp"
#include "sig/model.hpp"

namespace sig {

struct ScoredEdge {
    EventId id = 0;
    double score = 0.0;
};

// Candidate universe S_u ∪ S_v of one query, best first: score descending,
// then more recent event, then lower event id. An event present in both
// sequences keeps its larger score.
inline std::vector<ScoredEdge> explanation_universe(const EventStore& store, const QueryTrace& tr) {
    std::map<EventId, double> best;
    auto take = [&](const EdgeSequence& seq, const std::vector<double>& score) {
        for (std::size_t r = 0; r < seq.size(); ++r) {
            auto [it, fresh] = best.emplace(seq[r], score[r]);
            if (!fresh) it->second = std::max(it->second, score[r]);
        }
    };
    take(tr.seq_u, tr.score_u);
    take(tr.seq_v, tr.score_v);
    std::vector<ScoredEdge> out;
    out.reserve(best.size());
    for (const auto& [id, s] : best) out.push_back({id, s});
    std::stable_sort(out.begin(), out.end(), [&](const ScoredEdge& a, const ScoredEdge& b) {
        if (a.score != b.score) return a.score > b.score;
        const double ta = store.event(a.id).time, tb = store.event(b.id).time;
        if (ta != tb) return ta > tb;
        return a.id < b.id;
    });
    return out;
}

struct ExplanationSplit {
    std::vector<EventId> critical;  // G_c, sorted by id
    std::vector<EventId> residual;  // G_b, sorted by id
};

inline std::size_t explanation_size(std::size_t universe, double s) {
    if (!(s > 0.0 && s <= 1.0)) throw std::invalid_argument("sparsity must lie in (0, 1]");
    // Guard against s * n landing a hair above an integer.
    const double raw = s * double(universe);
    const double rounded = std::round(raw);
    const double m = std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw);
    return std::min(universe, std::size_t(m));
}

// G_c = the top ceil(s * |universe|) of a ranked universe; G_b the rest.
inline ExplanationSplit explanation_at_sparsity(std::span<const ScoredEdge> ranked, double s) {
    if (ranked.empty()) throw std::invalid_argument("explanation: empty candidate universe");
    const std::size_t m = explanation_size(ranked.size(), s);
    ExplanationSplit out;
    for (std::size_t i = 0; i < ranked.size(); ++i) (i < m ? out.critical : out.residual).push_back(ranked[i].id);
    std::sort(out.critical.begin(), out.critical.end());
    std::sort(out.residual.begin(), out.residual.end());
    return out;
}

inline std::vector<QueryTrace> trace_queries(SigModel& model, const EventStore& store, std::span<const Query> queries,
                                             std::size_t batch = 256) {
    std::vector<QueryTrace> out;
    out.reserve(queries.size());
    for (std::size_t b = 0; b < queries.size(); b += batch) {
        ad::Tape tape;
        ForwardOptions opt;
        opt.trace = true;
        ForwardResult fr = model.forward(tape, store, queries.subspan(b, std::min(batch, queries.size() - b)), opt);
        for (auto& t : fr.traces) out.push_back(std::move(t));
    }
    return out;
}

inline ExplanationSplit explanation_at_sparsity(SigModel& model, const EventStore& store, const Query& q, double s) {
    const auto tr = trace_queries(model, store, std::span<const Query>(&q, 1));
    const auto ranked = explanation_universe(store, tr[0]);
    return explanation_at_sparsity(ranked, s);
}

struct FidelityCurve {
    std::vector<double> sparsity;
    std::vector<double> fidelity;
    double ap_full = 0.0;
    double aufsc = 0.0;      // trapezoid area / (s_max - s_min)
    double aufsc_raw = 0.0;  // trapezoid area
};

// Trapezoid integral of fidelity over sparsity.
inline double aufsc_raw(std::span<const double> s, std::span<const double> f) {
    if (s.size() != f.size()) throw std::invalid_argument("aufsc: sparsity and fidelity lengths differ");
    if (s.size() < 2) throw std::invalid_argument("aufsc: need at least 2 points");
    double area = 0.0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        if (!(s[i] > s[i - 1])) throw std::invalid_argument("aufsc: sparsity must be strictly increasing");
        area += 0.5 * (f[i] + f[i - 1]) * (s[i] - s[i - 1]);
    }
    return area;
}

inline double aufsc(std::span<const double> s, std::span<const double> f) {
    const double area = aufsc_raw(s, f);
    return area / (s.back() - s.front());
}

namespace detail {

inline std::vector<std::vector<EventId>> residual_removals(const EventStore& store, const std::vector<QueryTrace>& traces,
                                                           double s) {
    std::vector<std::vector<EventId>> removed;
    removed.reserve(traces.size());
    for (const auto& tr : traces) {
        // A query with no temporal history has nothing to hide.
        const auto ranked = explanation_universe(store, tr);
        removed.push_back(ranked.empty() ? std::vector<EventId>{} : explanation_at_sparsity(ranked, s).critical);
    }
    return removed;
}

}  // namespace detail

// ap(G) - ap(G_b): the model re-predicts every query with its explanation
// G_c hidden from the extractors.
inline FidelityCurve fidelity_curve(SigModel& model, const EventStore& store, std::span<const Query> queries,
                                    const std::vector<double>& labels, const std::vector<double>& grid,
                                    std::size_t batch = 256) {
    if (grid.empty()) throw std::invalid_argument("fidelity: empty sparsity grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0 && grid[i] <= 1.0)) throw std::invalid_argument("sparsity must lie in (0, 1]");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("sparsity grid must be strictly increasing");
    }
    const auto traces = trace_queries(model, store, queries, batch);
    FidelityCurve c;
    c.ap_full = evaluate_ap_auc(predict(model, store, queries, batch), labels).ap;
    for (double s : grid) {
        const auto removed = detail::residual_removals(store, traces, s);
        const double ap_b = evaluate_ap_auc(predict(model, store, queries, batch, &removed), labels).ap;
        c.sparsity.push_back(s);
        c.fidelity.push_back(c.ap_full - ap_b);
    }
    if (grid.size() >= 2) {
        c.aufsc_raw = aufsc_raw(c.sparsity, c.fidelity);
        c.aufsc = c.aufsc_raw / (c.sparsity.back() - c.sparsity.front());
    }
    return c;
}

inline double fidelity(SigModel& model, const EventStore& store, std::span<const Query> queries,
                       const std::vector<double>& labels, double s, std::size_t batch = 256) {
    return fidelity_curve(model, store, queries, labels, {s}, batch).fidelity[0];
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct TemporalItem {
    NodeId src = 0, dst = 0;
    double t = 0.0, dt = 0.0, score = 0.0;
    bool operator==(const TemporalItem&) const = default;
};

struct StructuralItem {
    NodeId node = 0;
    double score = 0.0;
    bool operator==(const StructuralItem&) const = default;
};

// The selected temporal edges and structural nodes of one query, with y^I on
// the full history and on the history with those temporal edges hidden.
struct ExplanationRecord {
    Query query;
    std::vector<TemporalItem> temporal;
    std::vector<StructuralItem> structural;
    double y_full = 0.0;
    double y_residual = 0.0;

    bool operator==(const ExplanationRecord& o) const {
        return query.src == o.query.src && query.dst == o.query.dst && query.t0 == o.query.t0 &&
               temporal == o.temporal && structural == o.structural && y_full == o.y_full &&
               y_residual == o.y_residual;
    }
};

inline std::vector<ExplanationRecord> explain_queries(SigModel& model, const EventStore& store,
                                                      std::span<const Query> queries, std::size_t batch = 256) {
    const auto traces = trace_queries(model, store, queries, batch);
    std::vector<ExplanationRecord> out(queries.size());
    std::vector<std::vector<EventId>> removed(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const QueryTrace& tr = traces[i];
        ExplanationRecord& r = out[i];
        r.query = queries[i];
        std::map<EventId, double> edges;
        auto take = [&](const EdgeSequence& seq, const std::vector<double>& score, const std::vector<std::uint8_t>& sel) {
            for (std::size_t k = 0; k < seq.size(); ++k) {
                if (!sel[k]) continue;
                auto [it, fresh] = edges.emplace(seq[k], score[k]);
                if (!fresh) it->second = std::max(it->second, score[k]);
            }
        };
        take(tr.seq_u, tr.score_u, tr.sel_u);
        take(tr.seq_v, tr.score_v, tr.sel_v);
        for (const auto& [id, s] : edges) {
            const Event& e = store.event(id);
            r.temporal.push_back({e.src, e.dst, e.time, queries[i].t0 - e.time, s});
            removed[i].push_back(id);
        }
        std::map<NodeId, double> nodes;
        auto take_nodes = [&](const std::vector<NodeId>& nb, const std::vector<double>& score,
                              const std::vector<std::uint8_t>& sel) {
            for (std::size_t k = 0; k < nb.size(); ++k) {
                if (!sel[k]) continue;
                auto [it, fresh] = nodes.emplace(nb[k], score[k]);
                if (!fresh) it->second = std::max(it->second, score[k]);
            }
        };
        take_nodes(tr.nb_u, tr.nscore_u, tr.nsel_u);
        take_nodes(tr.nb_v, tr.nscore_v, tr.nsel_v);
        for (const auto& [n, s] : nodes) r.structural.push_back({n, s});
    }
    const auto full = predict(model, store, queries, batch);
    const auto resid = predict(model, store, queries, batch, &removed);
    for (std::size_t i = 0; i < queries.size(); ++i) {
        out[i].y_full = full[i];
        out[i].y_residual = resid[i];
    }
    return out;
}

inline nlohmann::json to_json(const ExplanationRecord& r) {
    nlohmann::json j;
    j["query"] = {{"src", r.query.src}, {"dst", r.query.dst}, {"t0", r.query.t0}};
    j["temporal"] = nlohmann::json::array();
    for (const auto& e : r.temporal)
        j["temporal"].push_back({{"src", e.src}, {"dst", e.dst}, {"t", e.t}, {"dt", e.dt}, {"score", e.score}});
    j["structural"] = nlohmann::json::array();
    for (const auto& n : r.structural) j["structural"].push_back({{"node", n.node}, {"score", n.score}});
    j["y_full"] = r.y_full;
    j["y_residual"] = r.y_residual;
    return j;
}

inline ExplanationRecord record_from_json(const nlohmann::json& j) {
    ExplanationRecord r;
    const auto& q = j.at("query");
    r.query = {q.at("src").get<NodeId>(), q.at("dst").get<NodeId>(), q.at("t0").get<double>()};
    for (const auto& e : j.at("temporal")) {
        r.temporal.push_back({e.at("src").get<NodeId>(), e.at("dst").get<NodeId>(), e.at("t").get<double>(),
                              e.at("dt").get<double>(), e.at("score").get<double>()});
    }
    for (const auto& n : j.at("structural")) r.structural.push_back({n.at("node").get<NodeId>(), n.at("score").get<double>()});
    r.y_full = j.at("y_full").get<double>();
    r.y_residual = j.at("y_residual").get<double>();
    return r;
}

// One JSON object per line.
inline void export_explanations(const std::vector<ExplanationRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& r : records) out << to_json(r).dump() << '\n';
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline std::vector<ExplanationRecord> import_explanations(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<ExplanationRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace sig
