#pragma once

// Continuous-time dynamic graph storage: an immutable, time-sorted event list
// with per-node incidence lists for recency and windowed n-hop queries.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "sig/tensor.hpp"

namespace sig {

using NodeId = std::uint32_t;
using EventId = std::uint32_t;

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Event {
    NodeId src = 0;
    NodeId dst = 0;
    double time = 0.0;
    double label = 0.0;  // state_label column, carried through untouched
    std::vector<double> features;
};

// A link-prediction query: does (src, dst) interact at t0?
struct Query {
    NodeId src = 0;
    NodeId dst = 0;
    double t0 = 0.0;

    friend bool operator==(const Query&, const Query&) = default;
};

// Most recent first.
using EdgeSequence = std::vector<EventId>;

// Sorted (index, value) pairs.
struct SparseVec {
    std::vector<std::uint32_t> index;
    std::vector<double> value;

    std::size_t nnz() const noexcept { return index.size(); }

    double dot(const SparseVec& o) const noexcept {
        double s = 0.0;
        std::size_t i = 0, j = 0;
        while (i < index.size() && j < o.index.size()) {
            if (index[i] == o.index[j]) s += value[i++] * o.value[j++];
            else if (index[i] < o.index[j]) ++i;
            else ++j;
        }
        return s;
    }

    void add_to_dense(std::span<double> out, double scale = 1.0) const {
        for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] += scale * value[i];
    }

    std::vector<double> to_dense(std::size_t dim) const {
        std::vector<double> d(dim, 0.0);
        add_to_dense(d);
        return d;
    }
};

// Accumulates scaled sparse rows and emits a canonical SparseVec.
class SparseAccumulator {
public:
    void add(const SparseVec& v, double scale) {
        for (std::size_t i = 0; i < v.index.size(); ++i) entries_.emplace_back(v.index[i], scale * v.value[i]);
    }

    SparseVec finish() {
        std::stable_sort(entries_.begin(), entries_.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });
        SparseVec out;
        for (const auto& [i, v] : entries_) {
            if (!out.index.empty() && out.index.back() == i) out.value.back() += v;
            else {
                out.index.push_back(i);
                out.value.push_back(v);
            }
        }
        entries_.clear();
        return out;
    }

private:
    std::vector<std::pair<std::uint32_t, double>> entries_;
};

// Per-node feature vectors x^n. One-hot features are implicit.
class NodeFeatures {
public:
    NodeFeatures() = default;

    static NodeFeatures one_hot(std::size_t nodes) {
        NodeFeatures f;
        f.one_hot_ = true;
        f.dim_ = nodes;
        f.nodes_ = nodes;
        return f;
    }

    static NodeFeatures dense(std::size_t nodes, std::size_t dim, std::vector<double> rows) {
        if (rows.size() != nodes * dim) throw DimensionError("node features: expected nodes*dim values");
        NodeFeatures f;
        f.dim_ = dim;
        f.nodes_ = nodes;
        f.rows_ = std::move(rows);
        return f;
    }

    bool is_one_hot() const noexcept { return one_hot_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t node_count() const noexcept { return nodes_; }

    SparseVec sparse(NodeId n) const {
        SparseVec v;
        if (one_hot_) {
            v.index.push_back(n);
            v.value.push_back(1.0);
            return v;
        }
        for (std::size_t j = 0; j < dim_; ++j) {
            v.index.push_back(static_cast<std::uint32_t>(j));
            v.value.push_back(rows_[n * dim_ + j]);
        }
        return v;
    }

    std::vector<double> dense_row(NodeId n) const { return sparse(n).to_dense(dim_); }

private:
    bool one_hot_ = false;
    std::size_t dim_ = 0;
    std::size_t nodes_ = 0;
    std::vector<double> rows_;
};

class EventStore {
public:
    EventStore() = default;

    // Stable-sorts by time; node_count 0 means "max id + 1".
    static EventStore build(std::vector<Event> events, std::size_t node_count = 0) {
        if (events.empty()) throw DataError("no events");
        auto d = std::make_shared<Data>();
        d->feature_dim = events.front().features.size();
        std::size_t max_id = 0;
        for (const Event& e : events) {
            if (!std::isfinite(e.time) || e.time < 0.0) throw DataError("event time must be finite and >= 0");
            if (e.features.size() != d->feature_dim) throw DataError("inconsistent edge feature arity");
            max_id = std::max<std::size_t>(max_id, std::max(e.src, e.dst));
        }
        d->node_count = std::max(node_count, max_id + 1);
        d->origin.resize(events.size());
        std::iota(d->origin.begin(), d->origin.end(), std::size_t{0});
        std::stable_sort(d->origin.begin(), d->origin.end(),
                         [&](std::size_t a, std::size_t b) { return events[a].time < events[b].time; });
        d->events.reserve(events.size());
        for (std::size_t i : d->origin) d->events.push_back(std::move(events[i]));
        d->adjacency.assign(d->node_count, {});
        for (EventId i = 0; i < d->events.size(); ++i) {
            const Event& e = d->events[i];
            d->adjacency[e.src].push_back(i);
            if (e.dst != e.src) d->adjacency[e.dst].push_back(i);
        }
        EventStore s;
        s.data_ = std::move(d);
        s.features_ = std::make_shared<NodeFeatures>(NodeFeatures::one_hot(s.data_->node_count));
        return s;
    }

    std::size_t edge_count() const noexcept { return data_->events.size(); }
    std::size_t node_count() const noexcept { return data_->node_count; }
    std::size_t feature_dim() const noexcept { return data_->feature_dim; }
    const Event& event(EventId i) const { return data_->events[i]; }
    std::span<const Event> events() const noexcept { return data_->events; }
    std::span<const EventId> incident(NodeId n) const { return data_->adjacency.at(n); }
    // Original input position of each sorted event.
    std::span<const std::size_t> origin() const noexcept { return data_->origin; }
    double min_time() const noexcept { return data_->events.front().time; }
    double max_time() const noexcept { return data_->events.back().time; }

    const NodeFeatures& node_features() const noexcept { return *features_; }

    EventStore with_node_features(NodeFeatures f) const {
        if (f.node_count() != node_count()) throw DimensionError("node features cover a different node count");
        EventStore s = *this;
        s.features_ = std::make_shared<NodeFeatures>(std::move(f));
        return s;
    }

    // Up to `n` events incident to `node` with time < t0, most recent first.
    EdgeSequence recent_edges(NodeId node, double t0, std::size_t n) const {
        check_node(node);
        if (!std::isfinite(t0)) throw std::invalid_argument("recent_edges: t0 must be finite");
        if (n == 0) throw std::invalid_argument("recent_edges: N must be >= 1");
        const auto& adj = data_->adjacency[node];
        const auto end = before(adj, t0);
        EdgeSequence out;
        for (std::size_t i = end; i > 0 && out.size() < n; --i) out.push_back(adj[i - 1]);
        return out;
    }

    // Nodes within `hops` of `node` using only events with time in [t0 - window, t0).
    // The seed node is excluded; result is sorted.
    std::vector<NodeId> n_hop_neighbors(NodeId node, double t0, double window, std::size_t hops) const {
        check_node(node);
        if (hops < 1) throw std::invalid_argument("n_hop_neighbors: n must be >= 1");
        if (!(window > 0.0)) throw std::invalid_argument("n_hop_neighbors: T must be > 0");
        std::vector<NodeId> found;
        std::vector<NodeId> frontier{node};
        std::vector<std::uint8_t> seen;
        auto mark = [&](NodeId v) {
            if (seen.empty()) seen.assign(node_count(), 0);
            if (seen[v]) return false;
            seen[v] = 1;
            return true;
        };
        mark(node);
        const double lo = t0 - window;
        for (std::size_t h = 0; h < hops && !frontier.empty(); ++h) {
            std::vector<NodeId> next;
            for (NodeId f : frontier) {
                const auto& adj = data_->adjacency[f];
                const std::size_t end = before(adj, t0);
                const std::size_t begin = at_or_after(adj, lo);
                for (std::size_t i = begin; i < end; ++i) {
                    const Event& e = data_->events[adj[i]];
                    const NodeId other = e.src == f ? e.dst : e.src;
                    if (mark(other)) next.push_back(other);
                }
            }
            found.insert(found.end(), next.begin(), next.end());
            frontier = std::move(next);
        }
        std::sort(found.begin(), found.end());
        return found;
    }

    void check_node(NodeId n) const {
        if (n >= node_count()) throw std::out_of_range("unknown node " + std::to_string(n));
    }

private:
    struct Data {
        std::vector<Event> events;
        std::vector<std::size_t> origin;
        std::vector<std::vector<EventId>> adjacency;
        std::size_t node_count = 0;
        std::size_t feature_dim = 0;
    };

    // Number of incidence entries with time < t.
    std::size_t before(const std::vector<EventId>& adj, double t) const {
        return std::partition_point(adj.begin(), adj.end(),
                                    [&](EventId e) { return data_->events[e].time < t; }) -
               adj.begin();
    }
    std::size_t at_or_after(const std::vector<EventId>& adj, double t) const { return before(adj, t); }

    std::shared_ptr<const Data> data_;
    std::shared_ptr<const NodeFeatures> features_;
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

struct LoadSchema {
    // Jodie exports number users and items from 0 independently; when set, item
    // ids are shifted past the largest user id.
    bool bipartite = false;
};

namespace detail {

inline bool parse_double(std::string_view s, double& out) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && p == s.data() + s.size();
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t c = line.find(',', start);
        out.push_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
        if (c == std::string_view::npos) break;
        start = c + 1;
    }
    return out;
}

}  // namespace detail

// Rows: src,dst,timestamp,state_label,f1,...,fm with an optional header line.
inline std::vector<Event> parse_events(std::istream& in, const LoadSchema& schema = {}) {
    std::vector<Event> events;
    std::string line;
    std::size_t line_no = 0;
    std::size_t arity = 0;
    bool arity_set = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view sv(line);
        if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
        if (sv.find_first_not_of(" \t") == std::string_view::npos) continue;
        const auto fields = detail::split_commas(sv);
        double first = 0.0;
        if (events.empty() && !arity_set && !detail::parse_double(fields[0], first)) continue;  // header
        if (fields.size() < 4) {
            throw DataError("line " + std::to_string(line_no) + ": expected at least 4 fields, got " +
                            std::to_string(fields.size()));
        }
        double src = 0, dst = 0, ts = 0, label = 0;
        if (!detail::parse_double(fields[0], src) || !detail::parse_double(fields[1], dst) ||
            !detail::parse_double(fields[2], ts) || !detail::parse_double(fields[3], label)) {
            throw DataError("line " + std::to_string(line_no) + ": malformed row");
        }
        if (src < 0 || dst < 0 || src != std::floor(src) || dst != std::floor(dst) ||
            src > double(std::numeric_limits<NodeId>::max() / 2) ||
            dst > double(std::numeric_limits<NodeId>::max() / 2)) {
            throw DataError("line " + std::to_string(line_no) + ": node ids must be nonnegative integers");
        }
        if (!std::isfinite(ts) || ts < 0.0) {
            throw DataError("line " + std::to_string(line_no) + ": timestamp must be finite and >= 0");
        }
        const std::size_t m = fields.size() - 4;
        if (!arity_set) {
            arity = m;
            arity_set = true;
        } else if (m != arity) {
            throw DataError("line " + std::to_string(line_no) + ": inconsistent feature arity " + std::to_string(m) +
                            " (expected " + std::to_string(arity) + ")");
        }
        Event e;
        e.src = static_cast<NodeId>(src);
        e.dst = static_cast<NodeId>(dst);
        e.time = ts;
        e.label = label;
        e.features.resize(m);
        for (std::size_t j = 0; j < m; ++j) {
            if (!detail::parse_double(fields[4 + j], e.features[j])) {
                throw DataError("line " + std::to_string(line_no) + ": malformed feature " + std::to_string(j + 1));
            }
        }
        events.push_back(std::move(e));
    }
    if (events.empty()) throw DataError("no events");
    if (schema.bipartite) {
        NodeId max_src = 0;
        for (const Event& e : events) max_src = std::max(max_src, e.src);
        for (Event& e : events) e.dst += max_src + 1;
    }
    return events;
}

inline EventStore load_events(const std::filesystem::path& path, const LoadSchema& schema = {}) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    return EventStore::build(parse_events(f, schema));
}

inline void write_events_csv(std::ostream& out, std::span<const Event> events) {
    const std::size_t m = events.empty() ? 0 : events.front().features.size();
    out << "src,dst,timestamp,state_label";
    for (std::size_t j = 0; j < m; ++j) out << ",f" << (j + 1);
    out << '\n';
    char buf[64];
    auto num = [&](double x) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
        out.write(buf, p - buf);
    };
    for (const Event& e : events) {
        out << e.src << ',' << e.dst << ',';
        num(e.time);
        out << ',';
        num(e.label);
        for (double x : e.features) {
            out << ',';
            num(x);
        }
        out << '\n';
    }
}

inline void write_events_csv(const std::filesystem::path& path, std::span<const Event> events) {
    std::ofstream f(path);
    if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
    write_events_csv(f, events);
    if (!f) throw DataError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Node features
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultOneHotCap = 20000;

inline EventStore with_one_hot_features(const EventStore& store, std::size_t cap = kDefaultOneHotCap) {
    if (store.node_count() > cap) {
        throw DataError("one-hot node features need " + std::to_string(store.node_count()) +
                        " dimensions (cap " + std::to_string(cap) + "); use landmark distances instead");
    }
    return store.with_node_features(NodeFeatures::one_hot(store.node_count()));
}

// Hop distances from every node to each landmark over the static undirected
// graph of all events. Unreachable pairs get node_count.
inline EventStore with_landmark_features(const EventStore& store, const std::vector<NodeId>& landmarks) {
    const std::size_t n = store.node_count(), m = landmarks.size();
    if (m == 0) throw std::invalid_argument("landmark features need at least one landmark");
    std::vector<double> rows(n * m, double(n));
    for (std::size_t j = 0; j < m; ++j) {
        store.check_node(landmarks[j]);
        std::vector<std::size_t> dist(n, std::numeric_limits<std::size_t>::max());
        std::queue<NodeId> q;
        dist[landmarks[j]] = 0;
        q.push(landmarks[j]);
        while (!q.empty()) {
            const NodeId u = q.front();
            q.pop();
            for (EventId e : store.incident(u)) {
                const Event& ev = store.event(e);
                const NodeId w = ev.src == u ? ev.dst : ev.src;
                if (dist[w] != std::numeric_limits<std::size_t>::max()) continue;
                dist[w] = dist[u] + 1;
                q.push(w);
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (dist[i] != std::numeric_limits<std::size_t>::max()) rows[i * m + j] = double(dist[i]);
    }
    return store.with_node_features(NodeFeatures::dense(n, m, std::move(rows)));
}

inline EventStore with_landmark_features(const EventStore& store, std::size_t m, std::uint64_t seed) {
    const std::size_t n = store.node_count();
    if (m == 0 || m > n) throw std::invalid_argument("landmark count must be in [1, node_count]");
    std::vector<NodeId> all(n);
    std::iota(all.begin(), all.end(), NodeId{0});
    std::mt19937_64 rng(seed);
    std::vector<NodeId> chosen;
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), m, rng);
    return with_landmark_features(store, chosen);
}

// ---------------------------------------------------------------------------
// Chronological split and negative sampling
// ---------------------------------------------------------------------------

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const noexcept { return end - begin; }
};

struct SplitRanges {
    IndexRange train, val, test;
};

inline SplitRanges split_chronological(const EventStore& store, double train_frac = 0.70, double val_frac = 0.15,
                                       double test_frac = 0.15) {
    if (!(train_frac > 0 && val_frac > 0 && test_frac > 0) ||
        std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw std::invalid_argument("split fractions must be positive and sum to 1");
    }
    const std::size_t e = store.edge_count();
    if (e < 3) throw DataError("need at least 3 events to split");
    const auto n_train = static_cast<std::size_t>(std::floor(train_frac * double(e) + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(val_frac * double(e) + 1e-9));
    SplitRanges s;
    s.train = {0, n_train};
    s.val = {n_train, n_train + n_val};
    s.test = {n_train + n_val, e};
    return s;
}

inline std::vector<Query> queries_from_events(const EventStore& store, IndexRange range) {
    std::vector<Query> out;
    out.reserve(range.size());
    for (std::size_t i = range.begin; i < range.end; ++i) {
        const Event& e = store.event(static_cast<EventId>(i));
        out.push_back({e.src, e.dst, e.time});
    }
    return out;
}

// `ratio` corruptions per positive: same src and time, dst drawn uniformly from
// all nodes other than the true dst. Output is grouped by positive.
template <class Rng>
std::vector<Query> sample_negatives(const EventStore& store, std::span<const Query> positives, std::size_t ratio,
                                    Rng& rng) {
    if (ratio < 1) throw std::invalid_argument("negative ratio must be >= 1");
    const std::size_t n = store.node_count();
    if (n < 2) throw DataError("negative sampling needs at least two nodes");
    std::uniform_int_distribution<std::size_t> pick(0, n - 2);
    std::vector<Query> out;
    out.reserve(positives.size() * ratio);
    for (const Query& p : positives) {
        for (std::size_t r = 0; r < ratio; ++r) {
            std::size_t d = pick(rng);
            if (d >= p.dst) ++d;
            out.push_back({p.src, static_cast<NodeId>(d), p.t0});
        }
    }
    return out;
}

}  // namespace sig
