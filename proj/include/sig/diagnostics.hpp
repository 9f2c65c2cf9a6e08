#pragma once

// Gradient checks for every differentiable operation and for the full
// query -> loss composite, plus the inference throughput bench.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sig/autodiff.hpp"
#include "sig/gradcheck.hpp"
#include "sig/graph_store.hpp"
#include "sig/model.hpp"

namespace sig {

struct GradCase {
    ScalarFn fn;
    std::vector<Tensor> inputs;
};

struct OpCheck {
    std::string name;
    std::function<GradCase(std::mt19937_64&)> make;
};

namespace detail {

inline Tensor randn(Shape s, std::mt19937_64& rng, double sd = 1.0) {
    Tensor t(std::move(s), 0.0);
    std::normal_distribution<double> d(0.0, sd);
    for (double& x : t.values()) x = d(rng);
    return t;
}

inline Tensor randu(Shape s, std::mt19937_64& rng, double lo, double hi) {
    Tensor t(std::move(s), 0.0);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& x : t.values()) x = d(rng);
    return t;
}

inline std::size_t dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 4) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<std::uint8_t> rand_mask(std::size_t n, std::mt19937_64& rng, double p = 0.7) {
    std::vector<std::uint8_t> m(n);
    std::bernoulli_distribution b(p);
    for (auto& x : m) x = b(rng);
    return m;
}

// Random projection of an op output to a scalar so every output element
// carries a distinct upstream gradient.
inline ad::Var project(const ad::Var& out, const Tensor& w) { return ad::sum(ad::mul_const(out, w)); }

template <class F>
GradCase unary(Tensor x, std::mt19937_64& rng, F op) {
    ad::Tape probe;
    const Shape out_shape = op(probe.constant(x)).shape();
    const Tensor w = randn(out_shape, rng);
    return {[op, w](ad::Tape&, const std::vector<ad::Var>& v) { return project(op(v[0]), w); }, {std::move(x)}};
}

template <class F>
GradCase binary(Tensor a, Tensor b, std::mt19937_64& rng, F op) {
    ad::Tape probe;
    const Shape out_shape = op(probe.constant(a), probe.constant(b)).shape();
    const Tensor w = randn(out_shape, rng);
    return {[op, w](ad::Tape&, const std::vector<ad::Var>& v) { return project(op(v[0], v[1]), w); },
            {std::move(a), std::move(b)}};
}

}  // namespace detail

inline std::vector<OpCheck> registered_op_checks() {
    using namespace detail;
    using ad::Var;
    std::vector<OpCheck> c;
    c.push_back({"matmul", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), k = dim(g), n = dim(g);
                     return binary(randn({r, k}, g), randn({k, n}, g), g,
                                   [](const Var& a, const Var& b) { return ad::matmul(a, b); });
                 }});
    c.push_back({"transpose", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g), g, [](const Var& a) { return ad::transpose(a); });
                 }});
    c.push_back({"reshape", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), k = dim(g);
                     return unary(randn({r, k}, g), g, [r, k](const Var& a) { return ad::reshape(a, Shape{k * r}); });
                 }});
    c.push_back({"add", [](std::mt19937_64& g) {
                     const Shape s{dim(g), dim(g)};
                     return binary(randn(s, g), randn(s, g), g, [](const Var& a, const Var& b) { return ad::add(a, b); });
                 }});
    c.push_back({"sub", [](std::mt19937_64& g) {
                     const Shape s{dim(g), dim(g)};
                     return binary(randn(s, g), randn(s, g), g, [](const Var& a, const Var& b) { return ad::sub(a, b); });
                 }});
    c.push_back({"mul", [](std::mt19937_64& g) {
                     const Shape s{dim(g), dim(g)};
                     return binary(randn(s, g), randn(s, g), g, [](const Var& a, const Var& b) { return ad::mul(a, b); });
                 }});
    c.push_back({"mul_const", [](std::mt19937_64& g) {
                     const Shape s{dim(g), dim(g)};
                     const Tensor m = randn(s, g);
                     return unary(randn(s, g), g, [m](const Var& a) { return ad::mul_const(a, m); });
                 }});
    c.push_back({"scale", [](std::mt19937_64& g) {
                     const double s = std::normal_distribution<double>(0.0, 2.0)(g);
                     return unary(randn({dim(g), dim(g)}, g), g, [s](const Var& a) { return ad::scale(a, s); });
                 }});
    c.push_back({"add_row", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), k = dim(g);
                     return binary(randn({r, k}, g), randn({k}, g), g,
                                   [](const Var& a, const Var& b) { return ad::add_row(a, b); });
                 }});
    c.push_back({"mul_row", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), k = dim(g);
                     return binary(randn({r, k}, g), randn({k}, g), g,
                                   [](const Var& a, const Var& b) { return ad::mul_row(a, b); });
                 }});
    c.push_back({"sigmoid", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g, 2.0), g, [](const Var& a) { return ad::sigmoid(a); });
                 }});
    c.push_back({"gelu", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g, 2.0), g, [](const Var& a) { return ad::gelu(a); });
                 }});
    c.push_back({"concat_rows", [](std::mt19937_64& g) {
                     const std::size_t k = dim(g);
                     return binary(randn({dim(g), k}, g), randn({dim(g), k}, g), g,
                                   [](const Var& a, const Var& b) { return ad::concat({a, b}, 0); });
                 }});
    c.push_back({"concat_cols", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g);
                     return binary(randn({r, dim(g)}, g), randn({r, dim(g)}, g), g,
                                   [](const Var& a, const Var& b) { return ad::concat({a, b}, 1); });
                 }});
    c.push_back({"sum", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g), g, [](const Var& a) { return ad::sum(a); });
                 }});
    c.push_back({"mean_rows", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g), g, [](const Var& a) { return ad::mean(a, 0); });
                 }});
    c.push_back({"mean_cols", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g), g, [](const Var& a) { return ad::mean(a, 1); });
                 }});
    c.push_back({"layer_norm", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g, 2, 5)}, g), g, [](const Var& a) { return ad::layer_norm(a); });
                 }});
    c.push_back({"masked_softmax", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), k = dim(g, 1, 5);
                     const auto m = rand_mask(r * k, g);
                     return unary(randn({r, k}, g, 2.0), g, [m](const Var& a) { return ad::masked_softmax(a, m); });
                 }});
    c.push_back({"softmax_axis0", [](std::mt19937_64& g) {
                     return unary(randn({dim(g), dim(g)}, g, 2.0), g, [](const Var& a) { return ad::softmax(a, 0); });
                 }});
    c.push_back({"masked_renormalize", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), k = dim(g, 1, 5);
                     const auto m = rand_mask(r * k, g);
                     return unary(randu({r, k}, g, 0.1, 1.0), g,
                                  [m](const Var& a) { return ad::masked_renormalize(a, m); });
                 }});
    c.push_back({"binary_cross_entropy", [](std::mt19937_64& g) {
                     const Shape s{dim(g), dim(g)};
                     std::vector<double> y(shape_size(s));
                     std::bernoulli_distribution b(0.5);
                     for (double& v : y) v = b(g) ? 1.0 : 0.0;
                     Tensor p = randu(s, g, 0.05, 0.95);
                     return GradCase{[y](ad::Tape&, const std::vector<Var>& v) { return ad::binary_cross_entropy(v[0], y); },
                                     {std::move(p)}};
                 }});
    c.push_back({"block_transpose", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g), blocks = dim(g, 1, 3);
                     return unary(randn({r * blocks, dim(g)}, g), g, [r](const Var& a) { return ad::block_transpose(a, r); });
                 }});
    c.push_back({"gather_rows", [](std::mt19937_64& g) {
                     const std::size_t r = dim(g);
                     std::vector<std::size_t> idx(dim(g, 1, 6));
                     for (auto& i : idx) i = std::uniform_int_distribution<std::size_t>(0, r - 1)(g);
                     return unary(randn({r, dim(g)}, g), g, [idx](const Var& a) { return ad::gather_rows(a, idx); });
                 }});
    c.push_back({"block_weighted_sum", [](std::mt19937_64& g) {
                     const std::size_t len = dim(g), blocks = dim(g, 1, 3), p = dim(g);
                     std::vector<std::size_t> blk(p);
                     for (auto& b : blk) b = std::uniform_int_distribution<std::size_t>(0, blocks - 1)(g);
                     return binary(randn({blocks * len, dim(g)}, g), randn({p, len}, g), g,
                                   [blk, len](const Var& x, const Var& w) { return ad::block_weighted_sum(x, w, blk, len); });
                 }});
    c.push_back({"pair_logits", [](std::mt19937_64& g) {
                     const std::size_t len = dim(g), blocks = dim(g, 1, 3), p = dim(g), h = dim(g);
                     std::vector<std::size_t> blk(p);
                     for (auto& b : blk) b = std::uniform_int_distribution<std::size_t>(0, blocks - 1)(g);
                     return binary(randn({p, h}, g), randn({blocks * len, h}, g), g,
                                   [blk, len](const Var& q, const Var& k) { return ad::pair_logits(q, k, blk, len); });
                 }});
    return c;
}

// ---------------------------------------------------------------------------
// Full composite
// ---------------------------------------------------------------------------

struct CompositeCase {
    EventStore store;
    SigModel model;
    std::vector<Query> queries;
    std::vector<double> labels;
};

// A small random graph, model and labelled batch; the model carries a random
// dictionary so that all three heads contribute to the loss.
inline CompositeCase random_composite_case(std::mt19937_64& rng) {
    const std::size_t nodes = detail::dim(rng, 4, 7), edge_dim = detail::dim(rng, 1, 3);
    std::vector<Event> ev;
    std::uniform_int_distribution<NodeId> pick(0, NodeId(nodes - 1));
    std::uniform_real_distribution<double> when(0.0, 100.0);
    std::normal_distribution<double> f(0.0, 1.0);
    for (std::size_t i = 0; i < 4 * nodes; ++i) {
        Event e;
        e.src = pick(rng);
        do e.dst = pick(rng);
        while (e.dst == e.src);
        e.time = when(rng);
        for (std::size_t j = 0; j < edge_dim; ++j) e.features.push_back(f(rng));
        ev.push_back(std::move(e));
    }
    CompositeCase c;
    c.store = with_one_hot_features(EventStore::build(std::move(ev), nodes));
    SigConfig cfg;
    cfg.recent_n = 4;
    cfg.hidden = 5;
    cfg.k_select = 2;
    cfg.k_confounders = 2;
    cfg.time.dim = 2;
    cfg.window = 30.0;
    c.model = SigModel(cfg, edge_dim, nodes, rng());
    ConfounderDictionary d;
    d.centroids = detail::randn({cfg.k_confounders, c.model.link_width()}, rng, 0.5);
    d.sizes.assign(cfg.k_confounders, 1);
    c.model.dictionary = d;
    std::uniform_real_distribution<double> late(60.0, 110.0);
    for (std::size_t i = 0; i < 3; ++i) {
        Query q{pick(rng), pick(rng), late(rng)};
        while (q.dst == q.src) q.dst = pick(rng);
        c.queries.push_back(q);
        c.labels.push_back(double(i % 2 == 0));
    }
    return c;
}

// Loss value and the temporal selection it was computed under.
inline double composite_loss(CompositeCase& c, std::vector<std::uint8_t>* selection = nullptr) {
    ad::Tape t;
    ForwardOptions o;
    o.interventional = true;
    o.trace = selection != nullptr;
    const ForwardResult fr = c.model.forward(t, c.store, c.queries, o);
    if (selection) {
        selection->clear();
        for (const QueryTrace& tr : fr.traces) {
            selection->insert(selection->end(), tr.sel_u.begin(), tr.sel_u.end());
            selection->insert(selection->end(), tr.sel_v.begin(), tr.sel_v.end());
        }
    }
    return total_loss(fr, c.labels, c.model.config().lambda).value().item();
}

// Reverse-mode parameter gradients of the total loss against central
// differences, over every scalar parameter. Top-k selection makes the loss
// piecewise smooth; a probe that changes the selected set marks the report
// as not smooth instead of comparing across the jump.
inline GradCheckReport composite_grad_check(CompositeCase& c, double eps = 1e-4, double tol = 1e-3) {
    ParameterSet& p = c.model.params();
    p.zero_grad();
    std::vector<std::uint8_t> base, probe;
    {
        ad::Tape t;
        ForwardOptions o;
        o.trainable = true;
        o.interventional = true;
        o.trace = true;
        const ForwardResult fr = c.model.forward(t, c.store, c.queries, o);
        for (const QueryTrace& tr : fr.traces) {
            base.insert(base.end(), tr.sel_u.begin(), tr.sel_u.end());
            base.insert(base.end(), tr.sel_v.begin(), tr.sel_v.end());
        }
        t.backward(total_loss(fr, c.labels, c.model.config().lambda));
    }
    GradCheckReport report;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Tensor analytic = p.grad(i);
        double worst = 0.0;
        for (std::size_t j = 0; j < analytic.size(); ++j) {
            double& x = p.value(i)[j];
            const double orig = x;
            x = orig + eps;
            const double up = composite_loss(c, &probe);
            report.smooth = report.smooth && probe == base;
            x = orig - eps;
            const double down = composite_loss(c, &probe);
            report.smooth = report.smooth && probe == base;
            x = orig;
            worst = std::max(worst, relative_error(analytic[j], (up - down) / (2.0 * eps)));
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
        if (!(worst < tol)) {
            report.passed = false;
            report.failures.push_back(p.names()[i] + ": max relative error " + std::to_string(worst));
        }
    }
    return report;
}

struct GradSuiteEntry {
    std::string name;
    std::size_t instances = 0;
    std::size_t failed = 0;
    std::size_t redrawn = 0;  // instances discarded because a probe crossed a selection boundary
    double worst = 0.0;
    std::string first_failure;
};

// `instances` random cases per operation, then for the composite.
inline std::vector<GradSuiteEntry> run_gradcheck_suite(std::size_t instances, std::uint64_t seed, double eps = 1e-4,
                                                       double tol = 1e-3) {
    std::vector<GradSuiteEntry> out;
    std::mt19937_64 rng(seed);
    auto tally = [&](GradSuiteEntry& e, const GradCheckReport& r) {
        ++e.instances;
        e.worst = std::max(e.worst, r.worst);
        if (!r.passed) {
            if (e.failed++ == 0) e.first_failure = r.failures.front();
        }
    };
    for (const OpCheck& op : registered_op_checks()) {
        GradSuiteEntry e{op.name, 0, 0, 0, 0.0, {}};
        for (std::size_t i = 0; i < instances; ++i) {
            const GradCase gc = op.make(rng);
            tally(e, grad_check(gc.fn, gc.inputs, eps, tol));
        }
        out.push_back(e);
    }
    GradSuiteEntry e{"query_to_loss", 0, 0, 0, 0.0, {}};
    while (e.instances < instances) {
        CompositeCase c = random_composite_case(rng);
        const GradCheckReport r = composite_grad_check(c, eps, tol);
        if (!r.smooth) {
            if (++e.redrawn > 10 * instances) throw std::runtime_error("gradcheck: too many non-smooth instances");
            continue;
        }
        tally(e, r);
    }
    out.push_back(e);
    return out;
}

// ---------------------------------------------------------------------------
// Throughput
// ---------------------------------------------------------------------------

struct BenchPoint {
    std::size_t n = 0;
    double per_edge_us = 0.0;
};

struct BenchResult {
    std::vector<BenchPoint> points;
    double intercept = 0.0;
    double slope = 0.0;
    double r2 = 0.0;
};

// Least squares y = a + b x and its coefficient of determination.
inline void affine_fit(std::span<const double> x, std::span<const double> y, double& a, double& b, double& r2) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("affine_fit: need >= 2 paired points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(n);
    my /= double(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("affine_fit: x values are all equal");
    b = sxy / sxx;
    a = my - b * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < n; ++i) ss_res += (y[i] - a - b * x[i]) * (y[i] - a - b * x[i]);
    r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
}

// Per-query inference latency of y^I for each history length N (best of
// `repeats` timed passes), and the affine fit of latency on N.
inline BenchResult bench_throughput(const EventStore& store, std::span<const Query> queries,
                                    const std::vector<std::size_t>& ns, SigConfig base, std::size_t repeats = 3,
                                    std::uint64_t seed = 1, std::size_t batch = 200) {
    if (queries.empty()) throw std::invalid_argument("bench: no queries");
    if (base.window <= 0) base.window = auto_window(store);
    BenchResult res;
    std::vector<double> xs, ys;
    for (std::size_t n : ns) {
        SigConfig c = base;
        c.recent_n = n;
        SigModel m(c, store.feature_dim(), store.node_features().dim(), seed);
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto y = predict(m, store, queries, batch);
            (void)y;
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            best = std::min(best, s);
        }
        res.points.push_back({n, 1e6 * best / double(queries.size())});
        xs.push_back(double(n));
        ys.push_back(res.points.back().per_edge_us);
    }
    if (xs.size() >= 2) affine_fit(xs, ys, res.intercept, res.slope, res.r2);
    return res;
}

}  // namespace sig
