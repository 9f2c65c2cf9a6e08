#pragma once

// Confounder dictionary: centroids of link embeddings, and the attention
// expectation E = sum_i alpha_i D[i] consumed by the interventional heads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sig/autodiff.hpp"
#include "sig/params.hpp"
#include "sig/tensor.hpp"

namespace sig {

struct ClusterResult {
    std::vector<std::size_t> assignment;  // row -> cluster
    Tensor centroids;                     // k x l
    std::vector<double> objective;        // after seeding, then after each iteration
    std::size_t iterations = 0;
};

struct ConfounderDictionary {
    Tensor centroids;                  // k x l
    std::vector<std::size_t> sizes;

    std::size_t k() const { return centroids.rows(); }
    std::size_t width() const { return centroids.cols(); }
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double d = a[j] - b[j];
        s += d * d;
    }
    return s;
}

inline void recompute_centroids(const Tensor& X, const std::vector<std::size_t>& assign, Tensor& C,
                                std::vector<std::size_t>& sizes) {
    const std::size_t k = C.rows(), l = X.cols();
    C.fill(0.0);
    sizes.assign(k, 0);
    for (std::size_t i = 0; i < X.rows(); ++i) {
        ++sizes[assign[i]];
        ad::detail::axpy(1.0, X.row(i), C.row(assign[i]));
    }
    for (std::size_t c = 0; c < k; ++c)
        if (sizes[c] > 0)
            for (std::size_t j = 0; j < l; ++j) C(c, j) /= double(sizes[c]);
}

inline double objective(const Tensor& X, const std::vector<std::size_t>& assign, const Tensor& C) {
    double s = 0.0;
    for (std::size_t i = 0; i < X.rows(); ++i) s += sq_dist(X.row(i).data(), C.row(assign[i]).data(), X.cols());
    return s;
}

// Nearest centroid; ties go to the lower index.
inline bool assign_nearest(const Tensor& X, const Tensor& C, std::vector<std::size_t>& assign) {
    bool changed = false;
    for (std::size_t i = 0; i < X.rows(); ++i) {
        std::size_t best = 0;
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < C.rows(); ++c) {
            const double d = sq_dist(X.row(i).data(), C.row(c).data(), X.cols());
            if (d < bd) {
                bd = d;
                best = c;
            }
        }
        if (assign[i] != best) {
            assign[i] = best;
            changed = true;
        }
    }
    return changed;
}

// Moves the point farthest from its centroid in the largest cluster into each
// empty cluster.
inline void repair_empty(const Tensor& X, std::vector<std::size_t>& assign, Tensor& C, std::vector<std::size_t>& sizes) {
    for (std::size_t c = 0; c < C.rows(); ++c) {
        if (sizes[c] > 0) continue;
        const std::size_t big = std::max_element(sizes.begin(), sizes.end()) - sizes.begin();
        std::size_t far = 0;
        double fd = -1.0;
        for (std::size_t i = 0; i < X.rows(); ++i) {
            if (assign[i] != big) continue;
            const double d = sq_dist(X.row(i).data(), C.row(big).data(), X.cols());
            if (d > fd) {
                fd = d;
                far = i;
            }
        }
        assign[far] = c;
        recompute_centroids(X, assign, C, sizes);
    }
}

}  // namespace detail

// k-means with k-means++ seeding and Lloyd iterations until the assignment
// stops changing or max_iters is reached.
inline ClusterResult kmeans(const Tensor& X, std::size_t k, std::size_t max_iters, std::uint64_t seed) {
    const std::size_t n = X.rows(), l = X.cols();
    if (k < 1) throw std::invalid_argument("cluster: k must be >= 1");
    if (k > n) {
        throw std::invalid_argument("cluster: k=" + std::to_string(k) + " exceeds row count " + std::to_string(n));
    }
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> centers;
    std::vector<std::uint8_t> taken(n, 0);
    centers.push_back(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    taken[centers[0]] = 1;
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        const double* last = X.row(centers.back()).data();
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = std::min(d2[i], detail::sq_dist(X.row(i).data(), last, l));
            if (!taken[i]) total += d2[i];
        }
        std::size_t pick = n;
        if (total > 0.0) {
            double r = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i] || d2[i] == 0.0) continue;
                pick = i;
                r -= d2[i];
                if (r <= 0.0) break;
            }
        }
        if (pick == n) {
            // All remaining points coincide with a centre: take any unused row.
            std::vector<std::size_t> free;
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i]) free.push_back(i);
            pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        }
        taken[pick] = 1;
        centers.push_back(pick);
    }

    ClusterResult res;
    res.centroids = Tensor::matrix(k, l);
    for (std::size_t c = 0; c < k; ++c) std::copy_n(X.row(centers[c]).data(), l, res.centroids.row(c).data());
    res.assignment.assign(n, 0);
    detail::assign_nearest(X, res.centroids, res.assignment);
    std::vector<std::size_t> sizes;
    detail::recompute_centroids(X, res.assignment, res.centroids, sizes);
    detail::repair_empty(X, res.assignment, res.centroids, sizes);
    res.objective.push_back(detail::objective(X, res.assignment, res.centroids));
    for (std::size_t it = 0; it < max_iters; ++it) {
        const bool changed = detail::assign_nearest(X, res.centroids, res.assignment);
        ++res.iterations;
        if (!changed) break;
        detail::recompute_centroids(X, res.assignment, res.centroids, sizes);
        detail::repair_empty(X, res.assignment, res.centroids, sizes);
        res.objective.push_back(detail::objective(X, res.assignment, res.centroids));
    }
    return res;
}

// Row c = mean of the rows assigned to c.
inline ConfounderDictionary build_dictionary(const std::vector<std::size_t>& assignment, const Tensor& X, std::size_t k) {
    if (assignment.size() != X.rows()) throw DimensionError("build_dictionary: assignment length differs from rows");
    for (std::size_t a : assignment)
        if (a >= k) throw std::invalid_argument("build_dictionary: cluster index out of range");
    ConfounderDictionary d;
    d.centroids = Tensor::matrix(k, X.cols());
    detail::recompute_centroids(X, assignment, d.centroids, d.sizes);
    for (std::size_t s : d.sizes)
        if (s == 0) throw std::invalid_argument("build_dictionary: empty cluster");
    return d;
}

// ---------------------------------------------------------------------------
// Attention expectation
// ---------------------------------------------------------------------------

// Projection weights for one head: key maps dictionary rows (l -> p), query
// maps the representation q (|q| -> p).
inline void init_confounder_attention(ParameterSet& p, const std::string& prefix, std::size_t width,
                                      std::size_t q_dim, std::size_t proj, std::mt19937_64& rng) {
    p.add(prefix + ".key", glorot(width, proj, rng));
    p.add(prefix + ".query", glorot(q_dim, proj, rng));
}

struct ConfounderAttention {
    ad::Var alpha;  // P x k
    ad::Var expectation;  // P x l
};

// alpha = softmax((D Wk)(q Wq)^T / sqrt(|q|)) per row of Q; E = alpha D.
inline ConfounderAttention confounder_expectation(Binder& P, const ad::Var& Q, const Tensor& dictionary,
                                                  const std::string& prefix) {
    ad::Tape& t = P.tape();
    ad::Var key = P(prefix + ".key");
    ad::Var query = P(prefix + ".query");
    if (Q.cols() != query.rows() || dictionary.cols() != key.rows()) {
        throw DimensionError("confounder_expectation: q " + shape_str(Q.shape()) + " / dictionary " +
                             shape_str(dictionary.shape()) + " vs projections " + shape_str(query.shape()) + ", " +
                             shape_str(key.shape()));
    }
    ad::Var d = t.constant(dictionary);
    ad::Var logits = ad::matmul(ad::matmul(Q, query), ad::transpose(ad::matmul(d, key)));
    ad::Var alpha = ad::softmax(ad::scale(logits, 1.0 / std::sqrt(double(Q.cols()))), 1);
    return {alpha, ad::matmul(alpha, d)};
}

// Value form for a single representation q (length |q|).
inline std::vector<double> confounder_expectation(const std::vector<double>& q, const Tensor& dictionary,
                                                  const Tensor& key, const Tensor& query) {
    if (q.size() != query.rows() || dictionary.cols() != key.rows() || key.cols() != query.cols()) {
        throw DimensionError("confounder_expectation: dimension mismatch (|q|=" + std::to_string(q.size()) +
                             ", dictionary " + shape_str(dictionary.shape()) + ", key " + shape_str(key.shape()) +
                             ", query " + shape_str(query.shape()) + ")");
    }
    ParameterSet ps;
    ps.add("c.key", key);
    ps.add("c.query", query);
    ad::Tape t;
    Binder b(t, ps, false);
    const auto att = confounder_expectation(b, t.constant(Tensor(Shape{1, q.size()}, q)), dictionary, "c");
    const auto& e = att.expectation.value().values();
    return {e.begin(), e.end()};
}

}  // namespace sig
