#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sig/sig.hpp"

namespace sigtest {

using namespace sig;

inline Event ev(NodeId s, NodeId d, double t, std::vector<double> f = {}) {
    Event e;
    e.src = s;
    e.dst = d;
    e.time = t;
    e.features = std::move(f);
    return e;
}

// Random store with distinct event times and one-hot node features.
inline EventStore random_store(std::mt19937_64& rng, std::size_t nodes, std::size_t events, std::size_t fdim,
                               double horizon = 100.0) {
    std::uniform_int_distribution<NodeId> pick(0, NodeId(nodes - 1));
    std::normal_distribution<double> f(0.0, 1.0);
    std::vector<Event> out;
    for (std::size_t i = 0; i < events; ++i) {
        Event e;
        e.src = pick(rng);
        do e.dst = pick(rng);
        while (e.dst == e.src);
        e.time = horizon * (double(i) + 0.5) / double(events);
        for (std::size_t j = 0; j < fdim; ++j) e.features.push_back(f(rng));
        out.push_back(std::move(e));
    }
    std::shuffle(out.begin(), out.end(), rng);
    return with_one_hot_features(EventStore::build(std::move(out), nodes));
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("sig_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

inline double dense_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double dense_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Row vector x (length in) through a 2-layer GELU net stored as prefix.{w1,b1,w2,b2}.
inline std::vector<double> dense_net(const ParameterSet& p, const std::string& prefix, const std::vector<double>& x) {
    const Tensor& w1 = p.value(prefix + ".w1");
    const Tensor& b1 = p.value(prefix + ".b1");
    const Tensor& w2 = p.value(prefix + ".w2");
    const Tensor& b2 = p.value(prefix + ".b2");
    std::vector<double> a(w1.cols());
    for (std::size_t j = 0; j < w1.cols(); ++j) {
        double s = b1[j];
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w1(i, j);
        a[j] = dense_gelu(s);
    }
    std::vector<double> out(w2.cols());
    for (std::size_t j = 0; j < w2.cols(); ++j) {
        double s = b2[j];
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * w2(i, j);
        out[j] = s;
    }
    return out;
}

inline double dense_dot_col(const std::vector<double>& x, const Tensor& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w(i, 0);
    return s;
}

// alpha_i ∝ exp((D_i Wk) . (q Wq) / sqrt(|q|)); E = sum alpha_i D_i.
inline std::vector<double> dense_alpha(const std::vector<double>& q, const Tensor& D, const Tensor& key,
                                       const Tensor& query) {
    const std::size_t p = key.cols();
    std::vector<double> qp(p, 0.0);
    for (std::size_t j = 0; j < p; ++j)
        for (std::size_t i = 0; i < q.size(); ++i) qp[j] += q[i] * query(i, j);
    std::vector<double> logit(D.rows());
    for (std::size_t r = 0; r < D.rows(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            double kd = 0.0;
            for (std::size_t c = 0; c < D.cols(); ++c) kd += D(r, c) * key(c, j);
            s += kd * qp[j];
        }
        logit[r] = s / std::sqrt(double(q.size()));
    }
    double mx = logit[0];
    for (double l : logit) mx = std::max(mx, l);
    double z = 0.0;
    for (double& l : logit) z += (l = std::exp(l - mx));
    for (double& l : logit) l /= z;
    return logit;
}

inline std::vector<double> dense_expectation(const std::vector<double>& alpha, const Tensor& D) {
    std::vector<double> e(D.cols(), 0.0);
    for (std::size_t r = 0; r < D.rows(); ++r)
        for (std::size_t c = 0; c < D.cols(); ++c) e[c] += alpha[r] * D(r, c);
    return e;
}

inline std::vector<double> row_of(const Tensor& t, std::size_t r) {
    auto s = t.row(r);
    return {s.begin(), s.end()};
}

}  // namespace sigtest
