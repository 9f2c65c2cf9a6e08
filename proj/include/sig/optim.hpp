#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sig/params.hpp"

namespace sig {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-6;
};

struct OptimizerState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    std::uint64_t step = 0;
};

inline OptimizerState make_optimizer_state(const ParameterSet& params) {
    OptimizerState s;
    for (std::size_t i = 0; i < params.size(); ++i) {
        s.first_moment.emplace_back(params.value(i).shape(), 0.0);
        s.second_moment.emplace_back(params.value(i).shape(), 0.0);
    }
    return s;
}

// One Adam update with bias correction. Weight decay is the coupled L2 form:
// decay * theta is added to the gradient before the moment updates.
inline void adam_step(ParameterSet& params, OptimizerState& state, const AdamConfig& cfg) {
    if (state.first_moment.size() != params.size()) state = make_optimizer_state(params);
    ++state.step;
    const double t = double(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params.value(i);
        const Tensor& g = params.grad(i);
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j] + cfg.weight_decay * w[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace sig
