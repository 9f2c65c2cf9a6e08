#pragma once

// Reverse-mode vs. central finite differences.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sig/autodiff.hpp"

namespace sig {

struct GradCheckReport {
    std::vector<double> max_rel_error;  // per input
    double worst = 0.0;
    bool passed = true;
    bool smooth = true;  // false when a probe crossed a discontinuity of the function
    std::vector<std::string> failures;
};

// Builds a scalar from its inputs on the given tape.
using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

// Relative error with an absolute floor so that vanishing gradients compare
// absolutely instead of amplifying round-off.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double evaluate_scalar(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.constant(x));
    return fn(tape, vars).value().item();
}

inline GradCheckReport grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs, double eps = 1e-4,
                                  double tol = 1e-3) {
    GradCheckReport report;
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const Tensor& x : inputs) vars.push_back(tape.variable(x));
    ad::Var out = fn(tape, vars);
    tape.backward(out);

    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = tape.grad(vars[i].id());
        double worst = 0.0;
        for (std::size_t j = 0; j < inputs[i].size(); ++j) {
            const double orig = probe[i][j];
            probe[i][j] = orig + eps;
            const double up = evaluate_scalar(fn, probe);
            probe[i][j] = orig - eps;
            const double down = evaluate_scalar(fn, probe);
            probe[i][j] = orig;
            const double numeric = (up - down) / (2.0 * eps);
            worst = std::max(worst, relative_error(analytic[j], numeric));
        }
        report.max_rel_error.push_back(worst);
        report.worst = std::max(report.worst, worst);
        if (!(worst < tol)) {
            report.passed = false;
            report.failures.push_back("input " + std::to_string(i) + ": max relative error " + std::to_string(worst));
        }
    }
    return report;
}

}  // namespace sig
