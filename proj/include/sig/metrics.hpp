#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sig {

struct RankingMetrics {
    double ap = 0.0;
    double auc = 0.0;
};

// AP: descending score, ties by lower index first; mean over positives of the
// precision at each positive's rank. AUC: P(random positive outranks random
// negative), ties counting one half.
inline RankingMetrics evaluate_ap_auc(const std::vector<double>& scores, const std::vector<double>& labels) {
    if (scores.size() != labels.size()) {
        throw std::invalid_argument("evaluate_ap_auc: " + std::to_string(scores.size()) + " scores vs " +
                                    std::to_string(labels.size()) + " labels");
    }
    std::size_t pos = 0;
    for (double y : labels) {
        if (y != 0.0 && y != 1.0) throw std::invalid_argument("evaluate_ap_auc: labels must be 0 or 1");
        pos += y == 1.0;
    }
    const std::size_t n = scores.size(), neg = n - pos;
    if (pos == 0 || neg == 0) throw std::invalid_argument("evaluate_ap_auc: need at least one positive and one negative");
    for (double s : scores)
        if (std::isnan(s)) throw std::invalid_argument("evaluate_ap_auc: NaN score");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RankingMetrics m;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[order[r]] == 1.0) {
            ++hits;
            m.ap += double(hits) / double(r + 1);
        }
    }
    m.ap /= double(pos);

    // Mann-Whitney with tie groups: each negative below a positive counts 1,
    // each tied negative counts 1/2.
    double wins = 0.0;
    std::size_t negs_below = neg;  // negatives with strictly smaller score than the current group
    for (std::size_t r = 0; r < n;) {
        std::size_t e = r;
        std::size_t gp = 0, gn = 0;
        while (e < n && scores[order[e]] == scores[order[r]]) {
            (labels[order[e]] == 1.0 ? gp : gn) += 1;
            ++e;
        }
        negs_below -= gn;
        wins += double(gp) * (double(negs_below) + 0.5 * double(gn));
        r = e;
    }
    m.auc = wins / (double(pos) * double(neg));
    return m;
}

}  // namespace sig
