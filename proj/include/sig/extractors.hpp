#pragma once

// Temporal and structural causal-subgraph extraction for a query (u, v, t0).
//
// Temporal side: the N most recent edges of each endpoint are tokenised as
// [cos((t0 - t_k) w) | x^e], mixed by a one-layer MLP-mixer, scored against the
// other endpoint's summary query, and the top-k edges per side are pooled.
// Structural side: windowed n-hop neighbours are scored by raw embedding
// similarity and the top-k are averaged with the node's own features.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sig/autodiff.hpp"
#include "sig/graph_store.hpp"
#include "sig/params.hpp"
#include "sig/tensor.hpp"

namespace sig {

// ---------------------------------------------------------------------------
// Time encoding and edge tokens
// ---------------------------------------------------------------------------

struct TimeEncodingConfig {
    double alpha = 10.0;
    double beta = 10.0;
    std::size_t dim = 100;

    void validate() const {
        if (!(alpha > 1.0)) throw std::invalid_argument("time encoding: alpha must be > 1");
        if (!(beta > 0.0)) throw std::invalid_argument("time encoding: beta must be > 0");
        if (dim < 1) throw std::invalid_argument("time encoding: dim must be >= 1");
    }
};

inline std::vector<double> time_frequencies(const TimeEncodingConfig& cfg) {
    cfg.validate();
    std::vector<double> w(cfg.dim);
    for (std::size_t i = 0; i < cfg.dim; ++i) w[i] = std::pow(cfg.alpha, -double(i) / cfg.beta);
    return w;
}

inline std::vector<double> time_encode(double dt, const TimeEncodingConfig& cfg) {
    if (!std::isfinite(dt)) throw std::invalid_argument("time_encode: dt must be finite");
    std::vector<double> out = time_frequencies(cfg);
    for (double& w : out) w = std::cos(dt * w);
    return out;
}

// Zero-padded token block for one edge sequence.
struct TokenBlock {
    Tensor tokens;                    // len x (time_dim + feature_dim)
    std::vector<std::uint8_t> mask;   // len entries, 1 = live
};

inline std::size_t token_width(const EventStore& store, const TimeEncodingConfig& cfg) {
    return cfg.dim + store.feature_dim();
}

// Writes tokens for `seq` into rows [0, seq.size()) of `out` (row stride = width).
inline void write_edge_tokens(const EventStore& store, const EdgeSequence& seq, double t0,
                              std::span<const double> freqs, double* out) {
    const std::size_t d = freqs.size(), m = store.feature_dim(), w = d + m;
    for (std::size_t r = 0; r < seq.size(); ++r) {
        const Event& e = store.event(seq[r]);
        const double dt = t0 - e.time;
        double* row = out + r * w;
        for (std::size_t i = 0; i < d; ++i) row[i] = std::cos(dt * freqs[i]);
        std::copy(e.features.begin(), e.features.end(), row + d);
    }
}

inline TokenBlock edge_tokens(const EventStore& store, const EdgeSequence& seq, double t0,
                              const TimeEncodingConfig& cfg, std::size_t len) {
    if (len == 0) throw std::invalid_argument("edge_tokens: sequence length must be >= 1");
    if (seq.size() > len) throw DimensionError("edge_tokens: sequence longer than block length");
    const auto freqs = time_frequencies(cfg);
    TokenBlock b{Tensor::matrix(len, token_width(store, cfg)), std::vector<std::uint8_t>(len, 0)};
    write_edge_tokens(store, seq, t0, freqs, b.tokens.data());
    std::fill_n(b.mask.begin(), seq.size(), std::uint8_t{1});
    return b;
}

// ---------------------------------------------------------------------------
// MLP-mixer
// ---------------------------------------------------------------------------

struct MixerConfig {
    std::size_t in_dim = 0;
    std::size_t hidden = 100;
    std::size_t seq_len = 50;
    double token_expansion = 0.5;
    double channel_expansion = 4.0;

    std::size_t token_hidden() const {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(token_expansion * double(seq_len))));
    }
    std::size_t channel_hidden() const {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(channel_expansion * double(hidden))));
    }
};

inline void init_mixer(ParameterSet& p, const MixerConfig& c, std::mt19937_64& rng) {
    const std::size_t nt = c.token_hidden(), hc = c.channel_hidden();
    p.add("mixer.in_w", glorot(c.in_dim, c.hidden, rng));
    p.add("mixer.in_b", Tensor(Shape{c.hidden}, 0.0));
    p.add("mixer.tok_ln_g", Tensor(Shape{c.hidden}, 1.0));
    p.add("mixer.tok_ln_b", Tensor(Shape{c.hidden}, 0.0));
    p.add("mixer.tok_w1", glorot(c.seq_len, nt, rng));
    p.add("mixer.tok_b1", Tensor(Shape{nt}, 0.0));
    p.add("mixer.tok_w2", glorot(nt, c.seq_len, rng));
    p.add("mixer.tok_b2", Tensor(Shape{c.seq_len}, 0.0));
    p.add("mixer.ch_ln_g", Tensor(Shape{c.hidden}, 1.0));
    p.add("mixer.ch_ln_b", Tensor(Shape{c.hidden}, 0.0));
    p.add("mixer.ch_w1", glorot(c.hidden, hc, rng));
    p.add("mixer.ch_b1", Tensor(Shape{hc}, 0.0));
    p.add("mixer.ch_w2", glorot(hc, c.hidden, rng));
    p.add("mixer.ch_b2", Tensor(Shape{c.hidden}, 0.0));
}

namespace detail {

inline Tensor row_mask_tensor(const std::vector<std::uint8_t>& rows, std::size_t cols) {
    Tensor m = Tensor::matrix(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i]) std::fill_n(m.data() + i * cols, cols, 1.0);
    return m;
}

}  // namespace detail

// F0: (S*len) x in_dim stacked token blocks; mask: S*len presence flags.
// Returns (S*len) x hidden with padded rows exactly zero.
inline ad::Var mixer_forward(Binder& P, const ad::Var& f0, const std::vector<std::uint8_t>& mask,
                             const MixerConfig& c) {
    const std::size_t len = c.seq_len, h = c.hidden;
    if (f0.cols() != c.in_dim || f0.rows() % len != 0 || mask.size() != f0.rows()) {
        throw DimensionError("mixer_forward: tokens " + shape_str(f0.shape()) + " do not match config");
    }
    const Tensor m = detail::row_mask_tensor(mask, h);

    ad::Var x = ad::mul_const(ad::add_row(ad::matmul(f0, P("mixer.in_w")), P("mixer.in_b")), m);

    // Token mixing across the len positions of each sequence, per channel.
    ad::Var y = ad::layer_norm(x);
    y = ad::mul_const(ad::add_row(ad::mul_row(y, P("mixer.tok_ln_g")), P("mixer.tok_ln_b")), m);
    ad::Var yt = ad::block_transpose(y, len);
    ad::Var a = ad::gelu(ad::add_row(ad::matmul(yt, P("mixer.tok_w1")), P("mixer.tok_b1")));
    ad::Var b = ad::add_row(ad::matmul(a, P("mixer.tok_w2")), P("mixer.tok_b2"));
    x = ad::add(x, ad::mul_const(ad::block_transpose(b, h), m));

    // Channel mixing per position.
    ad::Var z = ad::layer_norm(x);
    z = ad::add_row(ad::mul_row(z, P("mixer.ch_ln_g")), P("mixer.ch_ln_b"));
    ad::Var u = ad::gelu(ad::add_row(ad::matmul(z, P("mixer.ch_w1")), P("mixer.ch_b1")));
    ad::Var v = ad::add_row(ad::matmul(u, P("mixer.ch_w2")), P("mixer.ch_b2"));
    return ad::add(x, ad::mul_const(v, m));
}

// ---------------------------------------------------------------------------
// Selection
// ---------------------------------------------------------------------------

// Top-min(k, live) live positions by descending score; ties go to the larger
// `recency` value, then to the lower position. Result is in rank order.
inline std::vector<std::size_t> select_top_k(std::span<const double> scores, std::span<const std::uint8_t> live,
                                             std::size_t k, std::span<const double> recency = {}) {
    if (k < 1) throw std::invalid_argument("top-k: k must be >= 1");
    if (!live.empty() && live.size() != scores.size()) throw DimensionError("top-k: mask size mismatch");
    if (!recency.empty() && recency.size() != scores.size()) throw DimensionError("top-k: recency size mismatch");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (live.empty() || live[i]) idx.push_back(i);
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        if (!recency.empty() && recency[a] != recency[b]) return recency[a] > recency[b];
        return a < b;
    };
    const std::size_t take = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + take, idx.end(), better);
    idx.resize(take);
    return idx;
}

// ---------------------------------------------------------------------------
// Temporal scoring and pooling over stacked sequences
// ---------------------------------------------------------------------------

inline void init_temporal(ParameterSet& p, std::size_t hidden, std::mt19937_64& rng) {
    p.add("temporal.wq", glorot(hidden, hidden, rng));
    p.add("temporal.wk", glorot(hidden, hidden, rng));
}

// Per-sequence mean over live rows as constant weights (S x len).
inline Tensor live_mean_weights(const std::vector<std::uint8_t>& mask, std::size_t len) {
    const std::size_t s = mask.size() / len;
    Tensor w = Tensor::matrix(s, len);
    for (std::size_t i = 0; i < s; ++i) {
        std::size_t live = 0;
        for (std::size_t n = 0; n < len; ++n) live += mask[i * len + n];
        if (live == 0) continue;
        for (std::size_t n = 0; n < len; ++n)
            if (mask[i * len + n]) w(i, n) = 1.0 / double(live);
    }
    return w;
}

inline std::vector<std::uint8_t> gather_masks(const std::vector<std::uint8_t>& mask, const std::vector<std::size_t>& block,
                                              std::size_t len) {
    std::vector<std::uint8_t> out(block.size() * len);
    for (std::size_t p = 0; p < block.size(); ++p)
        std::copy_n(mask.begin() + block[p] * len, len, out.begin() + p * len);
    return out;
}

struct TemporalScores {
    ad::Var m_u;  // P x len: scores of u's edges against v's query
    ad::Var m_v;  // P x len: scores of v's edges against u's query
};

// F: (S*len) x hidden mixed tokens. su/sv map each pair to its sequence block.
inline TemporalScores temporal_scores_batched(Binder& P, const ad::Var& F, const std::vector<std::uint8_t>& mask,
                                              const std::vector<std::size_t>& su, const std::vector<std::size_t>& sv,
                                              std::size_t len) {
    ad::Tape& t = P.tape();
    const std::size_t s = F.rows() / len;
    std::vector<std::size_t> all(s);
    std::iota(all.begin(), all.end(), std::size_t{0});
    ad::Var means = ad::block_weighted_sum(F, t.constant(live_mean_weights(mask, len)), all, len);
    ad::Var q = ad::matmul(means, P("temporal.wq"));
    ad::Var k = ad::matmul(F, P("temporal.wk"));
    const double inv = 1.0 / std::sqrt(double(F.cols()));
    ad::Var lv = ad::scale(ad::pair_logits(ad::gather_rows(q, su), k, sv, len), inv);
    ad::Var lu = ad::scale(ad::pair_logits(ad::gather_rows(q, sv), k, su, len), inv);
    return {ad::masked_softmax(lu, gather_masks(mask, su, len)), ad::masked_softmax(lv, gather_masks(mask, sv, len))};
}

// Single-pair form over separate token matrices (each len x hidden).
inline TemporalScores temporal_scores(Binder& P, const ad::Var& f_u, const ad::Var& f_v,
                                      const std::vector<std::uint8_t>& mask_u, const std::vector<std::uint8_t>& mask_v) {
    const std::size_t len = f_u.rows();
    if (f_v.rows() != len || mask_u.size() != len || mask_v.size() != len) {
        throw DimensionError("temporal_scores: sequence blocks differ in length");
    }
    const bool any = std::any_of(mask_u.begin(), mask_u.end(), [](auto b) { return b != 0; }) ||
                     std::any_of(mask_v.begin(), mask_v.end(), [](auto b) { return b != 0; });
    if (!any) throw std::invalid_argument("no temporal context");
    std::vector<std::uint8_t> mask(mask_u);
    mask.insert(mask.end(), mask_v.begin(), mask_v.end());
    return temporal_scores_batched(P, ad::concat({f_u, f_v}, 0), mask, {0}, {1}, len);
}

// Per-side selections as P x len 0/1 masks, chosen on score values.
inline std::vector<std::uint8_t> selection_mask(const Tensor& scores, const std::vector<std::uint8_t>& live,
                                                const std::vector<double>& recency, std::size_t k) {
    const std::size_t p = scores.rows(), len = scores.cols();
    std::vector<std::uint8_t> sel(p * len, 0);
    for (std::size_t i = 0; i < p; ++i) {
        std::span<const double> rec;
        if (!recency.empty()) rec = std::span<const double>(recency).subspan(i * len, len);
        const auto top = select_top_k(scores.row(i), std::span<const std::uint8_t>(live).subspan(i * len, len), k, rec);
        for (std::size_t j : top) sel[i * len + j] = 1;
    }
    return sel;
}

// H^T = [h_u | h_v]; h = selected F rows weighted by scores renormalised over
// the selection. A side with no selection contributes zeros.
inline ad::Var temporal_repr_batched(const ad::Var& F, const TemporalScores& sc, const std::vector<std::uint8_t>& sel_u,
                                     const std::vector<std::uint8_t>& sel_v, const std::vector<std::size_t>& su,
                                     const std::vector<std::size_t>& sv, std::size_t len) {
    ad::Var wu = ad::masked_renormalize(sc.m_u, sel_u);
    ad::Var wv = ad::masked_renormalize(sc.m_v, sel_v);
    return ad::concat({ad::block_weighted_sum(F, wu, su, len), ad::block_weighted_sum(F, wv, sv, len)}, 1);
}

// ---------------------------------------------------------------------------
// Structural side
// ---------------------------------------------------------------------------

struct StructuralConfig {
    double window = 1.0;  // T
    std::size_t hops = 1; // n
};

// z = x + mean of windowed n-hop neighbour features (zero mean if none).
inline SparseVec structural_embed(const EventStore& store, NodeId node, double t0, const StructuralConfig& c) {
    const auto& x = store.node_features();
    const auto nb = store.n_hop_neighbors(node, t0, c.window, c.hops);
    SparseAccumulator acc;
    acc.add(x.sparse(node), 1.0);
    for (NodeId i : nb) acc.add(x.sparse(i), 1.0 / double(nb.size()));
    return acc.finish();
}

// Neighbourhood of one endpoint with the embeddings of each neighbour.
struct StructuralSide {
    NodeId node = 0;
    SparseVec z;
    std::vector<NodeId> neighbors;
    std::vector<SparseVec> neighbor_z;
};

class StructuralCache {
public:
    StructuralCache(const EventStore& store, StructuralConfig cfg) : store_(store), cfg_(cfg) {}

    const SparseVec& embed(NodeId n, double t0) {
        auto key = std::make_pair(n, t0);
        auto it = z_.find(key);
        if (it != z_.end()) return it->second;
        return z_.emplace(key, structural_embed(store_, n, t0, cfg_)).first->second;
    }

    StructuralSide side(NodeId n, double t0) {
        StructuralSide s;
        s.node = n;
        s.z = embed(n, t0);
        s.neighbors = store_.n_hop_neighbors(n, t0, cfg_.window, cfg_.hops);
        for (NodeId i : s.neighbors) s.neighbor_z.push_back(embed(i, t0));
        return s;
    }

    const StructuralConfig& config() const noexcept { return cfg_; }

private:
    const EventStore& store_;
    StructuralConfig cfg_;
    std::map<std::pair<NodeId, double>, SparseVec> z_;
};

// softmax(q . Z_i / sqrt(dim)) over the rows of Z; empty Z gives an empty vector.
inline std::vector<double> neighbor_scores(const SparseVec& q, const std::vector<SparseVec>& Z, std::size_t dim) {
    if (Z.empty()) return {};
    std::vector<double> logits(Z.size());
    const double inv = 1.0 / std::sqrt(double(dim));
    for (std::size_t i = 0; i < Z.size(); ++i) logits[i] = q.dot(Z[i]) * inv;
    return softmax(std::span<const double>(logits));
}

// Dense single-pair form: z_u, z_v vectors of length D; Z_u, Z_v stacks of
// neighbour embeddings (rows). Returns (M^n_u, M^n_v).
inline std::pair<std::vector<double>, std::vector<double>> structural_scores(const std::vector<double>& z_u,
                                                                             const std::vector<double>& z_v,
                                                                             const std::vector<std::vector<double>>& Z_u,
                                                                             const std::vector<std::vector<double>>& Z_v) {
    if (Z_u.empty() && Z_v.empty()) throw std::invalid_argument("no structural context");
    if (z_u.size() != z_v.size()) throw DimensionError("structural_scores: z_u and z_v differ in width");
    const std::size_t d = z_u.size();
    auto side = [&](const std::vector<double>& q, const std::vector<std::vector<double>>& Z) {
        std::vector<double> logits;
        for (const auto& row : Z) {
            if (row.size() != d) throw DimensionError("structural_scores: neighbour width mismatch");
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += q[j] * row[j];
            logits.push_back(s / std::sqrt(double(d)));
        }
        return logits.empty() ? logits : softmax(std::span<const double>(logits));
    };
    return {side(z_v, Z_u), side(z_u, Z_v)};
}

// h^s = x_node + plain mean of the selected neighbours' features, dense.
inline std::vector<double> structural_repr(const NodeFeatures& x, NodeId node, std::span<const NodeId> selected) {
    std::vector<double> h(x.dim(), 0.0);
    x.sparse(node).add_to_dense(h);
    for (NodeId i : selected) x.sparse(i).add_to_dense(h, 1.0 / double(selected.size()));
    return h;
}

}  // namespace sig
