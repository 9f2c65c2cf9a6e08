#pragma once

// The SIG link predictor: extractors feeding three prediction heads.
//
//   y^I = sigmoid(W^I_1 f^{I_S}(H^S) + W^I_2 f^{I_T}(H^T))
//   y^S = sigmoid(W^c_1 f^s(H^S) + W^c_3 E_d[H^S])
//   y^T = sigmoid(W^c_2 f^t(H^T) + W^c_4 E_d[H^T])
//
// E_d[q] is the attention expectation over the frozen confounder dictionary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "sig/autodiff.hpp"
#include "sig/confounders.hpp"
#include "sig/extractors.hpp"
#include "sig/graph_store.hpp"
#include "sig/params.hpp"

namespace sig {

struct LossWeights {
    double iid = 1.0;
    double temporal = 0.5;
    double structural = 0.5;

    void validate() const {
        if (iid < 0 || temporal < 0 || structural < 0) throw std::invalid_argument("loss weights must be >= 0");
        if (iid + temporal + structural <= 0) throw std::invalid_argument("loss weights must not all be zero");
    }
    bool interventional() const noexcept { return temporal > 0 || structural > 0; }
};

struct SigConfig {
    std::size_t recent_n = 50;       // N
    std::size_t hidden = 100;
    std::size_t hops = 1;            // n
    double window = 0.0;             // T; 0 = (last - first event time) / 100
    std::size_t k_select = 20;
    std::size_t k_confounders = 10;
    TimeEncodingConfig time;
    double token_expansion = 0.5;
    double channel_expansion = 4.0;
    LossWeights lambda;

    void validate() const {
        if (recent_n < 1 || hidden < 1 || hops < 1 || k_select < 1 || k_confounders < 1) {
            throw std::invalid_argument("model config: sizes must be >= 1");
        }
        if (window < 0) throw std::invalid_argument("model config: window must be >= 0");
        if (!(token_expansion > 0) || !(channel_expansion > 0)) {
            throw std::invalid_argument("model config: expansion factors must be > 0");
        }
        time.validate();
        lambda.validate();
    }
};

inline double auto_window(const EventStore& store) {
    const double span = store.max_time() - store.min_time();
    return span > 0 ? span / 100.0 : 1.0;
}

// Per-query extraction details kept for explanations.
struct QueryTrace {
    EdgeSequence seq_u, seq_v;
    std::vector<double> score_u, score_v;      // M^e over live positions
    std::vector<std::uint8_t> sel_u, sel_v;    // selected positions
    std::vector<NodeId> nb_u, nb_v;            // windowed neighbours
    std::vector<double> nscore_u, nscore_v;    // M^n
    std::vector<std::uint8_t> nsel_u, nsel_v;
};

struct ForwardOptions {
    bool trainable = false;
    bool interventional = false;  // also evaluate y^S and y^T
    bool trace = false;
    // Per query, sorted event ids hidden from the extractors.
    const std::vector<std::vector<EventId>>* removed = nullptr;
};

struct ForwardResult {
    ad::Var y_i, y_s, y_t;  // P x 1
    ad::Var h_s, h_t;       // P x 2D, P x 2*hidden
    std::vector<QueryTrace> traces;
};

class SigModel {
public:
    SigModel() = default;

    SigModel(SigConfig cfg, std::size_t edge_feature_dim, std::size_t node_feature_dim, std::uint64_t seed)
        : cfg_(std::move(cfg)), edge_dim_(edge_feature_dim), node_dim_(node_feature_dim) {
        cfg_.validate();
        if (node_dim_ < 1) throw std::invalid_argument("model: node feature dim must be >= 1");
        std::mt19937_64 rng(seed);
        const std::size_t h = cfg_.hidden, hs = 2 * node_dim_, ht = 2 * h;
        init_mixer(params_, mixer_config(), rng);
        init_temporal(params_, h, rng);
        init_net(params_, "head.iid_s", hs, h, rng);
        init_net(params_, "head.iid_t", ht, h, rng);
        params_.add("head.iid.w_s", glorot(h, 1, rng));
        params_.add("head.iid.w_t", glorot(h, 1, rng));
        init_net(params_, "head.s", hs, h, rng);
        params_.add("head.s.w_rep", glorot(h, 1, rng));
        params_.add("head.s.w_conf", glorot(link_width(), 1, rng));
        init_net(params_, "head.t", ht, h, rng);
        params_.add("head.t.w_rep", glorot(h, 1, rng));
        params_.add("head.t.w_conf", glorot(link_width(), 1, rng));
        init_confounder_attention(params_, "confounder.s", link_width(), hs, h, rng);
        init_confounder_attention(params_, "confounder.t", link_width(), ht, h, rng);
    }

    const SigConfig& config() const noexcept { return cfg_; }
    SigConfig& config() noexcept { return cfg_; }
    ParameterSet& params() noexcept { return params_; }
    const ParameterSet& params() const noexcept { return params_; }
    std::size_t edge_feature_dim() const noexcept { return edge_dim_; }
    std::size_t node_feature_dim() const noexcept { return node_dim_; }
    // l = |H^S| + |H^T|
    std::size_t link_width() const noexcept { return 2 * node_dim_ + 2 * cfg_.hidden; }

    std::optional<ConfounderDictionary> dictionary;

    MixerConfig mixer_config() const {
        return {cfg_.time.dim + edge_dim_, cfg_.hidden, cfg_.recent_n, cfg_.token_expansion, cfg_.channel_expansion};
    }

    ForwardResult forward(ad::Tape& tape, const EventStore& store, std::span<const Query> queries,
                          const ForwardOptions& opt) {
        if (queries.empty()) throw std::invalid_argument("forward: empty query batch");
        if (store.feature_dim() != edge_dim_ || store.node_features().dim() != node_dim_) {
            throw DimensionError("forward: store feature widths differ from the model's");
        }
        if (opt.removed && opt.removed->size() != queries.size()) {
            throw DimensionError("forward: one removal list per query required");
        }
        if (opt.interventional && !dictionary) throw std::logic_error("forward: no confounder dictionary built");
        Binder P(tape, params_, opt.trainable);
        const std::size_t len = cfg_.recent_n, np = queries.size();
        const double window = cfg_.window > 0 ? cfg_.window : auto_window(store);

        // Distinct sequences, shared between queries with the same (node, t0).
        std::vector<EdgeSequence> seqs;
        std::vector<double> seq_t0;
        std::map<std::tuple<NodeId, double, std::size_t>, std::size_t> seen;
        std::vector<std::size_t> su(np), sv(np);
        auto sequence_of = [&](std::size_t qi, NodeId node, double t0) {
            const std::size_t owner = opt.removed ? qi : 0;
            auto key = std::make_tuple(node, t0, owner);
            auto it = seen.find(key);
            if (it != seen.end()) return it->second;
            EdgeSequence s = store.recent_edges(node, t0, len);
            if (opt.removed) {
                const auto& rm = (*opt.removed)[qi];
                std::erase_if(s, [&](EventId e) { return std::binary_search(rm.begin(), rm.end(), e); });
            }
            seqs.push_back(std::move(s));
            seq_t0.push_back(t0);
            seen.emplace(key, seqs.size() - 1);
            return seqs.size() - 1;
        };
        for (std::size_t i = 0; i < np; ++i) {
            store.check_node(queries[i].src);
            store.check_node(queries[i].dst);
            su[i] = sequence_of(i, queries[i].src, queries[i].t0);
            sv[i] = sequence_of(i, queries[i].dst, queries[i].t0);
        }

        // Tokens and mixer.
        const MixerConfig mc = mixer_config();
        const auto freqs = time_frequencies(cfg_.time);
        Tensor f0 = Tensor::matrix(seqs.size() * len, mc.in_dim);
        std::vector<std::uint8_t> mask(seqs.size() * len, 0);
        std::vector<double> recency(seqs.size() * len, -std::numeric_limits<double>::infinity());
        for (std::size_t s = 0; s < seqs.size(); ++s) {
            write_edge_tokens(store, seqs[s], seq_t0[s], freqs, f0.data() + s * len * mc.in_dim);
            for (std::size_t r = 0; r < seqs[s].size(); ++r) {
                mask[s * len + r] = 1;
                recency[s * len + r] = store.event(seqs[s][r]).time;
            }
        }
        ad::Var F = mixer_forward(P, tape.constant(std::move(f0)), mask, mc);

        // Temporal scores, selection, pooling.
        TemporalScores sc = temporal_scores_batched(P, F, mask, su, sv, len);
        const auto live_u = gather_masks(mask, su, len), live_v = gather_masks(mask, sv, len);
        auto rec_of = [&](const std::vector<std::size_t>& blk) {
            std::vector<double> r(blk.size() * len);
            for (std::size_t p = 0; p < blk.size(); ++p)
                std::copy_n(recency.begin() + blk[p] * len, len, r.begin() + p * len);
            return r;
        };
        const auto sel_u = selection_mask(sc.m_u.value(), live_u, rec_of(su), cfg_.k_select);
        const auto sel_v = selection_mask(sc.m_v.value(), live_v, rec_of(sv), cfg_.k_select);
        ForwardResult out;
        out.h_t = temporal_repr_batched(F, sc, sel_u, sel_v, su, sv, len);

        // Structural side (no learnable parameters).
        const NodeFeatures& x = store.node_features();
        const std::size_t d = node_dim_;
        StructuralCache cache(store, {window, cfg_.hops});
        Tensor hs = Tensor::matrix(np, 2 * d);
        if (opt.trace) out.traces.resize(np);
        for (std::size_t i = 0; i < np; ++i) {
            const Query& q = queries[i];
            StructuralSide a = cache.side(q.src, q.t0), b = cache.side(q.dst, q.t0);
            const auto mu = neighbor_scores(b.z, a.neighbor_z, d);
            const auto mv = neighbor_scores(a.z, b.neighbor_z, d);
            const auto top_u = select_top_k(mu, {}, cfg_.k_select);
            const auto top_v = select_top_k(mv, {}, cfg_.k_select);
            std::vector<NodeId> pick_u, pick_v;
            for (std::size_t j : top_u) pick_u.push_back(a.neighbors[j]);
            for (std::size_t j : top_v) pick_v.push_back(b.neighbors[j]);
            const auto hu = structural_repr(x, q.src, pick_u), hv = structural_repr(x, q.dst, pick_v);
            std::copy(hu.begin(), hu.end(), hs.data() + i * 2 * d);
            std::copy(hv.begin(), hv.end(), hs.data() + i * 2 * d + d);
            if (opt.trace) {
                QueryTrace& tr = out.traces[i];
                tr.seq_u = seqs[su[i]];
                tr.seq_v = seqs[sv[i]];
                for (std::size_t r = 0; r < tr.seq_u.size(); ++r) {
                    tr.score_u.push_back(sc.m_u.value()(i, r));
                    tr.sel_u.push_back(sel_u[i * len + r]);
                }
                for (std::size_t r = 0; r < tr.seq_v.size(); ++r) {
                    tr.score_v.push_back(sc.m_v.value()(i, r));
                    tr.sel_v.push_back(sel_v[i * len + r]);
                }
                tr.nb_u = a.neighbors;
                tr.nb_v = b.neighbors;
                tr.nscore_u = mu;
                tr.nscore_v = mv;
                tr.nsel_u.assign(mu.size(), 0);
                tr.nsel_v.assign(mv.size(), 0);
                for (std::size_t j : top_u) tr.nsel_u[j] = 1;
                for (std::size_t j : top_v) tr.nsel_v[j] = 1;
            }
        }
        out.h_s = tape.constant(std::move(hs));

        // Heads.
        ad::Var li = ad::add(ad::matmul(net(P, "head.iid_s", out.h_s), P("head.iid.w_s")),
                             ad::matmul(net(P, "head.iid_t", out.h_t), P("head.iid.w_t")));
        out.y_i = ad::sigmoid(li);
        if (opt.interventional) {
            const Tensor& dict = dictionary->centroids;
            ConfounderAttention es = confounder_expectation(P, out.h_s, dict, "confounder.s");
            ConfounderAttention et = confounder_expectation(P, out.h_t, dict, "confounder.t");
            out.y_s = ad::sigmoid(ad::add(ad::matmul(net(P, "head.s", out.h_s), P("head.s.w_rep")),
                                          ad::matmul(es.expectation, P("head.s.w_conf"))));
            out.y_t = ad::sigmoid(ad::add(ad::matmul(net(P, "head.t", out.h_t), P("head.t.w_rep")),
                                          ad::matmul(et.expectation, P("head.t.w_conf"))));
        }
        return out;
    }

private:
    static void init_net(ParameterSet& p, const std::string& prefix, std::size_t in, std::size_t h,
                         std::mt19937_64& rng) {
        p.add(prefix + ".w1", glorot(in, h, rng));
        p.add(prefix + ".b1", Tensor(Shape{h}, 0.0));
        p.add(prefix + ".w2", glorot(h, h, rng));
        p.add(prefix + ".b2", Tensor(Shape{h}, 0.0));
    }

    // Two linear layers with GELU between.
    static ad::Var net(Binder& P, const std::string& prefix, const ad::Var& x) {
        ad::Var a = ad::gelu(ad::add_row(ad::matmul(x, P(prefix + ".w1")), P(prefix + ".b1")));
        return ad::add_row(ad::matmul(a, P(prefix + ".w2")), P(prefix + ".b2"));
    }

    SigConfig cfg_;
    std::size_t edge_dim_ = 0;
    std::size_t node_dim_ = 0;
    ParameterSet params_;
};

// Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
inline double risk_ce(double p, double y) {
    const double q = std::clamp(p, ad::kProbabilityClamp, 1.0 - ad::kProbabilityClamp);
    return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

// L = l_i R(y^I) + l_t R(y^T) + l_s R(y^S); heads with zero weight are skipped.
inline ad::Var total_loss(const ForwardResult& fr, const std::vector<double>& labels, const LossWeights& w) {
    ad::Var loss = ad::scale(ad::binary_cross_entropy(fr.y_i, labels), w.iid);
    if (w.temporal > 0) {
        if (!fr.y_t.valid()) throw std::logic_error("total_loss: temporal head was not evaluated");
        loss = ad::add(loss, ad::scale(ad::binary_cross_entropy(fr.y_t, labels), w.temporal));
    }
    if (w.structural > 0) {
        if (!fr.y_s.valid()) throw std::logic_error("total_loss: structural head was not evaluated");
        loss = ad::add(loss, ad::scale(ad::binary_cross_entropy(fr.y_s, labels), w.structural));
    }
    return loss;
}

// Rows concat(H^S, H^T) for each query, computed in batches.
inline Tensor embed_links(SigModel& model, const EventStore& store, std::span<const Query> queries,
                          std::size_t batch = 256) {
    Tensor X = Tensor::matrix(queries.size(), model.link_width());
    const std::size_t l = model.link_width();
    for (std::size_t b = 0; b < queries.size(); b += batch) {
        const auto chunk = queries.subspan(b, std::min(batch, queries.size() - b));
        ad::Tape tape;
        const ForwardResult fr = model.forward(tape, store, chunk, {});
        const Tensor& hs = fr.h_s.value();
        const Tensor& ht = fr.h_t.value();
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            double* row = X.data() + (b + i) * l;
            std::copy_n(hs.data() + i * hs.cols(), hs.cols(), row);
            std::copy_n(ht.data() + i * ht.cols(), ht.cols(), row + hs.cols());
        }
    }
    return X;
}

// y^I for each query (inference mode).
inline std::vector<double> predict(SigModel& model, const EventStore& store, std::span<const Query> queries,
                                   std::size_t batch = 256, const std::vector<std::vector<EventId>>* removed = nullptr) {
    std::vector<double> out;
    out.reserve(queries.size());
    for (std::size_t b = 0; b < queries.size(); b += batch) {
        const std::size_t n = std::min(batch, queries.size() - b);
        ForwardOptions opt;
        std::vector<std::vector<EventId>> rm;
        if (removed) {
            rm.assign(removed->begin() + b, removed->begin() + b + n);
            opt.removed = &rm;
        }
        ad::Tape tape;
        const ForwardResult fr = model.forward(tape, store, queries.subspan(b, n), opt);
        for (double y : fr.y_i.value().values()) out.push_back(y);
    }
    return out;
}

}  // namespace sig
