#pragma once

// Training with warm start, confounder dictionary build, early stopping on
// validation AP of y^I, and checkpoint persistence.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "sig/checkpoint.hpp"
#include "sig/confounders.hpp"
#include "sig/graph_store.hpp"
#include "sig/metrics.hpp"
#include "sig/model.hpp"
#include "sig/optim.hpp"
#include "sig/synth.hpp"

namespace sig {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Positives for training plus fixed labelled validation and test queries.
struct LinkDataset {
    EventStore store;
    std::vector<Query> train_pos;
    std::vector<Query> val;
    std::vector<double> val_labels;
    std::vector<Query> test;
    std::vector<double> test_labels;
};

namespace detail {

template <class Rng>
void append_with_negatives(const EventStore& store, std::span<const Query> pos, std::size_t ratio, Rng& rng,
                           std::vector<Query>& q, std::vector<double>& y) {
    const auto neg = sample_negatives(store, pos, ratio, rng);
    for (std::size_t i = 0; i < pos.size(); ++i) {
        q.push_back(pos[i]);
        y.push_back(1.0);
        for (std::size_t r = 0; r < ratio; ++r) {
            q.push_back(neg[i * ratio + r]);
            y.push_back(0.0);
        }
    }
}

}  // namespace detail

// Every event in a range is a positive; evaluation negatives are drawn once.
inline LinkDataset dataset_from_split(const EventStore& store, const SplitRanges& split, std::uint64_t seed,
                                      std::size_t neg_ratio_eval = 1) {
    LinkDataset d;
    d.store = store;
    d.train_pos = queries_from_events(store, split.train);
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    const auto val_pos = queries_from_events(store, split.val);
    const auto test_pos = queries_from_events(store, split.test);
    detail::append_with_negatives(store, val_pos, neg_ratio_eval, rng, d.val, d.val_labels);
    detail::append_with_negatives(store, test_pos, neg_ratio_eval, rng, d.test, d.test_labels);
    return d;
}

// Planted data: train on the planted positives, evaluate on the generator's
// labelled queries.
inline LinkDataset dataset_from_planted(const PlantedDataset& p) {
    LinkDataset d;
    d.store = p.store;
    for (const LabeledQuery& q : p.queries) {
        switch (q.role) {
        case Role::train:
            if (q.label == 1.0) d.train_pos.push_back(q.query);
            break;
        case Role::val:
            d.val.push_back(q.query);
            d.val_labels.push_back(q.label);
            break;
        case Role::test:
            d.test.push_back(q.query);
            d.test_labels.push_back(q.label);
            break;
        }
    }
    return d;
}

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 600;      // positives per optimizer step
    std::size_t micro_batch = 50;      // positives per forward pass
    double lr = 1e-4;
    double weight_decay = 1e-6;
    std::size_t patience = 5;
    std::size_t neg_ratio_train = 5;
    std::size_t neg_ratio_eval = 1;
    std::size_t warmup_epochs = 3;     // ICM-only epochs before the dictionary is built
    std::size_t refresh_every = 0;     // rebuild the dictionary every R epochs (0 = never)
    std::size_t dictionary_sample = 4000;  // training links embedded for clustering (0 = all)
    std::size_t kmeans_iters = 100;
    std::size_t eval_batch = 256;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1 || batch_size < 1 || micro_batch < 1 || patience < 1 || neg_ratio_train < 1 ||
            neg_ratio_eval < 1 || eval_batch < 1 || kmeans_iters < 1) {
            throw std::invalid_argument("train config: counts must be >= 1");
        }
        if (!(lr > 0) || weight_decay < 0) throw std::invalid_argument("train config: lr must be > 0, decay >= 0");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_ap = 0.0;
    double val_auc = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    double best_val_ap = -1.0;
    std::size_t best_epoch = 0;
};

// Creates a model for `store`, resolving an automatic structural window.
inline SigModel make_model(const EventStore& store, SigConfig cfg, std::uint64_t seed) {
    if (cfg.window <= 0) cfg.window = auto_window(store);
    return SigModel(std::move(cfg), store.feature_dim(), store.node_features().dim(), seed);
}

inline RankingMetrics evaluate(SigModel& model, const EventStore& store, const std::vector<Query>& queries,
                               const std::vector<double>& labels, std::size_t batch = 256) {
    return evaluate_ap_auc(predict(model, store, queries, batch), labels);
}

// Clusters embeddings of (a sample of) the training positives.
inline ConfounderDictionary fit_dictionary(SigModel& model, const LinkDataset& data, const TrainConfig& cfg,
                                           std::uint64_t seed) {
    std::vector<Query> sample = data.train_pos;
    if (cfg.dictionary_sample > 0 && sample.size() > cfg.dictionary_sample) {
        std::mt19937_64 rng(seed);
        std::vector<Query> picked;
        std::sample(sample.begin(), sample.end(), std::back_inserter(picked), cfg.dictionary_sample, rng);
        sample = std::move(picked);
    }
    const Tensor X = embed_links(model, data.store, sample, cfg.eval_batch);
    const std::size_t k = std::min(model.config().k_confounders, X.rows());
    const ClusterResult cr = kmeans(X, k, cfg.kmeans_iters, seed);
    return build_dictionary(cr.assignment, X, k);
}

inline TrainResult train(SigModel& model, const LinkDataset& data, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    cfg.validate();
    if (data.train_pos.empty()) throw TrainingError("empty training split");
    const LossWeights lam = model.config().lambda;
    const bool wants_dict = lam.interventional();
    std::mt19937_64 rng(cfg.seed);
    OptimizerState opt = make_optimizer_state(model.params());
    const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay};

    TrainResult res;
    std::vector<Tensor> best;
    std::optional<ConfounderDictionary> best_dict;
    std::size_t stale = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        const bool refresh = model.dictionary && cfg.refresh_every > 0 && epoch > cfg.warmup_epochs + 1 &&
                             (epoch - cfg.warmup_epochs - 1) % cfg.refresh_every == 0;
        if (wants_dict && epoch > cfg.warmup_epochs && (!model.dictionary || refresh)) {
            model.dictionary = fit_dictionary(model, data, cfg, cfg.seed + epoch);
        }
        const bool active = wants_dict && model.dictionary.has_value();
        const LossWeights w = active ? lam : LossWeights{lam.iid, 0.0, 0.0};
        if (w.iid <= 0 && !active) throw TrainingError("loss weights leave nothing to train before warm start ends");

        const auto neg = sample_negatives(data.store, data.train_pos, cfg.neg_ratio_train, rng);
        const std::size_t per = cfg.neg_ratio_train + 1;
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t b = 0; b < data.train_pos.size(); b += cfg.batch_size) {
            const std::size_t be = std::min(b + cfg.batch_size, data.train_pos.size());
            const double batch_queries = double((be - b) * per);
            model.params().zero_grad();
            double batch_loss = 0.0;
            for (std::size_t m = b; m < be; m += cfg.micro_batch) {
                const std::size_t me = std::min(m + cfg.micro_batch, be);
                std::vector<Query> q;
                std::vector<double> y;
                for (std::size_t i = m; i < me; ++i) {
                    q.push_back(data.train_pos[i]);
                    y.push_back(1.0);
                    for (std::size_t r = 0; r < cfg.neg_ratio_train; ++r) {
                        q.push_back(neg[i * cfg.neg_ratio_train + r]);
                        y.push_back(0.0);
                    }
                }
                ad::Tape tape;
                ForwardOptions fo;
                fo.trainable = true;
                fo.interventional = active;
                const ForwardResult fr = model.forward(tape, data.store, q, fo);
                ad::Var loss = ad::scale(total_loss(fr, y, w), double(q.size()) / batch_queries);
                const double lv = loss.value().item();
                if (!std::isfinite(lv)) {
                    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", positives [" +
                                        std::to_string(m) + ", " + std::to_string(me) + ")");
                }
                batch_loss += lv;
                tape.backward(loss);
            }
            for (std::size_t i = 0; i < model.params().size(); ++i) {
                if (!model.params().grad(i).all_finite()) {
                    throw TrainingError("non-finite gradient for '" + model.params().names()[i] + "' at epoch " +
                                        std::to_string(epoch));
                }
            }
            adam_step(model.params(), opt, adam);
            loss_sum += batch_loss;
            ++steps;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / double(steps);
        const RankingMetrics vm = evaluate(model, data.store, data.val, data.val_labels, cfg.eval_batch);
        rec.val_ap = vm.ap;
        rec.val_auc = vm.auc;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (vm.ap > res.best_val_ap) {
            res.best_val_ap = vm.ap;
            res.best_epoch = epoch;
            best.clear();
            for (std::size_t i = 0; i < model.params().size(); ++i) best.push_back(model.params().value(i));
            best_dict = model.dictionary;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    for (std::size_t i = 0; i < best.size(); ++i) model.params().value(i) = best[i];
    if (!best.empty()) model.dictionary = best_dict;
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDictionaryRecord = "confounder_dictionary";

inline std::map<std::string, double> config_echo(const SigModel& m) {
    const SigConfig& c = m.config();
    return {
        {"recent_n", double(c.recent_n)},
        {"hidden", double(c.hidden)},
        {"hops", double(c.hops)},
        {"window", c.window},
        {"k_select", double(c.k_select)},
        {"k_confounders", double(c.k_confounders)},
        {"time_alpha", c.time.alpha},
        {"time_beta", c.time.beta},
        {"time_dim", double(c.time.dim)},
        {"token_expansion", c.token_expansion},
        {"channel_expansion", c.channel_expansion},
        {"lambda_i", c.lambda.iid},
        {"lambda_t", c.lambda.temporal},
        {"lambda_s", c.lambda.structural},
        {"edge_feature_dim", double(m.edge_feature_dim())},
        {"node_feature_dim", double(m.node_feature_dim())},
    };
}

// Extra entries (data preparation settings) are stored under "meta.<key>".
inline std::vector<NamedTensor> model_records(const SigModel& m, const std::map<std::string, double>& meta = {}) {
    std::vector<NamedTensor> r;
    for (std::size_t i = 0; i < m.params().size(); ++i) r.push_back({m.params().names()[i], m.params().value(i)});
    if (m.dictionary) r.push_back({std::string(kDictionaryRecord), m.dictionary->centroids});
    for (const auto& [k, v] : config_echo(m)) r.push_back({"config." + k, Tensor::scalar(v)});
    for (const auto& [k, v] : meta) r.push_back({"meta." + k, Tensor::scalar(v)});
    return r;
}

struct LoadedModel {
    SigModel model;
    std::map<std::string, double> meta;
};

inline LoadedModel model_from_records(const std::vector<NamedTensor>& records) {
    std::map<std::string, double> cfg, meta;
    for (const auto& r : records) {
        if (r.name.starts_with("config.")) cfg[r.name.substr(7)] = r.value.item();
        if (r.name.starts_with("meta.")) meta[r.name.substr(5)] = r.value.item();
    }
    auto get = [&](const char* k) {
        auto it = cfg.find(k);
        if (it == cfg.end()) throw CheckpointError(std::string("checkpoint lacks config.") + k);
        return it->second;
    };
    SigConfig c;
    c.recent_n = std::size_t(get("recent_n"));
    c.hidden = std::size_t(get("hidden"));
    c.hops = std::size_t(get("hops"));
    c.window = get("window");
    c.k_select = std::size_t(get("k_select"));
    c.k_confounders = std::size_t(get("k_confounders"));
    c.time.alpha = get("time_alpha");
    c.time.beta = get("time_beta");
    c.time.dim = std::size_t(get("time_dim"));
    c.token_expansion = get("token_expansion");
    c.channel_expansion = get("channel_expansion");
    c.lambda = {get("lambda_i"), get("lambda_t"), get("lambda_s")};
    LoadedModel out{SigModel(c, std::size_t(get("edge_feature_dim")), std::size_t(get("node_feature_dim")), 0), meta};
    ParameterSet& p = out.model.params();
    std::size_t found = 0;
    for (const auto& r : records) {
        if (r.name == kDictionaryRecord) {
            ConfounderDictionary d;
            d.centroids = r.value;
            out.model.dictionary = d;
        } else if (p.contains(r.name)) {
            if (!p.value(r.name).same_shape(r.value)) {
                throw CheckpointError("checkpoint record '" + r.name + "' has shape " + shape_str(r.value.shape()) +
                                      ", expected " + shape_str(p.value(r.name).shape()));
            }
            p.value(r.name) = r.value;
            ++found;
        }
    }
    if (found != p.size()) throw CheckpointError("checkpoint is missing model parameters");
    return out;
}

inline void save_model(const std::filesystem::path& path, const SigModel& m,
                       const std::map<std::string, double>& meta = {}) {
    write_checkpoint(path, model_records(m, meta));
}

inline LoadedModel load_model(const std::filesystem::path& path) { return model_from_records(read_checkpoint(path)); }

}  // namespace sig
