// Train on a small planted-pattern graph, then explain one positive query.

#include <algorithm>
#include <cstdio>

#include "sig/sig.hpp"

int main() {
    sig::PlantedConfig pc;
    pc.nodes = 1000;
    pc.events = 25000;
    pc.patterns = 1500;
    pc.horizon = 50000;
    pc.seed = 3;
    const sig::PlantedDataset planted = sig::planted_pattern_generate(pc);
    const sig::LinkDataset data = sig::dataset_from_planted(planted);
    std::printf("%zu events, %zu train positives, decoy correlation %.2f (train) / %.2f (test)\n",
                planted.store.edge_count(), data.train_pos.size(), planted.train_decoy_corr, planted.test_decoy_corr);

    sig::SigConfig mc;
    mc.hidden = 32;
    mc.recent_n = 20;
    sig::SigModel model = sig::make_model(data.store, mc, 1);

    sig::TrainConfig tc;
    tc.epochs = 5;
    tc.lr = 1e-3;
    tc.batch_size = 100;
    sig::train(model, data, tc, [](const sig::EpochRecord& r) {
        std::printf("epoch %zu  loss %.4f  val AP %.4f  (%.1f s)\n", r.epoch, r.train_loss, r.val_ap, r.seconds);
    });
    const auto test = sig::evaluate(model, data.store, data.test, data.test_labels);
    std::printf("test AP %.4f  AUC %.4f\n", test.ap, test.auc);

    // Explain the positive the model is most confident about.
    const auto y = sig::predict(model, data.store, data.test);
    std::size_t pick = 0;
    for (std::size_t i = 0; i < y.size(); ++i)
        if (data.test_labels[i] == 1.0 && (data.test_labels[pick] != 1.0 || y[i] > y[pick])) pick = i;
    const auto rec = sig::explain_queries(model, data.store, std::span(&data.test[pick], 1))[0];
    std::printf("query (%u -> %u at t=%.1f): y=%.3f, without its explanation y=%.3f\n", rec.query.src, rec.query.dst,
                rec.query.t0, rec.y_full, rec.y_residual);
    auto top = rec.temporal;
    std::sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    top.resize(std::min<std::size_t>(top.size(), 5));
    for (const auto& e : top) std::printf("  edge %u-%u  t0-t=%.1f  score %.3f\n", e.src, e.dst, e.dt, e.score);
}
