#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"

using namespace sig;
using namespace sigtest;

namespace {

struct ExplainFixture {
    EventStore store;
    SigModel model;
    std::vector<Query> queries;
    std::vector<double> labels;

    explicit ExplainFixture(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        store = random_store(rng, 10, 120, 2);
        SigConfig c;
        c.hidden = 6;
        c.recent_n = 8;
        c.k_select = 3;
        c.time.dim = 4;
        c.window = 20;
        model = make_model(store, c, seed);
        std::uniform_int_distribution<NodeId> pick(0, 9);
        for (int i = 0; i < 24; ++i) {
            const NodeId u = pick(rng);
            NodeId v = pick(rng);
            if (v == u) v = (u + 1) % 10;
            queries.push_back({u, v, 50.0 + 2 * i});
            labels.push_back(i % 2 ? 1.0 : 0.0);
        }
    }
};

std::vector<ScoredEdge> ten_edges() {
    std::vector<ScoredEdge> u;
    for (EventId i = 0; i < 10; ++i) u.push_back({i, 1.0 - 0.05 * double(i)});
    return u;
}

}  // namespace

TEST(Sparsity, TenEdgesAtPointTwo) {
    const auto u = ten_edges();
    const auto sp = explanation_at_sparsity(u, 0.2);
    EXPECT_EQ(sp.critical, (std::vector<EventId>{0, 1}));
    EXPECT_EQ(sp.residual.size(), 8u);
    EXPECT_EQ(explanation_size(10, 0.2), 2u);
    EXPECT_EQ(explanation_size(10, 0.21), 3u);
    EXPECT_EQ(explanation_size(3, 0.4), 2u);
}

TEST(Sparsity, FullSparsityLeavesNoResidual) {
    const auto u = ten_edges();
    const auto sp = explanation_at_sparsity(u, 1.0);
    EXPECT_TRUE(sp.residual.empty());
    EXPECT_EQ(sp.critical.size(), 10u);
}

TEST(Sparsity, Errors) {
    EXPECT_THROW(explanation_at_sparsity(std::span<const ScoredEdge>{}, 0.5), std::invalid_argument);
    EXPECT_THROW(explanation_size(5, 0.0), std::invalid_argument);
    EXPECT_THROW(explanation_size(5, 1.5), std::invalid_argument);
}

TEST(Sparsity, CeilingAndNestingOnModelExplanations) {
    ExplainFixture fx(1);
    const auto traces = trace_queries(fx.model, fx.store, fx.queries);
    const std::vector<double> grid{0.1, 0.2, 0.4, 0.6, 0.8, 1.0};
    for (const auto& tr : traces) {
        const auto u = explanation_universe(fx.store, tr);
        if (u.empty()) continue;
        std::vector<EventId> prev;
        for (double s : grid) {
            const auto sp = explanation_at_sparsity(u, s);
            const double got = double(sp.critical.size()) / double(u.size());
            EXPECT_GE(got, s - 1e-9);
            EXPECT_LT(got, s + 1.0 / double(u.size()));
            EXPECT_TRUE(std::includes(sp.critical.begin(), sp.critical.end(), prev.begin(), prev.end()));
            EXPECT_EQ(sp.critical.size() + sp.residual.size(), u.size());
            prev = sp.critical;
        }
    }
}

TEST(Universe, DedupKeepsMaxAndOrders) {
    const EventStore s = EventStore::build({ev(0, 1, 1), ev(0, 2, 2), ev(1, 2, 3), ev(0, 1, 4)});
    QueryTrace tr;
    tr.seq_u = {3, 1, 0};
    tr.score_u = {0.2, 0.5, 0.3};
    tr.seq_v = {3, 2, 0};
    tr.score_v = {0.3, 0.3, 0.4};
    const auto u = explanation_universe(s, tr);
    ASSERT_EQ(u.size(), 4u);
    EXPECT_EQ(u[0].id, 1u);
    EXPECT_EQ(u[0].score, 0.5);
    EXPECT_EQ(u[1].id, 0u);
    EXPECT_EQ(u[1].score, 0.4);
    // 3 and 2 both score 0.3; event 3 is more recent.
    EXPECT_EQ(u[2].id, 3u);
    EXPECT_EQ(u[3].id, 2u);
}

TEST(Aufsc, Examples) {
    const std::vector<double> s{0.2, 0.4, 0.6, 0.8, 1.0};
    const std::vector<double> flat(5, 0.37);
    EXPECT_NEAR(aufsc(s, flat), 0.37, 1e-15);
    const std::vector<double> a{0.2, 1.0}, f{0.0, 0.8};
    EXPECT_NEAR(aufsc(a, f), 0.4, 1e-15);
    EXPECT_NEAR(aufsc_raw(a, f), 0.32, 1e-15);
    EXPECT_EQ(aufsc(s, std::vector<double>(5, 0.0)), 0.0);
    EXPECT_THROW(aufsc(std::vector<double>{0.5}, std::vector<double>{1.0}), std::invalid_argument);
    EXPECT_THROW(aufsc(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0, 1.0}), std::invalid_argument);
}

TEST(Aufsc, MatchesSegmentIntegration) {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 500; ++rep) {
        const std::size_t n = detail::dim(rng, 2, 8);
        std::vector<double> s(n), f(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = (i == 0 ? 0.0 : s[i - 1]) + std::uniform_real_distribution<double>(0.01, 0.3)(rng);
            f[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
        }
        // Simpson's rule is exact on each linear piece.
        double area = 0.0;
        for (std::size_t i = 1; i < n; ++i) {
            const double mid = f[i - 1] + 0.5 * (f[i] - f[i - 1]);
            area += (s[i] - s[i - 1]) / 6.0 * (f[i - 1] + 4.0 * mid + f[i]);
        }
        EXPECT_NEAR(aufsc_raw(s, f), area, 1e-12);
        EXPECT_NEAR(aufsc(s, f), area / (s.back() - s.front()), 1e-12);
    }
}

TEST(Fidelity, ModelBlindToTemporalEdgesScoresZero) {
    ExplainFixture fx(2);
    fx.model.params().value("head.iid.w_t").fill(0.0);
    const auto c = fidelity_curve(fx.model, fx.store, fx.queries, fx.labels, {0.2, 0.4, 0.6, 0.8, 1.0});
    for (double f : c.fidelity) EXPECT_EQ(f, 0.0);
    EXPECT_EQ(c.aufsc, 0.0);
}

TEST(Fidelity, EqualsApDifferenceWithExplanationHidden) {
    ExplainFixture fx(3);
    const std::vector<double> grid{0.2, 0.6, 1.0};
    const auto c = fidelity_curve(fx.model, fx.store, fx.queries, fx.labels, grid, 7);
    const double ap_full = evaluate_ap_auc(predict(fx.model, fx.store, fx.queries), fx.labels).ap;
    EXPECT_EQ(c.ap_full, ap_full);
    const auto traces = trace_queries(fx.model, fx.store, fx.queries);
    for (std::size_t g = 0; g < grid.size(); ++g) {
        std::vector<double> scores;
        for (std::size_t i = 0; i < fx.queries.size(); ++i) {
            // Rebuild the residual history by hand and predict one query at a time.
            const auto u = explanation_universe(fx.store, traces[i]);
            std::vector<std::vector<EventId>> rm{u.empty() ? std::vector<EventId>{}
                                                           : explanation_at_sparsity(u, grid[g]).critical};
            scores.push_back(predict(fx.model, fx.store, std::span<const Query>(&fx.queries[i], 1), 1, &rm)[0]);
        }
        EXPECT_NEAR(c.fidelity[g], ap_full - evaluate_ap_auc(scores, fx.labels).ap, 1e-12);
    }
    EXPECT_NEAR(c.aufsc_raw, aufsc_raw(c.sparsity, c.fidelity), 1e-15);
}

TEST(Fidelity, EmptyRemovalReproducesFullPrediction) {
    ExplainFixture fx(4);
    std::vector<std::vector<EventId>> none(fx.queries.size());
    EXPECT_EQ(predict(fx.model, fx.store, fx.queries, 256, &none), predict(fx.model, fx.store, fx.queries));
}

TEST(Fidelity, GridValidation) {
    ExplainFixture fx(5);
    EXPECT_THROW(fidelity_curve(fx.model, fx.store, fx.queries, fx.labels, {}), std::invalid_argument);
    EXPECT_THROW(fidelity_curve(fx.model, fx.store, fx.queries, fx.labels, {0.4, 0.2}), std::invalid_argument);
    EXPECT_THROW(fidelity_curve(fx.model, fx.store, fx.queries, fx.labels, {0.0, 0.2}), std::invalid_argument);
}

TEST(Records, ContentsAndResidualPrediction) {
    ExplainFixture fx(6);
    const auto recs = explain_queries(fx.model, fx.store, fx.queries);
    ASSERT_EQ(recs.size(), fx.queries.size());
    const auto full = predict(fx.model, fx.store, fx.queries);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        EXPECT_EQ(r.y_full, full[i]);
        EXPECT_LE(r.temporal.size(), 2 * fx.model.config().k_select);
        std::vector<std::vector<EventId>> rm(1);
        for (const auto& e : r.temporal) {
            EXPECT_GT(e.dt, 0.0);
            EXPECT_GT(e.score, 0.0);
            EXPECT_LT(e.score, 1.0 + 1e-15);
            EXPECT_EQ(e.dt, r.query.t0 - e.t);
            for (EventId id = 0; id < fx.store.edge_count(); ++id) {
                const Event& x = fx.store.event(id);
                if (x.src == e.src && x.dst == e.dst && x.time == e.t) rm[0].push_back(id);
            }
        }
        std::sort(rm[0].begin(), rm[0].end());
        if (!r.temporal.empty()) {
            EXPECT_NEAR(r.y_residual, predict(fx.model, fx.store, std::span<const Query>(&fx.queries[i], 1), 1, &rm)[0],
                        1e-12);
        }
    }
}

TEST(Records, JsonlRoundTripAtFullPrecision) {
    ExplainFixture fx(7);
    const auto recs = explain_queries(fx.model, fx.store, fx.queries);
    const auto dir = temp_dir("explain_rt");
    export_explanations(recs, dir / "e.jsonl");
    const auto back = import_explanations(dir / "e.jsonl");
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_TRUE(back[i] == recs[i]) << i;
    // One self-contained object per line with the documented fields.
    std::ifstream in(dir / "e.jsonl");
    std::string line;
    std::getline(in, line);
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"query", "temporal", "structural", "y_full", "y_residual"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Records, EmptyListGivesEmptyFile) {
    const auto dir = temp_dir("explain_empty");
    export_explanations({}, dir / "e.jsonl");
    EXPECT_EQ(std::filesystem::file_size(dir / "e.jsonl"), 0u);
    EXPECT_TRUE(import_explanations(dir / "e.jsonl").empty());
}

TEST(Records, Errors) {
    const auto dir = temp_dir("explain_err");
    EXPECT_THROW(export_explanations({}, dir / "no" / "such" / "dir.jsonl"), std::runtime_error);
    {
        std::ofstream f(dir / "bad.jsonl");
        f << R"({"query":{"src":0,"dst":1,"t0":1},"temporal":[],"structural":[],"y_full":0.5,"y_residual":0.5})" << '\n'
          << "{not json\n";
    }
    try {
        (void)import_explanations(dir / "bad.jsonl");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
    }
}
