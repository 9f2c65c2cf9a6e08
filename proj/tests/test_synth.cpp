#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace sig;
using namespace sigtest;

namespace {

PlantedConfig small_planted(std::uint64_t seed, bool ood = false) {
    PlantedConfig c;
    c.nodes = 300;
    c.events = 6000;
    c.patterns = 400;
    c.horizon = 20000;
    c.seed = seed;
    c.ood = ood;
    return c;
}

std::string csv_of(const EventStore& s) {
    std::ostringstream out;
    write_events_csv(out, s.events());
    return out.str();
}

using EventKey = std::tuple<NodeId, NodeId, double, std::vector<double>>;

std::multiset<EventKey> keys(std::span<const Event> evs) {
    std::multiset<EventKey> out;
    for (const Event& e : evs) out.insert({e.src, e.dst, e.time, e.features});
    return out;
}

}  // namespace

TEST(Planted, DeterministicBytes) {
    const auto a = planted_pattern_generate(small_planted(4));
    const auto b = planted_pattern_generate(small_planted(4));
    EXPECT_EQ(csv_of(a.store), csv_of(b.store));
    ASSERT_EQ(a.queries.size(), b.queries.size());
    for (std::size_t i = 0; i < a.queries.size(); ++i) {
        EXPECT_EQ(a.queries[i].query, b.queries[i].query);
        EXPECT_EQ(a.queries[i].label, b.queries[i].label);
    }
    EXPECT_NE(csv_of(planted_pattern_generate(small_planted(5)).store), csv_of(a.store));
}

TEST(Planted, TriadicPositivesSatisfyTheRule) {
    const auto d = planted_pattern_generate(small_planted(1));
    const auto& c = d.config;
    std::size_t pos = 0, neg = 0, neg_holding = 0;
    for (const auto& q : d.queries) {
        const bool holds =
            detail::rule_holds(d.store, c.rule, q.query.src, q.query.dst, q.query.t0, c.pattern_window, c.burst_size);
        if (q.label == 1.0) {
            ++pos;
            EXPECT_TRUE(holds);
        } else {
            ++neg;
            neg_holding += holds;
        }
    }
    EXPECT_EQ(pos, neg);
    EXPECT_LE(double(neg_holding), 0.02 * double(neg));
}

TEST(Planted, RecencyBurstRule) {
    auto c = small_planted(2);
    c.rule = PlantedRule::recency_burst;
    const auto d = planted_pattern_generate(c);
    for (const auto& q : d.queries) {
        if (q.label == 1.0) {
            EXPECT_TRUE(detail::rule_holds(d.store, c.rule, q.query.src, q.query.dst, q.query.t0, c.pattern_window,
                                           c.burst_size));
        }
    }
}

TEST(Planted, DecoyCorrelations) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const auto iid = planted_pattern_generate(small_planted(seed));
        EXPECT_GT(iid.train_decoy_corr, 0.6);
        EXPECT_GT(iid.test_decoy_corr, 0.6);
        const auto ood = planted_pattern_generate(small_planted(seed, true));
        EXPECT_GT(ood.train_decoy_corr, 0.6);
        EXPECT_LT(std::abs(ood.test_decoy_corr), 0.05);
        // Recompute the OOD figure from the labelled queries.
        std::vector<double> y, dec;
        for (const auto& q : ood.queries)
            if (q.role == Role::test) {
                y.push_back(q.label);
                dec.push_back(q.decoy);
            }
        EXPECT_NEAR(indicator_correlation(y, dec), ood.test_decoy_corr, 1e-15);
    }
}

TEST(Planted, DecoyFlagMeansBridgeEventJustBefore) {
    const auto d = planted_pattern_generate(small_planted(6));
    const auto& c = d.config;
    for (const auto& q : d.queries) {
        if (!q.decoy) continue;
        bool found = false;
        for (EventId e : d.store.incident(q.query.dst)) {
            const Event& x = d.store.event(e);
            if (x.features[1] == 1.0 && x.time >= q.query.t0 - c.bridge_lag && x.time < q.query.t0) found = true;
        }
        EXPECT_TRUE(found);
    }
}

TEST(Planted, RolesFollowTime) {
    const auto d = planted_pattern_generate(small_planted(7));
    double last_train = -1, first_val = 1e300, last_val = -1, first_test = 1e300;
    for (const auto& q : d.queries) {
        if (q.role == Role::train) last_train = std::max(last_train, q.query.t0);
        if (q.role == Role::val) {
            first_val = std::min(first_val, q.query.t0);
            last_val = std::max(last_val, q.query.t0);
        }
        if (q.role == Role::test) first_test = std::min(first_test, q.query.t0);
    }
    EXPECT_LE(last_train, first_val);
    EXPECT_LE(last_val, first_test);
    EXPECT_EQ(d.store.feature_dim(), kPlantedFeatureDim);
}

TEST(OodInject, DegreeThreeNodeGetsSix) {
    // Star: node 0 touches 1, 2, 3 once each; every leaf has degree 1.
    const EventStore s = with_one_hot_features(EventStore::build({ev(0, 1, 1, {1}), ev(2, 0, 2, {2}), ev(0, 3, 3, {3}),
                                                                 ev(4, 5, 4, {4})}));
    std::mt19937_64 rng(1);
    const auto out = ood_inject(s, 0.6, rng);
    EXPECT_EQ(out.added, 2u * (3 + 1 + 1 + 1 + 1 + 1));
    EXPECT_EQ(out.store.edge_count(), s.edge_count() + out.added);
    auto orig = keys(s.events());
    std::map<NodeId, std::size_t> from;
    for (const Event& e : out.store.events()) {
        auto it = orig.find({e.src, e.dst, e.time, e.features});
        if (it != orig.end()) {
            orig.erase(it);
            continue;
        }
        ++from[e.src];
        EXPECT_GE(e.time, 1.0);
        EXPECT_LE(e.time, 4.0);
    }
    EXPECT_TRUE(orig.empty());
    EXPECT_EQ(from[0], 6u);
    EXPECT_EQ(from[1], 2u);
}

TEST(OodInject, RecountMatchesReportAndScale) {
    std::mt19937_64 g(2);
    const EventStore s = random_store(g, 400, 4000, 2);
    for (double scale : {0.4, 0.6, 0.8}) {
        std::mt19937_64 rng(3);
        const auto out = ood_inject(s, scale, rng);
        // Neighbour sets and degrees of the original graph.
        std::vector<std::set<NodeId>> nb(s.node_count());
        std::vector<std::size_t> deg(s.node_count(), 0);
        for (const Event& e : s.events()) {
            nb[e.src].insert(e.dst);
            nb[e.dst].insert(e.src);
            ++deg[e.src];
            if (e.dst != e.src) ++deg[e.dst];
        }
        auto orig = keys(s.events());
        std::size_t added = 0, to_nb = 0;
        std::vector<std::size_t> per(s.node_count(), 0);
        for (const Event& e : out.store.events()) {
            auto it = orig.find({e.src, e.dst, e.time, e.features});
            if (it != orig.end()) {
                orig.erase(it);
                continue;
            }
            ++added;
            ++per[e.src];
            to_nb += nb[e.src].count(e.dst);
        }
        EXPECT_TRUE(orig.empty());
        EXPECT_EQ(added, out.added);
        EXPECT_EQ(to_nb, out.to_neighbors);
        for (NodeId u = 0; u < s.node_count(); ++u) EXPECT_EQ(per[u], 2 * deg[u]);
        const double frac = double(to_nb) / double(added);
        const double sd = std::sqrt(scale * (1 - scale) / double(added));
        EXPECT_NEAR(frac, scale, 5 * sd);
        for (EventId i = 1; i < out.store.edge_count(); ++i)
            EXPECT_LE(out.store.event(i - 1).time, out.store.event(i).time);
    }
}

TEST(OodInject, OriginalEventsKeepTheirRelativeOrder) {
    std::mt19937_64 g(4);
    const EventStore s = random_store(g, 30, 200, 1);
    std::mt19937_64 rng(5);
    const auto out = ood_inject(s, 0.4, rng);
    // Original events appear in the merged store in their original order.
    std::size_t next = 0;
    for (const Event& e : out.store.events()) {
        if (next < s.edge_count() && e.src == s.event(EventId(next)).src && e.dst == s.event(EventId(next)).dst &&
            e.time == s.event(EventId(next)).time && e.features == s.event(EventId(next)).features)
            ++next;
    }
    EXPECT_EQ(next, s.edge_count());
}

TEST(OodInject, ScaleMustBeInsideUnitInterval) {
    std::mt19937_64 g(1);
    const EventStore s = random_store(g, 5, 10, 0);
    EXPECT_THROW(ood_inject(s, 0.0, g), std::invalid_argument);
    EXPECT_THROW(ood_inject(s, 1.0, g), std::invalid_argument);
}
