#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"

using namespace sig;
using namespace sigtest;

TEST(TimeEncode, ZeroIsAllOnes) {
    for (std::size_t d : {1u, 3u, 100u}) {
        TimeEncodingConfig c;
        c.dim = d;
        for (double v : time_encode(0.0, c)) EXPECT_EQ(v, 1.0);
    }
}

TEST(TimeEncode, HandValues) {
    TimeEncodingConfig c{2.0, 1.0, 3};
    const auto v = time_encode(std::numbers::pi, c);
    EXPECT_NEAR(v[0], -1.0, 1e-15);
    EXPECT_NEAR(v[1], 0.0, 1e-15);
    EXPECT_NEAR(v[2], std::cos(std::numbers::pi / 4), 1e-15);
    EXPECT_NEAR(v[2], 0.70711, 1e-5);

    TimeEncodingConfig one;
    one.dim = 1;
    EXPECT_EQ(time_encode(2.5, one), std::vector<double>{std::cos(2.5)});
}

TEST(TimeEncode, FrequenciesStrictlyDecrease) {
    TimeEncodingConfig c;
    const auto w = time_frequencies(c);
    EXPECT_EQ(w[0], 1.0);
    for (std::size_t i = 1; i < w.size(); ++i) EXPECT_LT(w[i], w[i - 1]);
    EXPECT_THROW(time_encode(std::nan(""), c), std::invalid_argument);
    EXPECT_THROW(time_frequencies({1.0, 1.0, 2}), std::invalid_argument);
}

TEST(Tokens, EmptyAndSingle) {
    const EventStore s = EventStore::build({ev(0, 1, 1.0, {7.0})});
    TimeEncodingConfig c;
    c.dim = 2;
    const TokenBlock empty = edge_tokens(s, {}, 5.0, c, 4);
    for (double v : empty.tokens.values()) EXPECT_EQ(v, 0.0);
    for (auto m : empty.mask) EXPECT_EQ(m, 0);

    const TokenBlock one = edge_tokens(s, {0}, 3.0, c, 1);
    ASSERT_EQ(one.tokens.shape(), (Shape{1, 3}));
    EXPECT_EQ(one.mask, std::vector<std::uint8_t>{1});
    const auto enc = time_encode(2.0, c);
    EXPECT_EQ(one.tokens(0, 0), enc[0]);
    EXPECT_EQ(one.tokens(0, 1), enc[1]);
    EXPECT_EQ(one.tokens(0, 2), 7.0);
}

namespace {

struct MixerFixture {
    MixerConfig cfg;
    ParameterSet ps;
    Tensor f0;
    std::vector<std::uint8_t> mask;

    explicit MixerFixture(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        cfg.in_dim = 3;
        cfg.hidden = 4;
        cfg.seq_len = 5;
        init_mixer(ps, cfg, rng);
        f0 = detail::randn({2 * cfg.seq_len, cfg.in_dim}, rng);
        mask = {1, 1, 1, 0, 0, 1, 0, 0, 0, 0};
        for (std::size_t r = 0; r < mask.size(); ++r)
            if (!mask[r])
                for (std::size_t c = 0; c < cfg.in_dim; ++c) f0(r, c) = 0.0;
    }

    Tensor run() {
        ad::Tape t;
        Binder b(t, ps, false);
        return mixer_forward(b, t.constant(f0), mask, cfg).value();
    }
};

}  // namespace

TEST(Mixer, ZeroMlpsLeaveResidualProjection) {
    MixerFixture fx(1);
    for (const char* n : {"mixer.tok_w1", "mixer.tok_b1", "mixer.tok_w2", "mixer.tok_b2", "mixer.ch_w1", "mixer.ch_b1",
                          "mixer.ch_w2", "mixer.ch_b2"})
        fx.ps.value(n).fill(0.0);
    std::mt19937_64 rng(2);
    fx.ps.value("mixer.in_b") = detail::randn({fx.cfg.hidden}, rng);
    const Tensor out = fx.run();
    const Tensor& w = fx.ps.value("mixer.in_w");
    const Tensor& b = fx.ps.value("mixer.in_b");
    for (std::size_t r = 0; r < fx.mask.size(); ++r)
        for (std::size_t j = 0; j < fx.cfg.hidden; ++j) {
            double want = 0.0;
            if (fx.mask[r]) {
                want = b[j];
                for (std::size_t i = 0; i < fx.cfg.in_dim; ++i) want += fx.f0(r, i) * w(i, j);
            }
            EXPECT_NEAR(out(r, j), want, 1e-14);
        }
}

TEST(Mixer, PaddedRowsExactlyZero) {
    MixerFixture fx(3);
    std::mt19937_64 rng(4);
    for (const auto& n : fx.ps.names()) fx.ps.value(n) = detail::randn(fx.ps.value(n).shape(), rng);
    const Tensor out = fx.run();
    for (std::size_t r = 0; r < fx.mask.size(); ++r) {
        bool any = false;
        for (std::size_t j = 0; j < fx.cfg.hidden; ++j) {
            if (!fx.mask[r]) { EXPECT_EQ(out(r, j), 0.0); }
            any |= out(r, j) != 0.0;
        }
        if (fx.mask[r]) { EXPECT_TRUE(any); }
    }
}

TEST(Mixer, ExpansionFactors) {
    MixerConfig c;
    c.seq_len = 50;
    c.hidden = 100;
    EXPECT_EQ(c.token_hidden(), 25u);
    EXPECT_EQ(c.channel_hidden(), 400u);
}

namespace {

struct ScoreFixture {
    ParameterSet ps;
    std::size_t h = 3, len = 4;
    explicit ScoreFixture(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        init_temporal(ps, h, rng);
    }
    TemporalScores scores(ad::Tape& t, const Tensor& fu, const Tensor& fv, const std::vector<std::uint8_t>& mu,
                          const std::vector<std::uint8_t>& mv) {
        Binder b(t, ps, false);
        return temporal_scores(b, t.constant(fu), t.constant(fv), mu, mv);
    }
};

// Direct per-pair computation over live rows only, no padding involved.
std::vector<double> dense_side(const Tensor& keys_src, const std::vector<std::uint8_t>& mk, const Tensor& other,
                               const std::vector<std::uint8_t>& mo, const Tensor& wq, const Tensor& wk) {
    const std::size_t h = keys_src.cols();
    std::vector<double> mean(h, 0.0);
    std::size_t live = 0;
    for (std::size_t r = 0; r < other.rows(); ++r)
        if (mo[r]) {
            ++live;
            for (std::size_t j = 0; j < h; ++j) mean[j] += other(r, j);
        }
    for (double& m : mean) m = live ? m / double(live) : 0.0;
    std::vector<double> q(h, 0.0);
    for (std::size_t j = 0; j < h; ++j)
        for (std::size_t i = 0; i < h; ++i) q[j] += mean[i] * wq(i, j);
    std::vector<double> logits;
    for (std::size_t r = 0; r < keys_src.rows(); ++r) {
        if (!mk[r]) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            double k = 0.0;
            for (std::size_t i = 0; i < h; ++i) k += keys_src(r, i) * wk(i, j);
            s += q[j] * k;
        }
        logits.push_back(s / std::sqrt(double(h)));
    }
    std::vector<double> out(keys_src.rows(), 0.0);
    if (logits.empty()) return out;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    std::size_t k = 0;
    for (std::size_t r = 0; r < keys_src.rows(); ++r)
        if (mk[r]) out[r] = std::exp(logits[k++] - mx) / z;
    return out;
}

}  // namespace

TEST(TemporalScores, SingletonIsOne) {
    ScoreFixture fx(1);
    std::mt19937_64 rng(2);
    ad::Tape t;
    const auto sc = fx.scores(t, detail::randn({4, 3}, rng), detail::randn({4, 3}, rng), {1, 1, 0, 0}, {1, 0, 0, 0});
    EXPECT_DOUBLE_EQ(sc.m_v.value()(0, 0), 1.0);
    for (std::size_t j = 1; j < 4; ++j) EXPECT_EQ(sc.m_v.value()(0, j), 0.0);
}

TEST(TemporalScores, IdenticalKeysGiveUniform) {
    ScoreFixture fx(3);
    std::mt19937_64 rng(4);
    Tensor fu = Tensor::matrix(4, 3);
    const Tensor row = detail::randn({3}, rng);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t j = 0; j < 3; ++j) fu(r, j) = row[j];
    ad::Tape t;
    const auto sc = fx.scores(t, fu, detail::randn({4, 3}, rng), {1, 1, 1, 0}, {1, 1, 0, 0});
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(sc.m_u.value()(0, j), 1.0 / 3.0, 1e-15);
    EXPECT_EQ(sc.m_u.value()(0, 3), 0.0);
}

TEST(TemporalScores, MatchesDenseRecomputation) {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        ScoreFixture fx(rep);
        const Tensor fu = detail::randn({4, 3}, rng), fv = detail::randn({4, 3}, rng);
        auto mu = detail::rand_mask(4, rng), mv = detail::rand_mask(4, rng);
        if (std::count(mu.begin(), mu.end(), 1) + std::count(mv.begin(), mv.end(), 1) == 0) mu[0] = 1;
        ad::Tape t;
        const auto sc = fx.scores(t, fu, fv, mu, mv);
        const auto wu = dense_side(fu, mu, fv, mv, fx.ps.value("temporal.wq"), fx.ps.value("temporal.wk"));
        const auto wv = dense_side(fv, mv, fu, mu, fx.ps.value("temporal.wq"), fx.ps.value("temporal.wk"));
        double su = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_NEAR(sc.m_u.value()(0, j), wu[j], 1e-12);
            EXPECT_NEAR(sc.m_v.value()(0, j), wv[j], 1e-12);
            if (!mu[j]) { EXPECT_EQ(sc.m_u.value()(0, j), 0.0); }
            su += sc.m_u.value()(0, j);
        }
        if (std::count(mu.begin(), mu.end(), 1)) { EXPECT_NEAR(su, 1.0, 1e-9); }
    }
}

TEST(TemporalScores, NoContextIsAnError) {
    ScoreFixture fx(1);
    ad::Tape t;
    try {
        fx.scores(t, Tensor::matrix(4, 3), Tensor::matrix(4, 3), {0, 0, 0, 0}, {0, 0, 0, 0});
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "no temporal context");
    }
}

TEST(TopK, Examples) {
    const std::vector<double> s{0.1, 0.5, 0.3};
    auto top = select_top_k(s, {}, 2);
    std::sort(top.begin(), top.end());
    EXPECT_EQ(top, (std::vector<std::size_t>{1, 2}));

    const std::vector<std::uint8_t> live{1, 0, 1};
    EXPECT_EQ(select_top_k(s, live, 10), (std::vector<std::size_t>{2, 0}));

    const std::vector<double> tie{0.4, 0.4};
    const std::vector<double> when{3.0, 8.0};
    EXPECT_EQ(select_top_k(tie, {}, 1, when), std::vector<std::size_t>{1});
    EXPECT_EQ(select_top_k(tie, {}, 1), std::vector<std::size_t>{0});
    EXPECT_THROW(select_top_k(tie, {}, 0), std::invalid_argument);
}

TEST(TopK, MatchesSortOracle) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> coarse(0, 4);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = detail::dim(rng, 1, 12), k = detail::dim(rng, 1, 14);
        std::vector<double> s(n), when(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = coarse(rng) / 4.0;
            when[i] = coarse(rng);
        }
        const auto live = detail::rand_mask(n, rng);
        std::vector<std::tuple<double, double, long>> keyed;
        for (std::size_t i = 0; i < n; ++i)
            if (live[i]) keyed.emplace_back(-s[i], -when[i], long(i));
        std::sort(keyed.begin(), keyed.end());
        std::vector<std::size_t> want;
        for (std::size_t i = 0; i < std::min(k, keyed.size()); ++i) want.push_back(std::size_t(std::get<2>(keyed[i])));
        EXPECT_EQ(select_top_k(s, live, k, when), want);
    }
}

TEST(TemporalRepr, SingleAndTiedSelections) {
    ad::Tape t;
    const std::size_t len = 3;
    const Tensor Fv = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {0, 0}});
    ad::Var F = t.constant(Fv);
    TemporalScores sc{t.constant(Tensor::from_rows({{0.2, 0.5, 0.3}})), t.constant(Tensor::from_rows({{0.5, 0.5, 0.0}}))};
    const auto h = temporal_repr_batched(F, sc, {0, 1, 0}, {1, 1, 0}, {0}, {1}, len).value();
    ASSERT_EQ(h.shape(), (Shape{1, 4}));
    EXPECT_DOUBLE_EQ(h(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(h(0, 1), 4.0);
    EXPECT_DOUBLE_EQ(h(0, 2), 8.0);
    EXPECT_DOUBLE_EQ(h(0, 3), 9.0);
}

TEST(Structural, EmbedExamples) {
    const EventStore base = EventStore::build({ev(0, 1, 5), ev(2, 0, 6), ev(3, 4, 1)});
    const EventStore s = base.with_node_features(NodeFeatures::dense(5, 2, {1, 0, 0, 2, 0, 4, 9, 9, 1, 1}));
    const auto z = structural_embed(s, 0, 10, {10.0, 1}).to_dense(2);
    EXPECT_EQ(z, (std::vector<double>{1, 3}));
    // No neighbours in the window: z = x.
    EXPECT_EQ(structural_embed(s, 0, 10, {2.0, 1}).to_dense(2), (std::vector<double>{1, 0}));
    // Identical neighbours: the mean is any one of them.
    const EventStore same = base.with_node_features(NodeFeatures::dense(5, 2, {0, 0, 3, 5, 3, 5, 0, 0, 0, 0}));
    EXPECT_EQ(structural_embed(same, 0, 10, {10.0, 1}).to_dense(2), (std::vector<double>{3, 5}));
}

TEST(Structural, ScoresExamples) {
    const auto [a, b] = structural_scores({1, 0}, {0, 1}, {{2, 3}}, {{1, 1}, {1, 1}});
    EXPECT_EQ(a, std::vector<double>{1.0});
    ASSERT_EQ(b.size(), 2u);
    EXPECT_DOUBLE_EQ(b[0], 0.5);
    EXPECT_DOUBLE_EQ(b[1], 0.5);
    try {
        (void)structural_scores({1}, {1}, {}, {});
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "no structural context");
    }
    EXPECT_THROW(structural_scores({1, 0}, {1}, {{1}}, {}), DimensionError);
}

TEST(Structural, ScoresAreDistributions) {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t d = detail::dim(rng, 1, 5), nu = detail::dim(rng, 0, 6), nv = detail::dim(rng, 1, 6);
        auto vec = [&] {
            std::vector<double> v(d);
            for (double& x : v) x = std::normal_distribution<double>(0, 3)(rng);
            return v;
        };
        std::vector<std::vector<double>> Zu(nu), Zv(nv);
        for (auto& r : Zu) r = vec();
        for (auto& r : Zv) r = vec();
        const auto [mu, mv] = structural_scores(vec(), vec(), Zu, Zv);
        EXPECT_EQ(mu.size(), nu);
        if (nu) { EXPECT_NEAR(std::accumulate(mu.begin(), mu.end(), 0.0), 1.0, 1e-9); }
        EXPECT_NEAR(std::accumulate(mv.begin(), mv.end(), 0.0), 1.0, 1e-9);
    }
}

TEST(Structural, ReprExamples) {
    const EventStore base = EventStore::build({ev(0, 1, 5), ev(2, 0, 6), ev(3, 4, 1)});
    const EventStore s = base.with_node_features(NodeFeatures::dense(5, 2, {1, 0, 0, 2, 0, 4, 9, 9, 1, 1}));
    const auto nb = s.n_hop_neighbors(0, 10, 10, 1);
    EXPECT_EQ(structural_repr(s.node_features(), 0, nb), structural_embed(s, 0, 10, {10, 1}).to_dense(2));
    const std::vector<NodeId> one{2};
    EXPECT_EQ(structural_repr(s.node_features(), 0, one), (std::vector<double>{1, 4}));
}

namespace {

SigConfig small_config() {
    SigConfig c;
    c.recent_n = 6;
    c.hidden = 5;
    c.k_select = 3;
    c.time.dim = 4;
    c.window = 25;
    return c;
}

}  // namespace

TEST(Forward, WidthsAndScoreDistributions) {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 10; ++rep) {
        const EventStore s = random_store(rng, 8, 60, 2);
        SigModel m = make_model(s, small_config(), rep);
        std::vector<Query> qs;
        for (int i = 0; i < 6; ++i) qs.push_back({NodeId(i), NodeId(i + 1), 40.0 + 10 * i});
        ad::Tape t;
        ForwardOptions o;
        o.trace = true;
        const auto fr = m.forward(t, s, qs, o);
        EXPECT_EQ(fr.h_t.cols(), 2 * m.config().hidden);
        EXPECT_EQ(fr.h_s.cols(), 2 * s.node_features().dim());
        for (const QueryTrace& tr : fr.traces) {
            for (const auto* sc : {&tr.score_u, &tr.score_v, &tr.nscore_u, &tr.nscore_v}) {
                if (sc->empty()) continue;
                EXPECT_NEAR(std::accumulate(sc->begin(), sc->end(), 0.0), 1.0, 1e-9);
            }
            EXPECT_EQ(std::size_t(std::count(tr.sel_u.begin(), tr.sel_u.end(), 1)),
                      std::min(tr.seq_u.size(), m.config().k_select));
        }
        for (double y : fr.y_i.value().values()) {
            EXPECT_GT(y, 0.0);
            EXPECT_LT(y, 1.0);
        }
    }
}

TEST(Forward, StorageOrderInvariance) {
    std::mt19937_64 rng(10);
    for (int rep = 0; rep < 10; ++rep) {
        const EventStore s = random_store(rng, 7, 50, 2);
        std::vector<Event> shuffled(s.events().begin(), s.events().end());
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        const EventStore s2 = with_one_hot_features(EventStore::build(shuffled, s.node_count()));
        SigModel m = make_model(s, small_config(), 3);
        std::vector<Query> qs{{0, 1, 60}, {2, 3, 75}, {4, 6, 99}};
        ForwardOptions o;
        o.trace = true;
        ad::Tape t1, t2;
        const auto a = m.forward(t1, s, qs, o);
        const auto b = m.forward(t2, s2, qs, o);
        EXPECT_EQ(a.h_t.value(), b.h_t.value());
        EXPECT_EQ(a.h_s.value(), b.h_s.value());
        for (std::size_t i = 0; i < qs.size(); ++i) {
            EXPECT_EQ(a.traces[i].sel_u, b.traces[i].sel_u);
            EXPECT_EQ(a.traces[i].sel_v, b.traces[i].sel_v);
            EXPECT_EQ(a.traces[i].nsel_u, b.traces[i].nsel_u);
            EXPECT_EQ(a.traces[i].nb_u, b.traces[i].nb_u);
        }
    }
}

TEST(Forward, CompositeGradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    int checked = 0;
    while (checked < 5) {
        CompositeCase c = random_composite_case(rng);
        const auto r = composite_grad_check(c);
        if (!r.smooth) continue;
        EXPECT_TRUE(r.passed) << r.worst;
        ++checked;
    }
}
