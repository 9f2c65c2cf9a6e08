#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace sig;
using namespace sigtest;

TEST(Config, DefaultsAreTheReferenceValues) {
    const RunConfig c;
    EXPECT_EQ(c.model.recent_n, 50u);
    EXPECT_EQ(c.model.hidden, 100u);
    EXPECT_EQ(c.model.hops, 1u);
    EXPECT_EQ(c.model.k_select, 20u);
    EXPECT_EQ(c.model.k_confounders, 10u);
    EXPECT_EQ(c.model.lambda.iid, 1.0);
    EXPECT_EQ(c.model.lambda.temporal, 0.5);
    EXPECT_EQ(c.model.lambda.structural, 0.5);
    EXPECT_EQ(c.model.time.alpha, 10.0);
    EXPECT_EQ(c.model.time.beta, 10.0);
    EXPECT_EQ(c.train.epochs, 300u);
    EXPECT_EQ(c.train.batch_size, 600u);
    EXPECT_EQ(c.train.lr, 1e-4);
    EXPECT_EQ(c.train.weight_decay, 1e-6);
    EXPECT_EQ(c.train.neg_ratio_train, 5u);
    EXPECT_EQ(c.train.neg_ratio_eval, 1u);
    EXPECT_EQ(c.train.warmup_epochs, 3u);
    EXPECT_EQ(c.data.one_hot_cap, 20000u);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParsesCommentsAndBlankLines) {
    RunConfig c;
    std::istringstream in("# a comment\n\nhidden = 64   # trailing\n lr=0.001\nbipartite = true\nlambda_t = 0\n");
    apply_config(c, in);
    EXPECT_EQ(c.model.hidden, 64u);
    EXPECT_EQ(c.train.lr, 0.001);
    EXPECT_TRUE(c.data.bipartite);
    EXPECT_EQ(c.model.lambda.temporal, 0.0);
}

TEST(Config, UnknownKeyIsAnErrorWithLocation) {
    RunConfig c;
    std::istringstream in("hidden = 8\nhiden = 9\n");
    try {
        apply_config(c, in, "run.cfg");
        FAIL();
    } catch (const ConfigError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("run.cfg:2"), std::string::npos) << m;
        EXPECT_NE(m.find("hiden"), std::string::npos) << m;
    }
}

TEST(Config, MalformedValues) {
    RunConfig c;
    std::istringstream a("hidden = -3\n"), b("lr = fast\n"), d("bipartite = maybe\n"), e("no equals sign\n");
    EXPECT_THROW(apply_config(c, a), ConfigError);
    EXPECT_THROW(apply_config(c, b), ConfigError);
    EXPECT_THROW(apply_config(c, d), ConfigError);
    EXPECT_THROW(apply_config(c, e), ConfigError);
}

TEST(Config, WriteThenReadIsIdentity) {
    RunConfig c;
    c.model.hidden = 37;
    c.model.window = 123.456789012345;
    c.train.lr = 3.3e-5;
    c.train.seed = 99;
    c.data.val_frac = 0.1;
    c.data.bipartite = true;
    std::ostringstream out;
    write_config(out, c);
    RunConfig back;
    std::istringstream in(out.str());
    apply_config(back, in);
    EXPECT_EQ(resolved_config(back), resolved_config(c));
    EXPECT_EQ(back.model.window, c.model.window);
}

TEST(Config, ValidationRejectsBadFractions) {
    RunConfig c;
    c.data.train_frac = 0.9;
    c.data.val_frac = 0.2;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LargeGraphsFallBackToLandmarks) {
    std::mt19937_64 rng(1);
    const EventStore s = random_store(rng, 30, 100, 1);
    DataConfig d;
    d.one_hot_cap = 10;
    d.landmarks = 4;
    const EventStore x = with_default_node_features(s, d, 1);
    EXPECT_FALSE(x.node_features().is_one_hot());
    EXPECT_EQ(x.node_features().dim(), 4u);
    d.one_hot_cap = 30;
    EXPECT_TRUE(with_default_node_features(s, d, 1).node_features().is_one_hot());
}
