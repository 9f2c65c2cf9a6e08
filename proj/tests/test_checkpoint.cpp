#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace sig;
using namespace sigtest;

namespace {

std::vector<NamedTensor> sample_records() {
    std::mt19937_64 rng(1);
    return {{"scalar", Tensor::scalar(3.25)},
            {"vec", detail::randn({5}, rng)},
            {"mat", detail::randn({3, 2}, rng)},
            {"weird name.with.dots", Tensor::matrix(1, 1, -0.0)}};
}

}  // namespace

TEST(Checkpoint, StartsWithMagic) {
    const std::string bytes = encode_checkpoint(sample_records());
    EXPECT_EQ(bytes.substr(0, 8), "SIGCKPT1");
}

TEST(Checkpoint, RoundTripIsIdentity) {
    const auto recs = sample_records();
    const auto back = decode_checkpoint(encode_checkpoint(recs));
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(back[i].name, recs[i].name);
        EXPECT_EQ(back[i].value, recs[i].value);
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const auto dir = temp_dir("ckpt_idem");
    write_checkpoint(dir / "a.sig", sample_records());
    write_checkpoint(dir / "b.sig", read_checkpoint(dir / "a.sig"));
    EXPECT_EQ(slurp(dir / "a.sig"), slurp(dir / "b.sig"));
}

TEST(Checkpoint, RejectsUnknownMagic) {
    std::string bytes = encode_checkpoint(sample_records());
    bytes[7] = '2';
    EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, EveryTruncationIsAnError) {
    const std::string bytes = encode_checkpoint(sample_records());
    for (std::size_t n = 0; n < bytes.size(); ++n) {
        EXPECT_THROW(decode_checkpoint(std::string_view(bytes).substr(0, n)), CheckpointError) << n;
    }
}

TEST(Checkpoint, TruncatedFileOnDisk) {
    const auto dir = temp_dir("ckpt_trunc");
    const std::string bytes = encode_checkpoint(sample_records());
    {
        std::ofstream f(dir / "t.sig", std::ios::binary);
        f.write(bytes.data(), std::streamsize(bytes.size() - 3));
    }
    EXPECT_THROW(read_checkpoint(dir / "t.sig"), CheckpointError);
    EXPECT_THROW(read_checkpoint(dir / "missing.sig"), CheckpointError);
}

TEST(Checkpoint, TrailingBytesRejected) {
    std::string bytes = encode_checkpoint(sample_records());
    bytes.push_back('x');
    EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, ModelRoundTripKeepsParametersAndDictionary) {
    std::mt19937_64 rng(9);
    const EventStore s = random_store(rng, 6, 40, 2);
    SigConfig cfg;
    cfg.hidden = 4;
    cfg.recent_n = 5;
    cfg.time.dim = 3;
    SigModel m = make_model(s, cfg, 4);
    ConfounderDictionary d;
    d.centroids = detail::randn({3, m.link_width()}, rng);
    m.dictionary = d;
    const auto dir = temp_dir("ckpt_model");
    save_model(dir / "m.sig", m, {{"seed", 4.0}});
    const LoadedModel back = load_model(dir / "m.sig");
    EXPECT_TRUE(back.model.params().values_equal(m.params()));
    ASSERT_TRUE(back.model.dictionary.has_value());
    EXPECT_EQ(back.model.dictionary->centroids, d.centroids);
    EXPECT_EQ(back.meta.at("seed"), 4.0);
    EXPECT_EQ(back.model.config().window, m.config().window);
    save_model(dir / "m2.sig", back.model, back.meta);
    EXPECT_EQ(slurp(dir / "m.sig"), slurp(dir / "m2.sig"));
}
