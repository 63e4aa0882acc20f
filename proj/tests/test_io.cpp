#include "ebm/io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <sstream>

using namespace ebm;

namespace {

std::string bytes(const Container& c) {
    std::ostringstream os(std::ios::binary);
    write_container(os, c);
    return os.str();
}

Container reread(const std::string& s) {
    std::istringstream is(s, std::ios::binary);
    return read_container(is);
}

}  // namespace

TEST(Container, HeaderLayout) {
    Container c;
    c.family = "test";
    c.set("k", "v");
    c.put("A", (Mat(1, 2) << 1.0, -2.5).finished());
    const std::string s = bytes(c);
    EXPECT_EQ(s.substr(0, 4), "EBMC");
    std::uint32_t len = 0;
    std::memcpy(&len, s.data() + 4, 4);
    const std::string header = s.substr(8, len);
    EXPECT_NE(header.find("version 1\n"), std::string::npos);
    EXPECT_NE(header.find("family test\n"), std::string::npos);
    EXPECT_NE(header.find("block A 1 2\n"), std::string::npos);
    EXPECT_EQ(s.size(), 8 + len + 16);
    double v = 0;
    std::memcpy(&v, s.data() + 8 + len + 8, 8);
    EXPECT_EQ(v, -2.5);
}

TEST(Container, RejectsCorruptStreams) {
    EXPECT_THROW(reread("XXXX"), Error);
    Container c;
    c.family = "test";
    c.put("A", Mat::Ones(3, 3));
    const std::string s = bytes(c);
    EXPECT_THROW(reread(s.substr(0, s.size() - 4)), Error);
    const Container back = reread(s);
    EXPECT_THROW(back.block("B"), Error);
    EXPECT_THROW(back.get("missing"), Error);
    EXPECT_EQ(back.get("missing", "x"), "x");
    EXPECT_THROW(pot_from(back), Error);
}

TEST(RoundTrip, SigmoidNetIsByteIdentical) {
    Rng rng(1);
    const SigmoidNet m = SigmoidNet::random(3, 4, 0.7, rng, SigmoidEnergy::Logistic);
    const std::string a = bytes(to_container(m));
    const SigmoidNet back = sigmoid_net_from(reread(a));
    EXPECT_EQ(back.params(), m.params());
    EXPECT_EQ(back.form(), SigmoidEnergy::Logistic);
    EXPECT_EQ(bytes(to_container(back)), a);
}

TEST(RoundTrip, PotVariantsAreByteIdentical) {
    Rng rng(2);
    PotParams p = make_topographic_pot(3, 3, 4, Neighborhood::square(3), 0.5, rng).parameters();
    p.norm_constrained = true;
    p.norm = 0.7;
    p.train_W = true;
    p.exact_sampling = true;
    for (const PotModel& m : {PotModel::random(5, 4, 0.5, rng), PotModel(p)}) {
        const std::string a = bytes(to_container(m));
        const PotModel back = pot_from(reread(a));
        EXPECT_EQ(back.params(), m.params());
        EXPECT_EQ(back.layout(), m.layout());
        EXPECT_EQ(back.parameters().exact_sampling, m.parameters().exact_sampling);
        EXPECT_EQ(back.parameters().grid_rows, m.parameters().grid_rows);
        EXPECT_EQ(bytes(to_container(back)), a);
    }
}

TEST(RoundTrip, BoltzmannIsByteIdentical) {
    Rng rng(3);
    BmParams p = BmParams::zeros(4, 3);
    p.J = randn(4, 3, rng).cwiseAbs();
    p.K = dog_lateral_weights(Lattice::ring(3), 1.0, 0.5, 0.2);
    p.nonneg_J = true;
    const BoltzmannModel m(p, true);
    const std::string a = bytes(to_container(m));
    const BoltzmannModel back = boltzmann_from(reread(a));
    EXPECT_EQ(back.params(), m.params());
    EXPECT_TRUE(back.learns_lateral());
    EXPECT_TRUE(back.parameters().nonneg_J);
    EXPECT_EQ(bytes(to_container(back)), a);
}

TEST(RoundTrip, WhitenerAndPatchesAreByteIdentical) {
    Rng rng(4);
    const Mat X = randn(100, 5, rng);
    const WhiteningTransform w = fit_whitener(X, 3, WhitenMode::ZCA);
    const std::string a = bytes(to_container(w));
    const WhiteningTransform wb = whitener_from(reread(a));
    EXPECT_EQ(wb.forward, w.forward);
    EXPECT_EQ(wb.mode, WhitenMode::ZCA);
    EXPECT_EQ(bytes(to_container(wb)), a);

    PatchBatch b{X, 1, 5, 1, Stage::Whitened};
    const std::string pa = bytes(to_container(b));
    const PatchBatch pb = patches_from(reread(pa));
    EXPECT_EQ(pb.data, X);
    EXPECT_EQ(pb.stage, Stage::Whitened);
    EXPECT_EQ(bytes(to_container(pb)), pa);
}

TEST(RoundTrip, FilesOnDisk) {
    Rng rng(5);
    const PotModel m = PotModel::random(2, 2, 0.5, rng);
    const std::string path = ::testing::TempDir() + "/m.ebm";
    save_container(path, to_container(m));
    EXPECT_EQ(pot_from(load_container(path)).params(), m.params());
    EXPECT_THROW(load_container(path + ".missing"), Error);
}

TEST(Numbers, ShortestRoundTripFormatting) {
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02e23}) {
        EXPECT_EQ(parse_double(format_double(v)), v);
    }
    EXPECT_THROW(parse_double("1.5x"), Error);
}

TEST(Config, SectionsCommentsAndDump) {
    std::istringstream in("# top\nseed = 3\n[train]\nlr = 0.05\n epochs=10 \n[pot]\nalpha=1.5\n");
    const Config c = Config::parse(in);
    EXPECT_EQ(c.integer("seed", 0), 3);
    EXPECT_DOUBLE_EQ(c.num("train.lr", 0), 0.05);
    EXPECT_EQ(c.integer("train.epochs", 0), 10);
    EXPECT_EQ(c.str("missing", "d"), "d");
    std::ostringstream out;
    c.dump(out);
    std::istringstream again(out.str());
    EXPECT_EQ(Config::parse(again).values(), c.values());
    std::istringstream bad("novalue\n");
    EXPECT_THROW(Config::parse(bad), Error);
}

TEST(Config, TypedAccessorsValidate) {
    Config c(std::map<std::string, std::string>{{"a", "yes"}, {"b", "maybe"}, {"n", "1.5"}});
    EXPECT_TRUE(c.flag("a", false));
    EXPECT_THROW(c.flag("b", false), Error);
    EXPECT_THROW(c.integer("n", 0), Error);
    EXPECT_FALSE(c.flag("zz", false));
}

TEST(Config, EnvironmentOverridesKnownKeys) {
    EXPECT_EQ(Config::env_name("train.learning-rate"), "EBM_TRAIN_LEARNING_RATE");
    Config c(std::map<std::string, std::string>{{"train.lr", "0.1"}});
    ::setenv("EBM_TRAIN_LR", "0.2", 1);
    ::setenv("EBM_OTHER", "9", 1);
    c.apply_env({"train.lr"});
    ::unsetenv("EBM_TRAIN_LR");
    ::unsetenv("EBM_OTHER");
    EXPECT_DOUBLE_EQ(c.num("train.lr", 0), 0.2);
    EXPECT_FALSE(c.has("other"));
}
