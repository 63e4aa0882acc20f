#include "ebm/core.hpp"
#include "ebm/model.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ebm;

TEST(Core, SigmoidIsStableAtExtremes) {
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_NEAR(sigmoid(800.0), 1.0, 1e-300);
    EXPECT_GE(sigmoid(-800.0), 0.0);
    EXPECT_NEAR(sigmoid(3.0) + sigmoid(-3.0), 1.0, 1e-15);
    const Vec v = sigmoid(Vec::LinSpaced(5, -2, 2));
    EXPECT_NEAR(v[2], 0.5, 1e-15);
}

TEST(Core, SoftplusMatchesDirectFormula) {
    for (double a : {-30.0, -2.0, 0.0, 1.5, 30.0}) {
        EXPECT_NEAR(softplus(a), std::log1p(std::exp(a)), 1e-12 * (1 + std::abs(a)));
    }
    EXPECT_NEAR(softplus(1000.0), 1000.0, 1e-9);
    EXPECT_GT(softplus(-1000.0), -1e-300);
}

TEST(Core, StreamSeedsAreStableAndDistinct) {
    EXPECT_EQ(stream_seed(1, "hmc-chain", 3), stream_seed(1, "hmc-chain", 3));
    std::set<std::uint64_t> seen;
    for (std::uint64_t m : {1, 2}) {
        for (const char* c : {"a", "b"}) {
            for (std::uint64_t i = 0; i < 4; ++i) {
                seen.insert(stream_seed(m, c, i));
            }
        }
    }
    EXPECT_EQ(seen.size(), 16u);
    Rng a = make_rng(9, "x"), b = make_rng(9, "x");
    EXPECT_EQ(a(), b());
}

TEST(Core, RandnMoments) {
    Rng rng(4);
    const Vec v = randn(200000, rng, 2.0);
    EXPECT_NEAR(v.mean(), 0.0, 0.02);
    EXPECT_NEAR(std::sqrt((v.array() - v.mean()).square().mean()), 2.0, 0.02);
    EXPECT_EQ(randn(3, 4, rng).rows(), 3);
}

TEST(Core, ParallelForCoversEveryIndexAndPropagatesErrors) {
    for (unsigned t : {1u, 3u}) {
        set_thread_count(t);
        std::vector<int> hit(100, 0);
        parallel_for(100, [&](Index i) { hit[static_cast<std::size_t>(i)] += 1; });
        for (int h : hit) {
            EXPECT_EQ(h, 1);
        }
        EXPECT_THROW(parallel_for(10, [](Index i) {
                         if (i == 7) {
                             throw Error("boom");
                         }
                     }),
                     Error);
    }
    set_thread_count(1);
}

TEST(Core, WrapPi) {
    EXPECT_NEAR(std::abs(wrap_pi(3 * kPi)), kPi, 1e-9);
    EXPECT_NEAR(wrap_pi(2.5 * kPi), 0.5 * kPi, 1e-12);
    EXPECT_NEAR(wrap_pi(0.5), 0.5, 1e-15);
    EXPECT_NEAR(wrap_pi(-0.5 - 2 * kPi), -0.5, 1e-12);
}

TEST(Core, RequireDimThrowsDimensionError) {
    EXPECT_NO_THROW(require_dim(3, 3, "x"));
    EXPECT_THROW(require_dim(2, 3, "x"), DimensionError);
}

TEST(Layout, BlocksAreContiguousAndNamed) {
    ParamLayout l;
    l.add("J", 2, 3).add("b", 2);
    EXPECT_EQ(l.size(), 8);
    EXPECT_TRUE(l.has("b"));
    EXPECT_FALSE(l.has("a"));
    EXPECT_EQ(l.block("b").offset, 6);
    EXPECT_THROW(l.block("a"), Error);
    Vec flat = Vec::LinSpaced(8, 0, 7);
    const Mat J = block_view(flat, l.block("J"));
    EXPECT_EQ(J(1, 0), 1.0);  // column-major view
}
