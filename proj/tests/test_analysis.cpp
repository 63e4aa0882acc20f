#include "ebm/analysis.hpp"
#include "ebm/pot.hpp"

#include <gtest/gtest.h>

using namespace ebm;

TEST(Amari, KnownValues) {
    const Mat I = Mat::Identity(2, 2);
    Mat C(2, 2);
    C << 1, 1, 0, 1;
    // rows: 1 + 0, cols: 0 + 1
    EXPECT_NEAR(amari_distance(C, I), 2.0, 1e-14);
    Mat P(3, 3);
    P << 0, 2, 0, 0, 0, -3, 0.5, 0, 0;
    Rng rng(1);
    const Mat B = randn(3, 3, rng);
    EXPECT_NEAR(amari_distance(P * B, B), 0.0, 1e-12);
    EXPECT_NEAR(amari_distance_normalized(C, I), 2.0 / 4.0, 1e-14);
    EXPECT_THROW(amari_distance(I, Mat::Zero(2, 2)), Error);
    EXPECT_THROW(amari_distance(I, Mat::Identity(3, 3)), DimensionError);
}

TEST(Psnr, Definition) {
    const Mat a = Mat::Zero(4, 4);
    const Mat b = Mat::Constant(4, 4, 5.0);
    EXPECT_NEAR(psnr(a, b, 255), 10 * std::log10(255.0 * 255 / 25), 1e-12);
    EXPECT_THROW(psnr(a, a, 255), IdenticalSignal);
    EXPECT_THROW(psnr(a, Mat::Zero(3, 4), 255), DimensionError);
}

TEST(Dip, ReferenceValues) {
    EXPECT_NEAR(dip_statistic({0, 0, 0, 1, 1, 1}), 0.25, 1e-12);
    std::vector<double> even(20);
    for (int i = 0; i < 20; ++i) {
        even[std::size_t(i)] = i;
    }
    EXPECT_NEAR(dip_statistic(even), 1.0 / 40, 1e-12);
    // Bimodal sample; reference value from an independent implementation of Hartigan's algorithm.
    const std::vector<double> x = {
        0.0409191213851825, -4.555665031314182, -1.581901153274221, -2.56776960612793, -2.4526492921104457,
        -2.215597163089766, -4.0199861291472505, -2.2319323776441893, -2.8652130762749417, 1.3229995166448827,
        -1.7742133867720782, -2.3526307943415956, -2.2812874181513503, -2.66804634610895, -3.0551505512051214,
        -2.3908009772346546, -1.518054611493214, -2.2385536065733667, -1.042241297040236, -2.19980212906658,
        -1.9757404349233354, -0.454179148787188, -1.4548944773123553, -2.505228735614018, -2.182838974597735,
        -1.459474868245198, -0.06491196590114723, -2.2696203273419133, -2.2435586790791047, -0.9976863987243088,
        1.113540056839413, 1.708279767560136, 2.882538967456484, 2.580350016190899, 2.0915167032823523,
        2.6701043548284793, -0.8281623068437627, 3.02130681750008, 1.0403552401918583, 0.3313801573440305,
        2.2764457595209997, 2.70054488534939, 1.555232544317216, 0.9235941598991924, 2.0261248335340336,
        1.9472526917571207, 3.4055981660180925, 2.7474079874793507, 2.19381564626462, 3.111633205223992,
        1.7944769500942075, 1.0741004263516318, 2.584058311025248, 2.58253841865569, 1.7851710888731442,
        1.2171914220360338, 2.2291539052132627, -0.4938942784579905, 2.690124770162812, 2.4913682607449914};
    EXPECT_NEAR(dip_statistic(x), 0.08524872742434747, 1e-12);
}

TEST(Dip, PValueSeparatesUnimodalFromBimodal) {
    Rng rng(2);
    std::vector<double> uni(200), bi(200);
    std::normal_distribution<double> n(0, 1);
    for (std::size_t i = 0; i < 200; ++i) {
        uni[i] = n(rng);
        bi[i] = n(rng) * 0.5 + (i % 2 ? 3 : -3);
    }
    EXPECT_GT(dip_test(uni, 500).p_value, 0.05);
    EXPECT_LT(dip_test(bi, 500).p_value, 0.01);
}

TEST(Bands, SignChangesAndWidths) {
    const Vec v = (Vec(6) << 1, 2, -1, -2, 0, 3).finished();
    EXPECT_EQ(sign_changes(v, false), 2);
    EXPECT_EQ(sign_changes(v, true), 2);
    const Vec w = (Vec(4) << 1, -1, 1, -1).finished();
    EXPECT_EQ(sign_changes(w, true), 4);
    EXPECT_DOUBLE_EQ(mean_band_width(w), 1.0);
    EXPECT_DOUBLE_EQ(mean_band_width(Vec::Ones(7)), 7.0);
}

TEST(Gabor, FitRecoversSyntheticParameters) {
    GaborFit truth;
    truth.x0 = 6.3;
    truth.y0 = 5.1;
    truth.theta = 0.7;
    truth.freq = 0.18;
    truth.phase = 0.9;
    truth.sigma_w = 2.0;
    truth.sigma_l = 3.0;
    truth.amplitude = 1.5;
    const Mat img = gabor_image(truth, 12, 12);
    const GaborFit f = fit_gabor(img);
    EXPECT_TRUE(f.good);
    EXPECT_LT(f.residual / f.filter_norm, 1e-4);
    EXPECT_NEAR(f.x0, truth.x0, 1e-3);
    EXPECT_NEAR(f.y0, truth.y0, 1e-3);
    EXPECT_NEAR(f.freq, truth.freq, 1e-4);
    EXPECT_NEAR(std::abs(wrap_pi(2 * (f.theta - truth.theta))), 0.0, 1e-3);
    EXPECT_NEAR(f.n_x(), truth.n_x(), 1e-3);
}

TEST(Gabor, NoiseFitsAreFlagged) {
    Rng rng(3);
    int good = 0;
    for (int k = 0; k < 10; ++k) {
        good += fit_gabor(randn(10, 10, rng)).good;
    }
    EXPECT_LE(good, 2);
    EXPECT_THROW(fit_gabor(Mat::Zero(4, 4)), Error);
}

TEST(Gabor, CanonicalFormKeepsTheImage) {
    GaborFit g;
    g.x0 = 4;
    g.y0 = 4;
    g.theta = 4.0;
    g.freq = -0.2;
    g.phase = 5.0;
    g.sigma_w = -2;
    g.sigma_l = 3;
    g.amplitude = -1;
    const GaborFit c = canonical_gabor(g);
    EXPECT_GE(c.theta, 0.0);
    EXPECT_LT(c.theta, kPi);
    EXPECT_GT(c.freq, 0.0);
    EXPECT_GT(c.amplitude, 0.0);
    EXPECT_LT((gabor_image(g, 9, 9) - gabor_image(c, 9, 9)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Continuity, SmoothMapBeatsShuffledNull) {
    const Index rows = 8, cols = 8;
    Vec smooth(rows * cols), noise(rows * cols);
    Rng rng(4);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            smooth[r * cols + c] = std::fmod((r + c) * kPi / 8, kPi);
        }
    }
    std::uniform_real_distribution<double> u(0, kPi);
    for (auto& v : noise) {
        v = u(rng);
    }
    const std::vector<bool> all(rows * cols, true);
    EXPECT_LT(continuity(smooth, all, rows, cols, {kPi}, 100, 1).ratio(), 0.5);
    EXPECT_NEAR(continuity(noise, all, rows, cols, {kPi}, 100, 1).ratio(), 1.0, 0.2);
    EXPECT_NEAR(PropertyMetric{kPi}(0.1, kPi - 0.1), 0.2, 1e-12);
}

TEST(Tuning, OptimalGratingMatchesFilter) {
    GaborFit g;
    g.x0 = 5;
    g.y0 = 5;
    g.theta = 1.0;
    g.freq = 0.2;
    g.sigma_w = 2.5;
    g.sigma_l = 2.5;
    const Mat img = gabor_image(g, 11, 11);
    Mat F(1, 121);
    for (Index r = 0; r < 11; ++r) {
        for (Index c = 0; c < 11; ++c) {
            F(0, r * 11 + c) = img(r, c);
        }
    }
    const Grating best = optimal_grating(F, nullptr, 0, 11);
    EXPECT_NEAR(std::abs(wrap_pi(2 * (best.theta - g.theta))), 0.0, 0.2);
    EXPECT_NEAR(best.freq, 0.2, 0.05);
}

TEST(Disparity, MeasuresFollowFitParameters) {
    GaborFit l;
    l.freq = 0.25;
    l.phase = 1.0;
    l.x0 = 5.0;
    l.good = true;
    GaborFit r = l;
    EXPECT_THROW(disparity_measures(l, GaborFit{}), Error);
    Disparity d = disparity_measures(l, r);
    EXPECT_NEAR(d.phase_offset, 0.0, 1e-12);
    EXPECT_NEAR(d.position_shift, 0.0, 1e-12);
    r.phase = 0.5;
    r.x0 = 3.0;
    d = disparity_measures(l, r);
    EXPECT_NEAR(d.phase_offset, 0.5, 1e-12);
    EXPECT_NEAR(d.phase_shift, 0.5 / (2 * kPi * 0.25), 1e-12);
    EXPECT_NEAR(d.position_shift, 2.0, 1e-12);
}

TEST(Tuning, CurvesPeakAtTheOptimum) {
    GaborFit g;
    g.x0 = 5;
    g.y0 = 5;
    g.theta = 0.5;
    g.freq = 0.15;
    g.sigma_w = g.sigma_l = 3;
    const Mat img = gabor_image(g, 11, 11);
    Mat Fr(1, 121);
    for (Index r = 0; r < 11; ++r) {
        for (Index c = 0; c < 11; ++c) {
            Fr(0, r * 11 + c) = img(r, c);
        }
    }
    const Vec grid = Vec::LinSpaced(37, 0, kPi);
    const Vec curve = tuning_curve(Fr, nullptr, 0, TuningFamily::Orientation, grid, 11);
    EXPECT_DOUBLE_EQ(curve.maxCoeff(), 1.0);
    Index arg;
    curve.maxCoeff(&arg);
    EXPECT_NEAR(std::abs(wrap_pi(2 * (grid[arg] - 0.5))), 0.0, 0.3);
}
