// Acceptance runner: one PASS/FAIL line per criterion.
//
// EBM_ACCEPT_ONLY=1,4,9 restricts the run to a subset of criteria.

#include "ebm/ebm.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace ebm;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::vector<Image> load_images(Index downsample_factor = 1) {
    std::vector<Image> out;
    for (const char* n : {"camera", "astronaut", "chelsea", "coffee", "rocket"}) {
        Image im = read_pgm(std::string(EBM_DATA_DIR) + "/images/" + n + ".pgm");
        out.push_back(downsample_factor > 1 ? downsample(im, downsample_factor) : im);
    }
    return out;
}

TrainSchedule annealed_schedule(Index iterations, double lr) {
    TrainSchedule s;
    s.batch_size = 100;
    s.epochs = 1000000;
    s.max_iterations = iterations;
    s.momentum = 0.9;
    s.learning_rate = lr;
    s.group_scale["alpha"] = 0.0;
    s.record_every = iterations;
    s.anneal = {{0, lr}, {iterations / 2, lr / 4}, {3 * iterations / 4, lr / 20}};
    return s;
}

// Central differences of f around theta.
Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& theta, double h) {
    Vec g(theta.size());
    for (Index k = 0; k < theta.size(); ++k) {
        Vec a = theta, b = theta;
        a[k] += h;
        b[k] -= h;
        g[k] = (f(a) - f(b)) / (2 * h);
    }
    return g;
}

double rel_err(const Vec& g, const Vec& ref) {
    return (g - ref).norm() / std::max(ref.norm(), 1e-12);
}

// ---------------------------------------------------------------------------

Outcome criterion_bss() {
    const int S = 5;
    const Index n = 20000;
    Rng rng(5);
    Mat src(n, S);
    std::exponential_distribution<double> ex(1.0);
    std::bernoulli_distribution coin(0.5);
    for (Index i = 0; i < n; ++i) {
        for (int j = 0; j < S; ++j) {
            src(i, j) = (coin(rng) ? 1 : -1) * ex(rng);
        }
    }
    const Mat A = randn(S, S, rng);
    const Mat X = src * A.transpose();
    const WhiteningTransform w = fit_whitener(X, S, WhitenMode::PCA);
    const Mat Xw = apply_whitener(w, X);
    const Mat truth = A.inverse() * w.inverse;  // whitened data -> sources

    TrainSchedule s;
    s.batch_size = 100;
    s.epochs = 1000000;
    s.max_iterations = 5 * 2000;
    s.momentum = 0.9;
    s.anneal = TrainSchedule::stepwise({0.05, 0.025, 0.005, 0.0025, 0.0005}, 2000);
    s.record_every = 1000;
    TrainOptions opt;
    opt.hmc.leapfrog_steps = 30;
    opt.hmc.step_size = 0.1;
    opt.seed = 3;
    double d[2];
    for (int mode = 0; mode < 2; ++mode) {
        Rng r(9);
        const SigmoidNet m0 = SigmoidNet::random(S, S, 0.1, r, SigmoidEnergy::Logistic);
        const auto est = mode == 0 ? exact_estimator<SigmoidNet>() : cd_estimator<SigmoidNet>(s, 3);
        const auto res = train(m0, Xw, s, est, opt);
        d[mode] = amari_distance(res.model.parameters().J, truth);
    }
    const bool ok = d[0] < 0.5 && d[1] < 0.5 && d[1] <= 1.5 * d[0];
    return {ok, fmt("%d sources, Amari exact %.3f, HMC-CD %.3f (ratio %.2f; need both < 0.5, ratio <= 1.5)", S, d[0],
                    d[1], d[1] / d[0])};
}

Outcome criterion_square_pot() {
    const Index side = 9, dim = 64, iters = 80000;
    auto pb = extract_patches(load_images(), side, 40000, 1);
    preprocess_inplace(pb, true);
    const WhiteningTransform w = fit_whitener(pb.data, dim, WhitenMode::PCA);
    const Mat X = apply_whitener(w, pb.data);
    const TrainSchedule s = annealed_schedule(iters, 0.01);
    Mat J[2];
    for (int mode = 0; mode < 2; ++mode) {
        Rng r(9);
        const PotModel m0 = PotModel::random(dim, dim, 0.1, r);
        TrainOptions opt;
        opt.seed = 3 + mode;
        const auto est = mode == 0 ? exact_estimator<PotModel>() : cd_estimator<PotModel>(s, 3 + mode);
        J[mode] = train(m0, X, s, est, opt).model.parameters().J;
    }
    const double d = amari_distance_normalized(J[1], J[0]);
    Rng nr(21);
    double null = 0.0;
    for (int k = 0; k < 20; ++k) {
        null += amari_distance_normalized(randn(dim, dim, nr), randn(dim, dim, nr)) / 20;
    }
    const bool ok = d < 0.4 && d < 0.5 * null;
    return {ok, fmt("%ld-dim, normalized Amari(CD, exact) %.3f vs random-pair null %.3f (need < 0.4 and < 0.5x null)",
                    long(dim), d, null)};
}

Outcome criterion_gradients() {
    const int cases = 100;
    std::vector<std::pair<std::string, double>> worst;
    auto track = [&](const std::string& name, double e) {
        for (auto& [n, v] : worst) {
            if (n == name) {
                v = std::max(v, e);
                return;
            }
        }
        worst.emplace_back(name, e);
    };
    Rng rng(31);
    for (int c = 0; c < cases; ++c) {
        for (SigmoidEnergy form : {SigmoidEnergy::Weighted, SigmoidEnergy::Logistic}) {
            SigmoidNet m = SigmoidNet::random(4, 3, 0.8, rng, form);
            m.parameters().b = randn(4, rng, 0.5);
            m.parameters().a = randn(4, rng, 1.0);
            const Vec x = randn(3, rng);
            const Vec th = m.params();
            auto f = [&](const Vec& t) {
                SigmoidNet q = m;
                q.set_params(t);
                return q.energy(x);
            };
            const std::string tag = form == SigmoidEnergy::Weighted ? "sigmoid-net" : "sigmoid-net/logistic";
            track(tag, rel_err(m.energy_param_grad(x), central_diff(f, th, 1e-5)));
            track(tag + " dE/dx", rel_err(m.energy_state_grad(x), central_diff([&](const Vec& v) { return m.energy(v); }, x, 1e-5)));
        }
        {
            PotModel m = PotModel::random(5, 4, 0.7, rng);
            PotParams p = m.parameters();
            p.alpha = (Vec::Random(5, 1).array() * 0.5 + 1.5).matrix();
            m = PotModel(p);
            const Vec x = randn(4, rng);
            auto f = [&](const Vec& t) {
                PotModel q = m;
                q.set_params(t);
                return q.energy(x);
            };
            track("pot", rel_err(m.energy_param_grad(x), central_diff(f, m.params(), 1e-5)));
            track("pot dE/dx", rel_err(m.energy_state_grad(x), central_diff([&](const Vec& v) { return m.energy(v); }, x, 1e-5)));
        }
        {
            PotModel t = make_topographic_pot(3, 3, 6, Neighborhood::square(3), 0.4, rng);
            PotParams p = t.parameters();
            p.train_W = true;
            p.W = (p.W.array() * (0.5 + Mat::Random(p.W.rows(), p.W.cols()).array().abs())).matrix();
            const PotModel hw(p);
            p.train_W = false;
            p.norm_constrained = true;
            p.norm = 0.8 + 0.4 * std::abs(randn(1, rng)[0]);
            const PotModel hn(p);
            p.norm_constrained = false;
            p.alpha = Vec::Constant(1, 1.7);
            const PotModel hs(p);
            const Vec x = randn(6, rng);
            for (const auto& [tag, m] : {std::pair<std::string, const PotModel*>{"pot/hierarchical", &hw},
                                         {"pot/norm-constrained", &hn},
                                         {"pot/shared-alpha", &hs}}) {
                auto f = [&, mp = m](const Vec& th) {
                    PotModel q = *mp;
                    q.set_params(th);
                    return q.energy(x);
                };
                track(tag, rel_err(m->energy_param_grad(x), central_diff(f, m->params(), 1e-5)));
            }
        }
        {
            BmParams p = BmParams::zeros(5, 4);
            p.J = randn(5, 4, rng, 0.7);
            Mat K = randn(4, 4, rng, 0.3);
            p.K = K + K.transpose();
            p.b_v = randn(5, rng, 0.5);
            p.b_h = randn(4, rng, 0.5);
            MeanFieldConfig mf;
            mf.tol = 1e-14;
            mf.max_iter = 100000;
            const BoltzmannModel m(p, true, mf);
            const Vec v = (Vec::Random(5).array() > 0).cast<double>();
            const ParamLayout l = m.layout();
            const Vec g = m.energy_param_grad(v);
            // K is symmetric with a zero diagonal: perturb each pair (i, j), (j, i) together.
            auto f = [&](const Vec& th) {
                BoltzmannModel q = m;
                q.set_params(th);
                return q.energy(v);
            };
            const Vec th = m.params();
            const ParamBlock& kb = l.block("K");
            Vec gr, fd;
            std::vector<double> ga, fa;
            for (Index k = 0; k < th.size(); ++k) {
                const bool in_k = k >= kb.offset && k < kb.offset + kb.size();
                Index i = 0, j = 0;
                if (in_k) {
                    i = (k - kb.offset) % 4;
                    j = (k - kb.offset) / 4;
                    if (i >= j) {
                        continue;
                    }
                }
                const Index kt = in_k ? kb.offset + i * 4 + j : k;
                Vec a = th, b = th;
                a[k] += 1e-5;
                b[k] -= 1e-5;
                if (in_k) {
                    a[kt] += 1e-5;
                    b[kt] -= 1e-5;
                }
                fa.push_back((f(a) - f(b)) / 2e-5);
                ga.push_back(in_k ? g[k] + g[kt] : g[k]);
            }
            track("boltzmann (mean-field free energy)",
                  rel_err(Eigen::Map<Vec>(ga.data(), Index(ga.size())), Eigen::Map<Vec>(fa.data(), Index(fa.size()))));

            // Exact log-likelihood of a small machine against its enumerated gradient.
            const Mat data = (Mat::Random(8, 5).array() > 0).cast<double>();
            const BmGrad eg = exact_ml_grad(p, data);
            auto ll = [&](const BmParams& q) { return exact_log_likelihood(q, data); };
            std::vector<double> e1, e2;
            auto probe = [&](auto&& set, double analytic) {
                BmParams a = p, b = p;
                set(a, 1e-5);
                set(b, -1e-5);
                e1.push_back((ll(a) - ll(b)) / 2e-5);
                e2.push_back(analytic);
            };
            for (Index i = 0; i < 5; ++i) {
                for (Index j = 0; j < 4; ++j) {
                    probe([&](BmParams& q, double h) { q.J(i, j) += h; }, eg.dJ(i, j));
                }
                probe([&](BmParams& q, double h) { q.b_v[i] += h; }, eg.db_v[i]);
            }
            for (Index i = 0; i < 4; ++i) {
                probe([&](BmParams& q, double h) { q.b_h[i] += h; }, eg.db_h[i]);
                for (Index j = i + 1; j < 4; ++j) {
                    probe([&](BmParams& q, double h) { q.K(i, j) += h; q.K(j, i) += h; }, eg.dK(i, j));
                }
            }
            track("boltzmann (exact log-likelihood)",
                  rel_err(Eigen::Map<Vec>(e2.data(), Index(e2.size())), Eigen::Map<Vec>(e1.data(), Index(e1.size()))));
        }
    }
    bool ok = true;
    std::ostringstream os;
    os << cases << " cases each; worst rel. err:";
    for (const auto& [n, e] : worst) {
        ok = ok && e < 1e-5;
        os << ' ' << n << '=' << fmt("%.1e", e) << ';';
    }
    os << " (need < 1e-5)";
    return {ok, os.str()};
}

Outcome criterion_conditionals() {
    const Index draws = 100000;
    Rng rng(41);
    std::ostringstream os;
    bool ok = true;

    // u | x: Gamma(alpha, rate 1 + z / 2).
    PotParams p;
    p.J = randn(4, 4, rng, 0.8);
    p.alpha = (Vec(4) << 3.0, 4.0, 5.0, 6.0).finished();
    const PotModel m(p);
    const Vec x = randn(4, rng);
    const auto smp = m.make_gibbs_sampler();
    const Vec z = m.features(x).second;
    Mat U(draws, 4);
    for (Index k = 0; k < draws; ++k) {
        U.row(k) = smp.sample_u(x, rng).transpose();
    }
    double worst_u = 0.0;
    for (Index i = 0; i < 4; ++i) {
        const double rate = 1.0 + 0.5 * z[i];
        const double m1 = p.alpha[i] / rate, m2 = p.alpha[i] * (p.alpha[i] + 1) / (rate * rate);
        const double e1 = U.col(i).mean(), e2 = U.col(i).squaredNorm() / double(draws);
        worst_u = std::max({worst_u, std::abs(e1 - m1) / m1, std::abs(e2 - m2) / m2});
    }
    ok = ok && worst_u < 0.01;
    os << fmt("Gamma E[u], E[u^2] worst rel. err %.4f", worst_u);

    // x | u: N(0, (J^T V J)^-1), complete (inverse) and overcomplete (Cholesky) paths.
    auto gauss_check = [&](const PotModel& model, const std::string& tag) {
        const auto s = model.make_gibbs_sampler(true);
        const Index d = model.state_dim();
        const Vec u = (Vec::Random(model.parameters().top_units()).array().abs() + 0.3).matrix();
        const Mat Je = model.effective_filters();
        const Mat cov = (Je.transpose() * u.asDiagonal() * Je).inverse();
        Mat Xs(draws, d);
        for (Index k = 0; k < draws; ++k) {
            Xs.row(k) = s.sample_x(u, rng).transpose();
        }
        const Vec mu = Xs.colwise().mean().transpose();
        const Mat C = (Xs.rowwise() - mu.transpose()).transpose() * (Xs.rowwise() - mu.transpose()) / double(draws - 1);
        const double emean = (mu.array() / cov.diagonal().array().sqrt()).abs().maxCoeff();
        const double ecov = (C - cov).norm() / cov.norm();
        ok = ok && emean < 0.01 && ecov < 0.01;
        os << fmt("; Gaussian %s mean/sd %.4f cov rel. err %.4f", tag.c_str(), emean, ecov);
    };
    gauss_check(m, "complete");
    gauss_check(PotModel::random(7, 4, 0.8, rng), "overcomplete");

    // Integrating u out of the joint must reproduce exp(-E(x)) up to one constant.
    PotParams hp;
    hp.J = randn(3, 2, rng, 0.9);
    hp.hierarchical = true;
    hp.W = (Mat(2, 3) << 1.0, 0.5, 0.0, 0.0, 0.7, 1.2).finished();
    hp.alpha = (Vec(2) << 1.5, 2.5).finished();
    const PotModel hm(hp);
    boost::math::quadrature::exp_sinh<double> integrator;
    std::vector<double> ratios;
    for (int k = 0; k < 12; ++k) {
        const Vec xk = randn(2, rng, 1.5);
        auto inner = [&](double u1) {
            return integrator.integrate(
                [&](double u2) { return std::exp(-hm.joint_energy(xk, (Vec(2) << u1, u2).finished())); }, 1e-12);
        };
        const double zx = integrator.integrate(inner, 1e-12);
        ratios.push_back(zx / std::exp(-hm.energy(xk)));
    }
    const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
    const double spread = (*hi - *lo) / *lo;
    const double expect = std::tgamma(1.5) * std::tgamma(2.5);
    ok = ok && spread < 1e-6;
    os << fmt("; joint/marginal ratio spread %.1e over 12 points (ratio %.8f, Gamma product %.8f)", spread, *lo, expect);
    os << " (need 1%, 1e-6)";
    return {ok, os.str()};
}

Outcome criterion_tiny_bm() {
    const Index nv = 6, nh = 4;
    std::ostringstream os;
    bool ok = true;
    Rng rng(51);
    auto random_bm = [&](double k_sd) {
        BmParams p = BmParams::zeros(nv, nh);
        p.J = randn(nv, nh, rng, 0.8);
        p.b_v = randn(nv, rng, 0.4);
        p.b_h = randn(nh, rng, 0.4);
        if (k_sd > 0) {
            Mat K = randn(nh, nh, rng, k_sd);
            p.K = K + K.transpose();
            p.K.diagonal().setZero();
        }
        return p;
    };
    // Exact samples of visibles from a teacher machine.
    auto teacher_data = [&](const BmParams& t, Index rows) {
        std::vector<double> w(std::size_t{1} << nv);
        Mat states(Index(w.size()), nv);
        for (std::size_t s = 0; s < w.size(); ++s) {
            for (Index i = 0; i < nv; ++i) {
                states(Index(s), i) = double((s >> i) & 1U);
            }
            w[s] = std::exp(exact_log_likelihood(t, states.row(Index(s))));
        }
        std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
        Mat out(rows, nv);
        for (Index r = 0; r < rows; ++r) {
            out.row(r) = states.row(Index(pick(rng)));
        }
        return out;
    };
    for (double k_sd : {0.0, 0.3}) {
        const BmParams teacher = random_bm(k_sd);
        const BmParams p = random_bm(k_sd);
        const Mat data = teacher_data(teacher, 20000);
        const Vec exact = exact_ml_grad(p, data).flatten();
        const Vec cd = gibbs_cd_grads(p, data, 200, 7).flatten();
        const double cosine = exact.dot(cd) / (exact.norm() * cd.norm());
        ok = ok && cosine > 0.99;
        os << fmt("%s cos(exact, CD-200) %.4f; ", k_sd > 0 ? "lateral BM" : "RBM", cosine);
    }
    // Mean-field marginals against enumeration under weak lateral coupling.
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        BmParams p = random_bm(0.0);
        Mat K = randn(nh, nh, rng, 0.1);
        p.K = K + K.transpose();
        p.K.diagonal().setZero();
        for (std::uint64_t s = 0; s < (std::uint64_t{1} << nv); ++s) {
            Vec v(nv);
            for (Index i = 0; i < nv; ++i) {
                v[i] = double((s >> i) & 1U);
            }
            const Vec mf = mean_field_hidden(p, v).m;
            worst = std::max(worst, (mf - exact_hidden_conditional(p, v).mean).cwiseAbs().maxCoeff());
        }
    }
    ok = ok && worst < 0.05;
    os << fmt("mean-field max |m - exact| %.4f (need cos > 0.99, MF < 0.05)", worst);
    return {ok, os.str()};
}

struct OcularityRun {
    int sign_changes = 0;
    double band_width = 0.0;
    DipTest dip;
};

OcularityRun ocular_dominance_run(double shift_sd, std::uint64_t seed) {
    const Index n = 51;
    StereoInputConfig cfg;
    cfg.shift_sd = shift_sd;
    const Mat data = gen_stereo_patterns(cfg, 20000, seed).stacked();
    Rng rng = make_rng(seed, "init");
    const Lattice ring = Lattice::ring(n);
    const Mat JL = init_retinotopic_weights(ring, ring, 30, 0.1, 0, rng);
    BmParams p = BmParams::zeros(2 * n, n);
    p.J.topRows(n) = JL + randn(n, n, rng, 0.01);
    p.J.bottomRows(n) = JL + randn(n, n, rng, 0.01);
    p.K = dog_lateral_weights(ring, 4.77, 4.66, 0.25);
    p.nonneg_J = true;
    TrainSchedule s;
    s.batch_size = 100;
    s.epochs = 1000000;
    s.max_iterations = 2000;
    s.momentum = 0.9;
    s.learning_rate = 0.005;
    s.record_every = 2000;
    const auto res = train(BoltzmannModel(p), data, s, variational_estimator<BoltzmannModel>(1));
    const Vec oc = bm_ocularity(res.model.parameters());
    OcularityRun out;
    out.sign_changes = sign_changes(oc, true);
    out.band_width = mean_band_width(oc);
    out.dip = dip_test(std::vector<double>(oc.data(), oc.data() + oc.size()), 500);
    return out;
}

Outcome criterion_ocular_dominance() {
    std::ostringstream os;
    int banded = 0;
    os << "sign changes at shift 15, seeds 1-10:";
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const OcularityRun r = ocular_dominance_run(15, seed);
        banded += r.sign_changes >= 4;
        os << ' ' << r.sign_changes;
    }
    os << fmt(" (%d/10 with >= 4); sweep:", banded);
    std::vector<OcularityRun> sweep;
    for (double sd : {5.0, 15.0, 30.0}) {
        sweep.push_back(ocular_dominance_run(sd, 1));
        os << fmt(" shift %.0f band %.2f dip %.3f p %.3f;", sd, sweep.back().band_width, sweep.back().dip.dip,
                  sweep.back().dip.p_value);
    }
    const bool monotone = sweep[0].band_width <= sweep[1].band_width && sweep[1].band_width <= sweep[2].band_width;
    const bool transition = sweep[0].dip.p_value >= 0.05 && sweep[2].dip.p_value < 0.05;
    os << " (need >= 8/10, nondecreasing widths, unimodal at 5 and bimodal at 30 at 5%)";
    return {banded >= 8 && monotone && transition, os.str()};
}

Outcome criterion_receptive_fields() {
    const Index side = 12, dim = 40, iters = 40000;
    auto pb = extract_patches(load_images(2), side, 40000, 1);
    preprocess_inplace(pb, true);
    const WhiteningTransform w = fit_whitener(pb.data, dim, WhitenMode::PCA);
    const Mat X = apply_whitener(w, pb.data);
    const TrainSchedule s = annealed_schedule(iters, 0.01);
    Rng r(9);
    const auto res = train(PotModel::random(dim, dim, 0.1, r), X, s, cd_estimator<PotModel>(s, 3));
    const auto fits = fit_gabors(filters_in_pixel_space(w, res.model.effective_filters()), side);
    int good = 0, compact = 0;
    for (const auto& g : fits) {
        if (g.good) {
            ++good;
            compact += g.n_x() < 1.5 && g.n_y() < 1.5;
        }
    }
    const double frac = double(good) / double(fits.size());
    const double conc = good ? double(compact) / good : 0.0;
    return {frac >= 0.8 && conc >= 0.75,
            fmt("complete %ld-dim PoT on %ldx%ld patches: valid Gabor fits %d/%zu = %.0f%%; n_x, n_y < 1.5 for %.0f%% "
                "of valid fits (need >= 80%% valid, >= 75%% of them with n_x, n_y < 1.5)",
                long(dim), long(side), long(side), good, fits.size(), 100 * frac, 100 * conc)};
}

struct TopoResult {
    PotModel model;
    WhiteningTransform whitener;
    Mat X;
};

const TopoResult& topographic_model() {
    static std::optional<TopoResult> cache;
    if (!cache) {
        const Index side = 12, dim = 40, iters = 30000;
        auto pb = extract_patches(load_images(2), side, 40000, 1);
        preprocess_inplace(pb, true);
        WhiteningTransform w = fit_whitener(pb.data, dim, WhitenMode::PCA);
        Mat X = apply_whitener(w, pb.data);
        TrainSchedule s = annealed_schedule(iters, 0.01);
        s.group_scale["norm"] = 0.01;
        Rng r(9);
        PotParams p = make_topographic_pot(8, 8, dim, Neighborhood::square(3), 0.1, r).parameters();
        p.norm_constrained = true;
        p.norm = 1.0;
        TrainOptions opt;
        opt.seed = 12;
        auto res = train(PotModel(p), X, s, cd_estimator<PotModel>(s, 12), opt);
        cache = TopoResult{std::move(res.model), std::move(w), std::move(X)};
    }
    return *cache;
}

Outcome criterion_topographic() {
    const TopoResult& t = topographic_model();
    const Mat F = filters_in_pixel_space(t.whitener, t.model.effective_filters());
    const MapReport rep = map_report(F, 12, 8, 8, 7, 200);
    const double ro = rep.c_orientation.ratio(), rp = rep.c_phase.ratio();
    return {ro < 0.7 && rp >= 0.9 && rp <= 1.1,
            fmt("8x8 torus, %.0f%% valid fits; orientation ratio %.3f (need < 0.7), phase ratio %.3f (need [0.9, 1.1]); "
                "log-frequency %.3f, center x %.3f, y %.3f",
                100 * rep.valid_fraction(), ro, rp, rep.c_log_freq.ratio(), rep.c_center_x.ratio(),
                rep.c_center_y.ratio())};
}

double mean_abs_neighbor_corr(const Mat& R, Index rows, Index cols) {
    const Mat C = R.rowwise() - R.colwise().mean();
    const Vec sd = (C.colwise().squaredNorm() / double(R.rows())).cwiseSqrt().transpose();
    double acc = 0.0;
    int n = 0;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const Index a = r * cols + c;
            for (Index b : {((r + 1) % rows) * cols + c, r * cols + (c + 1) % cols}) {
                acc += std::abs(C.col(a).dot(C.col(b)) / double(R.rows()) / (sd[a] * sd[b]));
                ++n;
            }
        }
    }
    return acc / n;
}

Outcome criterion_divisive_normalization() {
    const TopoResult& t = topographic_model();
    const Index ns = 5000, units = 64;
    const Mat Je = t.model.effective_filters();
    Mat before(ns, units), after(ns, units);
    for (Index i = 0; i < ns; ++i) {
        const Vec x = t.X.row(i).transpose();
        before.row(i) = (Je * x).array().square().matrix().transpose();
        after.row(i) = t.model.divisive_normalize(x).array().square().matrix().transpose();
    }
    const double c0 = mean_abs_neighbor_corr(before, 8, 8), c1 = mean_abs_neighbor_corr(after, 8, 8);
    const double drop = 1.0 - c1 / c0;
    return {drop >= 0.5, fmt("neighbor squared-response |corr| %.3f -> %.3f, drop %.0f%% (need >= 50%%)", c0, c1,
                             100 * drop)};
}

Outcome criterion_iwf() {
    std::ostringstream os;
    bool ok = true;
    const Index side = 8, keep = 63, iters = 20000;
    const auto images = load_images();
    auto pb = extract_patches(images, side, 40000, 1);
    const Vec mu = preprocess_inplace(pb, false);
    const WhiteningTransform w = fit_whitener(pb.data, keep, WhitenMode::PCA);
    const Mat X = apply_whitener(w, pb.data);
    const TrainSchedule s = annealed_schedule(iters, 0.01);
    Rng r(9);
    const PotModel prior = train(PotModel::random(keep, keep, 0.1, r), X, s, cd_estimator<PotModel>(s, 3)).model;

    // Monotone objective on whitened noisy patches.
    const Mat noise_cov = whitened_noise_covariance(w, noise_std_for_psnr(12.0));
    const Mat prec = noise_cov.inverse();
    Rng nr(61);
    double worst_rise = -std::numeric_limits<double>::infinity();
    Eigen::LLT<Mat> nllt(noise_cov);
    IwfOptions rec;
    rec.record_objective = true;
    for (Index i = 0; i < 500; ++i) {
        const Vec y = X.row(i).transpose() + Vec(nllt.matrixL() * randn(keep, nr));
        const IwfResult res = iwf_patch(prior, prec, y, rec);
        for (std::size_t k = 1; k < res.objective.size(); ++k) {
            worst_rise = std::max(worst_rise, res.objective[k] - res.objective[k - 1]);
        }
    }
    ok = ok && worst_rise <= 1e-10;
    os << fmt("max objective increase %.1e over 500 patches (need <= 1e-10); ", worst_rise);

    // 2-D grid search oracle.
    double worst_grid = 0.0;
    for (int c = 0; c < 50; ++c) {
        PotParams p;
        p.J = randn(2, 2, nr, 1.0);
        p.alpha = (Vec::Random(2).array().abs() + 0.8).matrix();
        const PotModel m(p);
        const double sv = 0.2 + 0.8 * std::abs(randn(1, nr)[0]);
        const Mat P = Mat::Identity(2, 2) / sv;
        const Vec y = randn(2, nr, 2.0);
        const IwfResult res = iwf_patch(m, P, y);
        Vec best = y;
        double half = 6.0;
        for (int level = 0; level < 8; ++level) {
            const Vec c0 = best;
            double bv = iwf_objective(m, P, y, best);
            for (int a = -100; a <= 100; ++a) {
                for (int b = -100; b <= 100; ++b) {
                    const Vec q = c0 + (Vec(2) << a, b).finished() * (half / 100);
                    const double v = iwf_objective(m, P, y, q);
                    if (v < bv) {
                        bv = v;
                        best = q;
                    }
                }
            }
            half /= 20;
        }
        worst_grid = std::max(worst_grid, (res.x - best).cwiseAbs().maxCoeff());
    }
    ok = ok && worst_grid < 1e-3;
    os << fmt("grid-search max |x_iwf - x_grid| %.1e over 50 cases (need < 1e-3); ", worst_grid);

    DenoiseJob job{prior, w, mu, side, {}, 2};
    job.iwf.tol = 1e-4;
    const Index crop = 256;
    double gap_high = 0.0;
    bool all_better = true;
    for (double db : {18.0, 12.0, 8.5, 6.0}) {
        const double sd = noise_std_for_psnr(db);
        double pi = 0.0, pw = 0.0;
        for (std::size_t k = 0; k < images.size(); ++k) {
            const Mat& full = images[k].pixels;
            const Mat clean = full.block((full.rows() - crop) / 2, (full.cols() - crop) / 2, crop, crop);
            const Mat noisy = add_noise(clean, sd, 100 + k);
            pi += psnr(clean, iwf_image(job, noisy, sd), 255) / double(images.size());
            pw += wiener_best(clean, noisy, sd, {3, 5, 7, 9, 11, 15}).psnr / double(images.size());
        }
        all_better = all_better && pi >= pw;
        gap_high = pi - pw;
        os << fmt("%.1f dB: Wiener %.2f IWF %.2f; ", db, pw, pi);
    }
    ok = ok && all_better && gap_high >= 1.0;
    os << fmt("gap at highest noise %.2f dB (need IWF >= Wiener everywhere, gap >= 1 dB)", gap_high);
    return {ok, os.str()};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  ///< runtime limit, 0 when none
    Outcome (*run)();
};

}  // namespace

int main() {
    const std::vector<Criterion> all = {
        {1, "BSS reproduction", 600, criterion_bss},
        {2, "square PoT CD vs exact ML", 1800, criterion_square_pot},
        {3, "gradient suite", 60, criterion_gradients},
        {4, "conditional exactness", 60, criterion_conditionals},
        {5, "tiny-BM oracle", 60, criterion_tiny_bm},
        {6, "ocular dominance emergence", 1800, criterion_ocular_dominance},
        {7, "receptive-field statistics", 0, criterion_receptive_fields},
        {8, "topographic continuity", 3600, criterion_topographic},
        {9, "IWF correctness and benefit", 600, criterion_iwf},
        {10, "divisive normalization", 0, criterion_divisive_normalization},
    };
    std::set<int> only;
    if (const char* e = std::getenv("EBM_ACCEPT_ONLY")) {
        std::stringstream ss(e);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) {
                only.insert(std::stoi(tok));
            }
        }
    }
    int failed = 0;
    for (const Criterion& c : all) {
        if (!only.empty() && !only.count(c.id)) {
            continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("exception: ") + ex.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += fmt(" [over runtime budget %.0f s]", c.budget_s);
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail
                  << fmt(" (%.1f s)", secs) << std::endl;
    }
    return failed ? 1 : 0;
}
