#pragma once

#include "ebm/core.hpp"
#include "ebm/model.hpp"

#include <algorithm>
#include <numeric>

namespace ebm {

/// Binary Boltzmann machine with a visible/hidden split.
///
/// E(v, h) = -(v^T J h + 1/2 h^T K h + b_v^T v + b_h^T h). K is symmetric with a
/// zero diagonal. The biases play the role of weights to an always-on unit.
struct BmParams {
    Mat J;    ///< visibles x hiddens (both eyes stacked for stereo input)
    Mat K;    ///< hiddens x hiddens
    Vec b_v;
    Vec b_h;
    bool nonneg_J = false;

    Index n_v() const { return J.rows(); }
    Index n_h() const { return J.cols(); }

    static BmParams zeros(Index n_v, Index n_h) {
        return {Mat::Zero(n_v, n_h), Mat::Zero(n_h, n_h), Vec::Zero(n_v), Vec::Zero(n_h), false};
    }

    void validate() const {
        if (K.rows() != n_h() || K.cols() != n_h()) {
            throw DimensionError("BmParams: K must be n_h x n_h");
        }
        require_dim(b_v.size(), n_v(), "BmParams visible bias");
        require_dim(b_h.size(), n_h(), "BmParams hidden bias");
    }

    /// Symmetrizes K and zeroes its diagonal; clips J when nonnegativity is flagged.
    void project() {
        K = 0.5 * (K + K.transpose()).eval();
        K.diagonal().setZero();
        if (nonneg_J) {
            J = J.cwiseMax(0.0);
        }
    }

    /// Full symmetric coupling over the joint state x = [v; h] and its bias.
    std::pair<Mat, Vec> joint() const {
        const Index n = n_v() + n_h();
        Mat W = Mat::Zero(n, n);
        W.topRightCorner(n_v(), n_h()) = J;
        W.bottomLeftCorner(n_h(), n_v()) = J.transpose();
        W.bottomRightCorner(n_h(), n_h()) = K;
        W.diagonal().setZero();
        Vec b(n);
        b << b_v, b_h;
        return {std::move(W), std::move(b)};
    }
};

inline double bm_energy(const BmParams& p, const Vec& v, const Vec& h) {
    require_dim(v.size(), p.n_v(), "bm_energy visibles");
    require_dim(h.size(), p.n_h(), "bm_energy hiddens");
    return -(v.dot(p.J * h) + 0.5 * h.dot(p.K * h) + p.b_v.dot(v) + p.b_h.dot(h));
}

struct MeanFieldConfig {
    double damping = 0.2;
    double tol = 1e-6;
    int max_iter = 200;

    void validate() const {
        if (!(damping >= 0 && damping < 1)) {
            throw Error("mean field: damping must lie in [0, 1)");
        }
        if (!(tol > 0)) {
            throw Error("mean field: tol must be positive");
        }
    }
};

struct MeanFieldResult {
    Vec m;
    bool converged = false;
    int iterations = 0;
};

/// Damped synchronous fixed-point iteration m <- (1 - l) sigma(J^T v + K m + b_h) + l m.
/// Starts from m0 when given, otherwise from 1/2.
inline MeanFieldResult mean_field_hidden(const BmParams& p, const Vec& v, const MeanFieldConfig& cfg = {},
                                         const Vec* m0 = nullptr) {
    cfg.validate();
    require_dim(v.size(), p.n_v(), "mean_field_hidden");
    const Vec drive = p.J.transpose() * v + p.b_h;
    MeanFieldResult r;
    r.m = m0 ? *m0 : Vec::Constant(p.n_h(), 0.5);
    require_dim(r.m.size(), p.n_h(), "mean_field_hidden start");
    // The first update is undamped so that K = 0 settles in one step.
    for (int it = 0; it < cfg.max_iter; ++it) {
        const Vec target = sigmoid(drive + p.K * r.m);
        const double lam = (it == 0 && m0 == nullptr) ? 0.0 : cfg.damping;
        const Vec next = (1.0 - lam) * target + lam * r.m;
        const double change = (next - r.m).cwiseAbs().maxCoeff();
        r.m = next;
        r.iterations = it + 1;
        if (change < cfg.tol || (p.K.size() > 0 && p.K.isZero(0.0) && lam == 0.0)) {
            r.converged = true;
            break;
        }
    }
    return r;
}

/// mu = sigma(J m + b_v).
inline Vec mean_field_visible(const BmParams& p, const Vec& m) {
    require_dim(m.size(), p.n_h(), "mean_field_visible");
    return sigmoid(p.J * m + p.b_v);
}

/// Mean-field free energy F(v) = E(v, m) - H(m) at the settled hidden means.
inline double mean_field_free_energy(const BmParams& p, const Vec& v, const Vec& m) {
    double ent = 0.0;
    for (Index i = 0; i < m.size(); ++i) {
        const double a = std::clamp(m[i], 1e-300, 1.0);
        const double b = std::clamp(1.0 - m[i], 1e-300, 1.0);
        ent -= m[i] * std::log(a) + (1.0 - m[i]) * std::log(b);
    }
    return bm_energy(p, v, m) - ent;
}

/// Ascent directions of the log-likelihood surrogate (data term minus model term).
struct BmGrad {
    Mat dJ;
    Mat dK;
    Vec db_v;
    Vec db_h;
    bool converged = true;

    static BmGrad zeros(const BmParams& p) {
        return {Mat::Zero(p.n_v(), p.n_h()), Mat::Zero(p.n_h(), p.n_h()), Vec::Zero(p.n_v()), Vec::Zero(p.n_h()),
                true};
    }

    Vec flatten() const {
        Vec out(dJ.size() + dK.size() + db_v.size() + db_h.size());
        out << dJ.reshaped(), dK.reshaped(), db_v, db_h;
        return out;
    }
};

/// Variational CD. Positive phase: data-clamped mean-field settles. Negative
/// phase: n alternations of mu = sigma(J m + b_v) and a hidden settle from mu.
/// Rows of `batch` are visible vectors with entries in [0, 1].
inline BmGrad variational_cd_grads(const BmParams& p, const Mat& batch, int n, const MeanFieldConfig& cfg = {}) {
    if (n < 1) {
        throw Error("variational_cd_grads: n must be >= 1");
    }
    require_dim(batch.cols(), p.n_v(), "variational_cd_grads");
    const Index rows = batch.rows();
    BmGrad g = BmGrad::zeros(p);
    if (rows == 0) {
        return g;
    }
    Mat M0(rows, p.n_h());
    Mat Mn(rows, p.n_h());
    Mat Vn(rows, p.n_v());
    std::vector<char> ok(static_cast<std::size_t>(rows), 1);
    parallel_for(rows, [&](Index r) {
        const Vec v = batch.row(r).transpose();
        MeanFieldResult pos = mean_field_hidden(p, v, cfg);
        Vec m = pos.m;
        Vec mu = v;
        bool conv = pos.converged;
        for (int s = 0; s < n; ++s) {
            mu = mean_field_visible(p, m);
            MeanFieldResult neg = mean_field_hidden(p, mu, cfg, &m);
            m = neg.m;
            conv = conv && neg.converged;
        }
        M0.row(r) = pos.m.transpose();
        Mn.row(r) = m.transpose();
        Vn.row(r) = mu.transpose();
        ok[static_cast<std::size_t>(r)] = conv ? 1 : 0;
    });
    const double inv = 1.0 / static_cast<double>(rows);
    g.dJ = inv * (batch.transpose() * M0 - Vn.transpose() * Mn);
    g.dK = inv * (M0.transpose() * M0 - Mn.transpose() * Mn);
    g.dK = 0.5 * (g.dK + g.dK.transpose()).eval();
    g.dK.diagonal().setZero();
    g.db_v = inv * (batch.colwise().sum() - Vn.colwise().sum()).transpose();
    g.db_h = inv * (M0.colwise().sum() - Mn.colwise().sum()).transpose();
    g.converged = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
    return g;
}

/// Sequential Gibbs sampling over the joint state [v; h]. Each unit turns on with
/// probability sigma(sum_j x_j W_ij + b_i). Units with clamp[i] set never change.
/// Returns one row per sweep.
inline Mat gibbs_bm(const BmParams& p, const Vec& x0, int sweeps, const std::vector<bool>& clamp, Rng& rng) {
    const Index n = p.n_v() + p.n_h();
    require_dim(x0.size(), n, "gibbs_bm state");
    if (!clamp.empty()) {
        require_dim(static_cast<Index>(clamp.size()), n, "gibbs_bm clamp mask");
    }
    const auto [W, b] = p.joint();
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vec x = x0;
    Mat out(std::max(sweeps, 0), n);
    for (int s = 0; s < sweeps; ++s) {
        for (Index i = 0; i < n; ++i) {
            if (!clamp.empty() && clamp[static_cast<std::size_t>(i)]) {
                continue;
            }
            const double a = W.col(i).dot(x) + b[i];
            x[i] = unif(rng) < sigmoid(a) ? 1.0 : 0.0;
        }
        out.row(s) = x.transpose();
    }
    return out;
}

/// Exact statistics of the joint binary distribution by enumeration.
struct ExactBmStats {
    double log_z = 0.0;
    Vec mean;    ///< E[x] over x = [v; h]
    Mat second;  ///< E[x x^T]
};

inline constexpr Index kMaxEnumerableUnits = 20;

inline ExactBmStats exact_bm_stats(const BmParams& p) {
    const Index n = p.n_v() + p.n_h();
    if (n > kMaxEnumerableUnits) {
        throw Error("exact_bm_stats: at most 20 units can be enumerated");
    }
    const auto [W, b] = p.joint();
    const std::uint64_t states = std::uint64_t{1} << n;
    std::vector<double> neg_e(states);
    double top = -std::numeric_limits<double>::infinity();
    Vec x(n);
    for (std::uint64_t s = 0; s < states; ++s) {
        for (Index i = 0; i < n; ++i) {
            x[i] = static_cast<double>((s >> i) & 1U);
        }
        neg_e[s] = 0.5 * x.dot(W * x) + b.dot(x);
        top = std::max(top, neg_e[s]);
    }
    ExactBmStats out;
    out.mean = Vec::Zero(n);
    out.second = Mat::Zero(n, n);
    double z = 0.0;
    for (std::uint64_t s = 0; s < states; ++s) {
        const double w = std::exp(neg_e[s] - top);
        z += w;
        for (Index i = 0; i < n; ++i) {
            x[i] = static_cast<double>((s >> i) & 1U);
        }
        out.mean += w * x;
        out.second.noalias() += w * x * x.transpose();
    }
    out.mean /= z;
    out.second /= z;
    out.log_z = top + std::log(z);
    return out;
}

/// Exact hidden marginals and pairwise moments given a clamped visible vector.
struct ExactConditional {
    Vec mean;
    Mat second;
};

inline ExactConditional exact_hidden_conditional(const BmParams& p, const Vec& v) {
    const Index nh = p.n_h();
    if (nh > kMaxEnumerableUnits) {
        throw Error("exact_hidden_conditional: too many hidden units to enumerate");
    }
    require_dim(v.size(), p.n_v(), "exact_hidden_conditional");
    const Vec drive = p.J.transpose() * v + p.b_h;
    const std::uint64_t states = std::uint64_t{1} << nh;
    std::vector<double> le(states);
    double top = -std::numeric_limits<double>::infinity();
    Vec h(nh);
    for (std::uint64_t s = 0; s < states; ++s) {
        for (Index i = 0; i < nh; ++i) {
            h[i] = static_cast<double>((s >> i) & 1U);
        }
        le[s] = drive.dot(h) + 0.5 * h.dot(p.K * h);
        top = std::max(top, le[s]);
    }
    ExactConditional c{Vec::Zero(nh), Mat::Zero(nh, nh)};
    double z = 0.0;
    for (std::uint64_t s = 0; s < states; ++s) {
        const double w = std::exp(le[s] - top);
        z += w;
        for (Index i = 0; i < nh; ++i) {
            h[i] = static_cast<double>((s >> i) & 1U);
        }
        c.mean += w * h;
        c.second.noalias() += w * h * h.transpose();
    }
    c.mean /= z;
    c.second /= z;
    return c;
}

/// Exact maximum-likelihood ascent direction for binary visible data: data
/// statistics with hiddens marginalized exactly, minus full model statistics.
inline BmGrad exact_ml_grad(const BmParams& p, const Mat& data) {
    require_dim(data.cols(), p.n_v(), "exact_ml_grad");
    const Index nv = p.n_v();
    const Index nh = p.n_h();
    BmGrad g = BmGrad::zeros(p);
    for (Index r = 0; r < data.rows(); ++r) {
        const Vec v = data.row(r).transpose();
        const ExactConditional c = exact_hidden_conditional(p, v);
        g.dJ += v * c.mean.transpose();
        g.dK += c.second;
        g.db_v += v;
        g.db_h += c.mean;
    }
    const double inv = 1.0 / static_cast<double>(std::max<Index>(data.rows(), 1));
    g.dJ *= inv;
    g.dK *= inv;
    g.db_v *= inv;
    g.db_h *= inv;
    const ExactBmStats model = exact_bm_stats(p);
    g.dJ -= model.second.topRightCorner(nv, nh);
    g.dK -= model.second.bottomRightCorner(nh, nh);
    g.db_v -= model.mean.head(nv);
    g.db_h -= model.mean.tail(nh);
    g.dK.diagonal().setZero();
    return g;
}

/// Exact log-likelihood of binary visible rows (marginalizing the hiddens).
inline double exact_log_likelihood(const BmParams& p, const Mat& data) {
    const double log_z = exact_bm_stats(p).log_z;
    const Index nh = p.n_h();
    const std::uint64_t states = std::uint64_t{1} << nh;
    double total = 0.0;
    Vec h(nh);
    for (Index r = 0; r < data.rows(); ++r) {
        const Vec v = data.row(r).transpose();
        std::vector<double> le(states);
        double top = -std::numeric_limits<double>::infinity();
        for (std::uint64_t s = 0; s < states; ++s) {
            for (Index i = 0; i < nh; ++i) {
                h[i] = static_cast<double>((s >> i) & 1U);
            }
            le[s] = -bm_energy(p, v, h);
            top = std::max(top, le[s]);
        }
        double z = 0.0;
        for (double e : le) {
            z += std::exp(e - top);
        }
        total += top + std::log(z) - log_z;
    }
    return total / static_cast<double>(std::max<Index>(data.rows(), 1));
}

/// Sampling CD-n ascent direction (Gibbs chains started at the data). Hidden
/// statistics are Rao-Blackwellized when K = 0; otherwise sampled states are used
/// and the clamped positive chain also runs n sweeps.
/// Chain r draws from the stream (seed, "bm-cd-chain", r).
inline BmGrad gibbs_cd_grads(const BmParams& p, const Mat& data, int n, std::uint64_t seed) {
    require_dim(data.cols(), p.n_v(), "gibbs_cd_grads");
    if (n < 1) {
        throw Error("gibbs_cd_grads: n must be >= 1");
    }
    const Index nv = p.n_v();
    const Index nh = p.n_h();
    const Index rows = data.rows();
    Mat pos_h(rows, nh), neg_v(rows, nv), neg_h(rows, nh);
    std::vector<Mat> pos_hh(static_cast<std::size_t>(rows)), neg_hh(static_cast<std::size_t>(rows));
    std::vector<bool> clamp(static_cast<std::size_t>(nv + nh), false);
    for (Index i = 0; i < nv; ++i) {
        clamp[static_cast<std::size_t>(i)] = true;
    }
    const bool lateral = !p.K.isZero(0.0);
    parallel_for(rows, [&](Index r) {
        Rng rng = make_rng(seed, "bm-cd-chain", static_cast<std::uint64_t>(r));
        const Vec v = data.row(r).transpose();
        Vec x(nv + nh);
        x << v, Vec::Zero(nh);
        // Positive phase: hiddens sampled with visibles clamped (one sweep is exact when K = 0).
        const int pos_sweeps = lateral ? n : 1;
        const Mat hs = gibbs_bm(p, x, pos_sweeps, clamp, rng);
        x = hs.row(pos_sweeps - 1).transpose();
        pos_h.row(r) = x.tail(nh).transpose();
        pos_hh[static_cast<std::size_t>(r)] = x.tail(nh) * x.tail(nh).transpose();
        const Mat chain = gibbs_bm(p, x, n, {}, rng);
        const Vec xn = chain.row(n - 1).transpose();
        neg_v.row(r) = xn.head(nv).transpose();
        neg_h.row(r) = xn.tail(nh).transpose();
        neg_hh[static_cast<std::size_t>(r)] = xn.tail(nh) * xn.tail(nh).transpose();
    });
    if (!lateral) {
        for (Index r = 0; r < rows; ++r) {
            pos_h.row(r) = sigmoid(p.J.transpose() * data.row(r).transpose() + p.b_h).transpose();
            neg_h.row(r) = sigmoid(p.J.transpose() * neg_v.row(r).transpose() + p.b_h).transpose();
        }
    }
    BmGrad g = BmGrad::zeros(p);
    const double inv = 1.0 / static_cast<double>(std::max<Index>(rows, 1));
    g.dJ = inv * (data.transpose() * pos_h - neg_v.transpose() * neg_h);
    for (Index r = 0; r < rows; ++r) {
        g.dK += pos_hh[static_cast<std::size_t>(r)] - neg_hh[static_cast<std::size_t>(r)];
    }
    g.dK *= inv;
    g.dK.diagonal().setZero();
    g.db_v = inv * (data.colwise().sum() - neg_v.colwise().sum()).transpose();
    g.db_h = inv * (pos_h.colwise().sum() - neg_h.colwise().sum()).transpose();
    return g;
}

// ---------------------------------------------------------------------------
// Lattices, initializers and input generators
// ---------------------------------------------------------------------------

/// Units on a ring (rows == 1) or a torus. Unit (r, c) has index r * cols + c.
struct Lattice {
    Index rows = 1;
    Index cols = 1;

    static Lattice ring(Index n) { return {1, n}; }
    static Lattice grid(Index side) { return {side, side}; }

    Index size() const { return rows * cols; }
    bool is_ring() const { return rows == 1; }

    /// Position of unit i, in lattice units.
    std::pair<double, double> position(Index i) const { return {double(i / cols), double(i % cols)}; }

    /// Periodic distance between fractional positions.
    double distance(std::pair<double, double> a, std::pair<double, double> b) const {
        auto wrap = [](double d, double period) {
            d = std::fmod(std::abs(d), period);
            return std::min(d, period - d);
        };
        const double dr = rows > 1 ? wrap(a.first - b.first, double(rows)) : 0.0;
        const double dc = wrap(a.second - b.second, double(cols));
        return std::sqrt(dr * dr + dc * dc);
    }
};

/// Broad Gaussian feedforward pattern centred on each hidden unit's nominal
/// retinotopic location, plus independent Gaussian noise (per eye). Visible
/// lattices of a different size are mapped proportionally onto the hidden one.
inline Mat init_retinotopic_weights(const Lattice& visible, const Lattice& hidden, double sigma0, double s0,
                                    double noise, Rng& rng) {
    if (!(sigma0 > 0)) {
        throw Error("init_retinotopic_weights: sigma0 must be positive");
    }
    if (visible.is_ring() != hidden.is_ring()) {
        throw Error("init_retinotopic_weights: visible and hidden lattices must have the same dimensionality");
    }
    const double sr = double(hidden.rows) / double(visible.rows);
    const double sc = double(hidden.cols) / double(visible.cols);
    Mat J(visible.size(), hidden.size());
    for (Index i = 0; i < visible.size(); ++i) {
        auto [r, c] = visible.position(i);
        const std::pair<double, double> pv{r * sr, c * sc};
        for (Index j = 0; j < hidden.size(); ++j) {
            const double d = hidden.distance(pv, hidden.position(j));
            J(i, j) = s0 * std::exp(-d * d / (2 * sigma0 * sigma0));
        }
    }
    if (noise > 0) {
        J += randn(J.rows(), J.cols(), rng, noise);
    }
    return J;
}

/// Lateral weights: difference of unit-area Gaussians G_sigma2 - G_sigma1 of
/// the cortical distance, scaled so its peak magnitude is s_m, then the
/// self-connection is removed. Widths are standard deviations.
inline Mat dog_lateral_weights(const Lattice& hidden, double sigma1, double sigma2, double s_m) {
    if (!(sigma1 > 0 && sigma2 > 0) || sigma1 == sigma2) {
        throw Error("dog_lateral_weights: need distinct positive widths");
    }
    if (s_m < 0) {
        throw Error("dog_lateral_weights: s_m must be nonnegative");
    }
    const bool ring = hidden.is_ring();
    auto g = [&](double d, double s) {
        const double norm = ring ? s * std::sqrt(2 * kPi) : 2 * kPi * s * s;
        return std::exp(-d * d / (2 * s * s)) / norm;
    };
    const Index n = hidden.size();
    Mat K(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const double d = hidden.distance(hidden.position(i), hidden.position(j));
            K(i, j) = g(d, sigma2) - g(d, sigma1);
        }
    }
    const double peak = K.cwiseAbs().maxCoeff();
    if (peak > 0) {
        K *= s_m / peak;
    }
    K.diagonal().setZero();
    return K;
}

struct StereoInputConfig {
    Lattice eye = Lattice::ring(51);  ///< lattice of each eye
    int seeds = 3;              ///< delta functions per mono image
    double envelope = 2.0;      ///< Gaussian envelope std (input units)
    double threshold = 0.5;     ///< saturation level of the normalized convolution
    int passes = 2;             ///< convolve + threshold iterations
    double shift_sd = 15.0;     ///< Sigma, std of the horizontal shift between eyes
    double deprivation = 1.0;   ///< input scaling applied to the deprived eye
    int deprived_eye = 0;       ///< 0 none, 1 left, 2 right

    void validate() const {
        if (shift_sd < 0) {
            throw Error("StereoInputConfig: shift_sd must be nonnegative");
        }
        if (!(deprivation > 0 && deprivation <= 1)) {
            throw Error("StereoInputConfig: deprivation scale must lie in (0, 1]");
        }
        if (seeds < 1 || passes < 1 || !(envelope > 0) || !(threshold > 0 && threshold <= 1)) {
            throw Error("StereoInputConfig: invalid synthesis settings");
        }
        if (deprived_eye < 0 || deprived_eye > 2) {
            throw Error("StereoInputConfig: deprived_eye must be 0, 1 or 2");
        }
    }
};

namespace detail {

/// Periodic separable Gaussian blur of a rows x cols image (row-major vector).
inline Vec periodic_blur(const Vec& img, Index rows, Index cols, double sd) {
    const int reach = static_cast<int>(std::ceil(4 * sd));
    std::vector<double> k(static_cast<std::size_t>(2 * reach + 1));
    double ks = 0.0;
    for (int t = -reach; t <= reach; ++t) {
        k[static_cast<std::size_t>(t + reach)] = std::exp(-0.5 * t * t / (sd * sd));
        ks += k[static_cast<std::size_t>(t + reach)];
    }
    for (auto& v : k) {
        v /= ks;
    }
    Vec tmp = Vec::Zero(img.size());
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            double s = 0.0;
            for (int t = -reach; t <= reach; ++t) {
                const Index cc = ((c + t) % cols + cols) % cols;
                s += k[static_cast<std::size_t>(t + reach)] * img[r * cols + cc];
            }
            tmp[r * cols + c] = s;
        }
    }
    if (rows == 1) {
        return tmp;
    }
    Vec out = Vec::Zero(img.size());
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            double s = 0.0;
            for (int t = -reach; t <= reach; ++t) {
                const Index rr = ((r + t) % rows + rows) % rows;
                s += k[static_cast<std::size_t>(t + reach)] * tmp[rr * cols + c];
            }
            out[r * cols + c] = s;
        }
    }
    return out;
}

/// Seeds deltas, then repeatedly blurs, rescales to peak 1 and saturates at the threshold.
inline Vec synthesize_mono(Index rows, Index cols, const StereoInputConfig& cfg, Rng& rng) {
    Vec img = Vec::Zero(rows * cols);
    std::uniform_int_distribution<Index> pick(0, rows * cols - 1);
    for (int s = 0; s < cfg.seeds; ++s) {
        img[pick(rng)] = 1.0;
    }
    for (int pass = 0; pass < cfg.passes; ++pass) {
        img = periodic_blur(img, rows, cols, cfg.envelope);
        const double peak = img.maxCoeff();
        if (peak > 0) {
            img /= peak;
        }
        img = (img / cfg.threshold).cwiseMin(1.0).cwiseMax(0.0);
    }
    return img;
}

}  // namespace detail

/// One stereo training set: rows are [left eye, right eye] visible vectors.
struct StereoBatch {
    Mat left;
    Mat right;
    std::vector<int> shifts;  ///< applied horizontal shift of the right eye, per pattern

    Mat stacked() const {
        Mat out(left.rows(), left.cols() + right.cols());
        out << left, right;
        return out;
    }
};

/// Mono pattern, then the second eye is a horizontally translated copy. Ring
/// inputs wrap circularly; grid inputs are two offset crops from a larger canvas.
/// Pattern k draws from the stream (seed, "stereo-pattern", k).
inline StereoBatch gen_stereo_patterns(const StereoInputConfig& cfg, Index count, std::uint64_t seed) {
    cfg.validate();
    const Index rows = cfg.eye.rows;
    const Index cols = cfg.eye.cols;
    const Index n = rows * cols;
    const int pad = cfg.eye.is_ring() ? 0 : static_cast<int>(std::ceil(3 * cfg.shift_sd));
    StereoBatch out{Mat(count, n), Mat(count, n), std::vector<int>(static_cast<std::size_t>(count))};
    parallel_for(count, [&](Index k) {
        Rng rng = make_rng(seed, "stereo-pattern", static_cast<std::uint64_t>(k));
        int shift = 0;
        if (cfg.shift_sd > 0) {
            std::normal_distribution<double> nd(0.0, cfg.shift_sd);
            shift = static_cast<int>(std::lround(nd(rng)));
        }
        Vec left(n), right(n);
        if (cfg.eye.is_ring()) {
            const Vec mono = detail::synthesize_mono(1, cols, cfg, rng);
            left = mono;
            for (Index c = 0; c < cols; ++c) {
                right[c] = mono[((c - shift) % cols + cols) % cols];
            }
        } else {
            shift = std::clamp(shift, -pad, pad);
            const Index wide = cols + 2 * pad;
            const Vec canvas = detail::synthesize_mono(rows, wide, cfg, rng);
            for (Index r = 0; r < rows; ++r) {
                for (Index c = 0; c < cols; ++c) {
                    left[r * cols + c] = canvas[r * wide + c + pad];
                    right[r * cols + c] = canvas[r * wide + c + pad - shift];
                }
            }
        }
        if (cfg.deprived_eye == 1) {
            left *= cfg.deprivation;
        } else if (cfg.deprived_eye == 2) {
            right *= cfg.deprivation;
        }
        out.left.row(k) = left.transpose();
        out.right.row(k) = right.transpose();
        out.shifts[static_cast<std::size_t>(k)] = shift;
    });
    return out;
}

/// Mean of the k most and k least exciting patterns for every hidden unit,
/// ranked by settled mean-field activity, with the projective fields.
struct ReceptiveFields {
    Mat most;        ///< hiddens x visibles
    Mat least;       ///< hiddens x visibles
    Mat projective;  ///< hiddens x visibles (rows of J^T)
};

inline ReceptiveFields stimulus_triggered_rf(const BmParams& p, const Mat& patterns, Index k,
                                             const MeanFieldConfig& cfg = {}) {
    require_dim(patterns.cols(), p.n_v(), "stimulus_triggered_rf");
    if (k < 1 || k > patterns.rows()) {
        throw Error("stimulus_triggered_rf: k must lie in [1, pattern count]");
    }
    const Index count = patterns.rows();
    Mat act(count, p.n_h());
    parallel_for(count, [&](Index r) {
        act.row(r) = mean_field_hidden(p, patterns.row(r).transpose(), cfg).m.transpose();
    });
    ReceptiveFields rf{Mat(p.n_h(), p.n_v()), Mat(p.n_h(), p.n_v()), p.J.transpose()};
    std::vector<Index> order(static_cast<std::size_t>(count));
    for (Index j = 0; j < p.n_h(); ++j) {
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return act(a, j) > act(b, j); });
        Vec hi = Vec::Zero(p.n_v());
        Vec lo = Vec::Zero(p.n_v());
        for (Index t = 0; t < k; ++t) {
            hi += patterns.row(order[static_cast<std::size_t>(t)]).transpose();
            lo += patterns.row(order[static_cast<std::size_t>(count - 1 - t)]).transpose();
        }
        rf.most.row(j) = (hi / double(k)).transpose();
        rf.least.row(j) = (lo / double(k)).transpose();
    }
    return rf;
}

// ---------------------------------------------------------------------------
// EnergyModel adapter
// ---------------------------------------------------------------------------

/// Boltzmann machine seen through its mean-field free energy of the visibles.
/// Parameter gradients are those of F(v) at the settled hidden means.
class BoltzmannModel {
public:
    static constexpr bool has_stochastic_hiddens = true;
    static constexpr bool supports_aux_gibbs = false;

    BoltzmannModel() = default;
    explicit BoltzmannModel(BmParams p, bool learn_K = false, MeanFieldConfig mf = {})
        : p_(std::move(p)), learn_K_(learn_K), mf_(mf) {
        p_.validate();
        p_.project();
    }

    const BmParams& parameters() const { return p_; }
    BmParams& mutable_parameters() { return p_; }
    const MeanFieldConfig& mean_field() const { return mf_; }
    bool learns_lateral() const { return learn_K_; }

    Index state_dim() const { return p_.n_v(); }
    std::string family() const { return "boltzmann"; }

    ParamLayout layout() const {
        ParamLayout l;
        l.add("J", p_.n_v(), p_.n_h());
        if (learn_K_) {
            l.add("K", p_.n_h(), p_.n_h());
        }
        l.add("b_v", p_.n_v());
        l.add("b_h", p_.n_h());
        return l;
    }

    Vec params() const {
        const ParamLayout l = layout();
        Vec v(l.size());
        block_view(v, l.block("J")) = p_.J;
        if (learn_K_) {
            block_view(v, l.block("K")) = p_.K;
        }
        block_view(v, l.block("b_v")) = p_.b_v;
        block_view(v, l.block("b_h")) = p_.b_h;
        return v;
    }

    void set_params(const Vec& v) {
        const ParamLayout l = layout();
        require_dim(v.size(), l.size(), "BoltzmannModel::set_params");
        p_.J = block_view(v, l.block("J"));
        if (learn_K_) {
            p_.K = block_view(v, l.block("K"));
        }
        p_.b_v = block_view(v, l.block("b_v"));
        p_.b_h = block_view(v, l.block("b_h"));
    }

    void project() { p_.project(); }

    double energy(const Vec& v) const {
        const MeanFieldResult r = mean_field_hidden(p_, v, mf_);
        return mean_field_free_energy(p_, v, r.m);
    }

    /// Settled means make F stationary in m, so dF/dtheta is the explicit partial.
    Vec energy_param_grad(const Vec& v) const {
        require_dim(v.size(), state_dim(), "BoltzmannModel");
        return mean_energy_param_grad(v.transpose());
    }

    Vec mean_energy_param_grad(const Mat& V) const {
        require_dim(V.cols(), state_dim(), "BoltzmannModel");
        const ParamLayout l = layout();
        Vec out = Vec::Zero(l.size());
        if (V.rows() == 0) {
            return out;
        }
        Mat M(V.rows(), p_.n_h());
        parallel_for(V.rows(), [&](Index r) {
            M.row(r) = mean_field_hidden(p_, V.row(r).transpose(), mf_).m.transpose();
        });
        const double inv = 1.0 / static_cast<double>(V.rows());
        block_view(out, l.block("J")) = -inv * (V.transpose() * M);
        if (learn_K_) {
            Mat gk = -0.5 * inv * (M.transpose() * M);
            gk.diagonal().setZero();
            block_view(out, l.block("K")) = gk;
        }
        block_view(out, l.block("b_v")) = -inv * V.colwise().sum().transpose();
        block_view(out, l.block("b_h")) = -inv * M.colwise().sum().transpose();
        return out;
    }

    /// Flattened ascent direction of variational CD in this model's layout.
    Vec cd_direction(const Mat& batch, int n) const {
        const BmGrad g = variational_cd_grads(p_, batch, n, mf_);
        const ParamLayout l = layout();
        Vec out(l.size());
        block_view(out, l.block("J")) = g.dJ;
        if (learn_K_) {
            block_view(out, l.block("K")) = g.dK;
        }
        block_view(out, l.block("b_v")) = g.db_v;
        block_view(out, l.block("b_h")) = g.db_h;
        return out;
    }

private:
    BmParams p_;
    bool learn_K_ = false;
    MeanFieldConfig mf_;
};

static_assert(EnergyModel<BoltzmannModel>);

/// Signed ocularity per hidden unit: sum_j (|J^L_ij| - |J^R_ij|), i.e. over the
/// visible inputs of the left eye block minus those of the right eye block.
inline Vec bm_ocularity(const BmParams& p) {
    if (p.n_v() % 2 != 0) {
        throw Error("bm_ocularity: expects stacked left/right visibles");
    }
    const Index half = p.n_v() / 2;
    return (p.J.topRows(half).cwiseAbs().colwise().sum() - p.J.bottomRows(half).cwiseAbs().colwise().sum())
        .transpose();
}

}  // namespace ebm
