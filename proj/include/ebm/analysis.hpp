#pragma once

#include "ebm/core.hpp"

#include <unsupported/Eigen/NonLinearOptimization>
#include <unsupported/Eigen/NumericalDiff>

#include <algorithm>
#include <numeric>
#include <optional>

namespace ebm {

// ---------------------------------------------------------------------------
// Gabor fitting
// ---------------------------------------------------------------------------

/// g(x, y) = A exp(-x'^2 / 2 sw^2 - y'^2 / 2 sl^2) cos(2 pi f x' + phi), where
/// x' = (x - x0) cos t + (y - y0) sin t and y' = -(x - x0) sin t + (y - y0) cos t.
/// x runs along image columns and y along rows, in pixels.
struct GaborFit {
    double x0 = 0.0;
    double y0 = 0.0;
    double theta = 0.0;   ///< carrier direction, [0, pi)
    double freq = 0.1;    ///< cycles per pixel
    double phase = 0.0;   ///< [-pi, pi)
    double sigma_w = 1.0; ///< envelope width across the stripes
    double sigma_l = 1.0; ///< envelope length along the stripes
    double amplitude = 1.0;
    double residual = 0.0;   ///< norm of (filter - fit)
    double filter_norm = 0.0;
    bool good = false;

    double n_x() const { return sigma_w * freq; }
    double n_y() const { return sigma_l * freq; }
};

inline double gabor_value(const GaborFit& g, double x, double y) {
    const double c = std::cos(g.theta), s = std::sin(g.theta);
    const double dx = x - g.x0, dy = y - g.y0;
    const double xp = dx * c + dy * s;
    const double yp = -dx * s + dy * c;
    return g.amplitude * std::exp(-xp * xp / (2 * g.sigma_w * g.sigma_w) - yp * yp / (2 * g.sigma_l * g.sigma_l)) *
           std::cos(2 * kPi * g.freq * xp + g.phase);
}

inline Mat gabor_image(const GaborFit& g, Index rows, Index cols) {
    Mat out(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            out(r, c) = gabor_value(g, double(c), double(r));
        }
    }
    return out;
}

/// Brings a parameter set to canonical form (f > 0, A > 0, theta in [0, pi), phi in [-pi, pi)).
inline GaborFit canonical_gabor(GaborFit g) {
    g.sigma_w = std::abs(g.sigma_w);
    g.sigma_l = std::abs(g.sigma_l);
    if (g.freq < 0) {
        g.freq = -g.freq;
        g.theta += kPi;
    }
    if (g.amplitude < 0) {
        g.amplitude = -g.amplitude;
        g.phase += kPi;
    }
    g.theta = std::fmod(g.theta, 2 * kPi);
    if (g.theta < 0) {
        g.theta += 2 * kPi;
    }
    if (g.theta >= kPi) {
        // Rotating by pi negates x', which the carrier absorbs as a phase sign flip.
        g.theta -= kPi;
        g.phase = -g.phase;
    }
    g.phase = wrap_pi(g.phase);
    return g;
}

namespace detail {

inline Vec pack_gabor(const GaborFit& g) {
    Vec p(8);
    p << g.x0, g.y0, g.theta, g.freq, g.phase, std::log(g.sigma_w), std::log(g.sigma_l), g.amplitude;
    return p;
}

inline GaborFit unpack_gabor(const Vec& p) {
    GaborFit g;
    g.x0 = p[0];
    g.y0 = p[1];
    g.theta = p[2];
    g.freq = p[3];
    g.phase = p[4];
    g.sigma_w = std::exp(std::clamp(p[5], -20.0, 20.0));
    g.sigma_l = std::exp(std::clamp(p[6], -20.0, 20.0));
    g.amplitude = p[7];
    return g;
}

struct GaborResidual {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Vec;
    using ValueType = Vec;
    using JacobianType = Mat;

    const Mat* target;

    int inputs() const { return 8; }
    int values() const { return static_cast<int>(target->size()); }

    int operator()(const Vec& p, Vec& r) const {
        const GaborFit g = unpack_gabor(p);
        const Index rows = target->rows();
        for (Index c = 0; c < target->cols(); ++c) {
            for (Index rr = 0; rr < rows; ++rr) {
                r[c * rows + rr] = gabor_value(g, double(c), double(rr)) - (*target)(rr, c);
            }
        }
        return 0;
    }
};

/// Frequency (cycles/px, along x then y) of the largest Fourier magnitude,
/// searched on a fine grid over the half plane (DC excluded).
inline std::pair<double, double> spectral_peak(const Mat& img) {
    const Index rows = img.rows(), cols = img.cols();
    const int steps = 48;
    double best = -1.0, bx = 0.1, by = 0.0;
    for (int i = -steps; i <= steps; ++i) {
        for (int j = 0; j <= steps; ++j) {
            const double fx = 0.5 * i / steps;
            const double fy = 0.5 * j / steps;
            if (std::hypot(fx, fy) < 0.5 / std::max(rows, cols)) {
                continue;
            }
            double re = 0.0, im = 0.0;
            for (Index r = 0; r < rows; ++r) {
                for (Index c = 0; c < cols; ++c) {
                    const double a = 2 * kPi * (fx * double(c) + fy * double(r));
                    re += img(r, c) * std::cos(a);
                    im -= img(r, c) * std::sin(a);
                }
            }
            const double mag = re * re + im * im;
            if (mag > best) {
                best = mag;
                bx = fx;
                by = fy;
            }
        }
    }
    return {bx, by};
}

}  // namespace detail

struct GaborFitOptions {
    double good_residual_ratio = 0.35;  ///< fits with residual above this fraction of the filter norm are flagged
    int max_evaluations = 4000;
};

/// Least-squares Gabor fit with multi-start initialization: carrier from the
/// spectral peak, center from the energy centroid, envelope from the energy
/// second moments, and four starting phases.
inline GaborFit fit_gabor(const Mat& filter, const GaborFitOptions& opt = {}) {
    const double norm = filter.norm();
    if (!(norm > 0) || !filter.allFinite()) {
        throw Error("fit_gabor: filter is zero or non-finite");
    }
    const Index rows = filter.rows(), cols = filter.cols();
    const Mat target = filter / norm;

    double w = 0, cx = 0, cy = 0;
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const double e = target(r, c) * target(r, c);
            w += e;
            cx += e * double(c);
            cy += e * double(r);
        }
    }
    cx /= w;
    cy /= w;
    const auto [fx, fy] = detail::spectral_peak(target);
    const double f0 = std::max(std::hypot(fx, fy), 1e-3);
    const double t0 = std::atan2(fy, fx);
    double mxx = 0, myy = 0;
    const double ct = std::cos(t0), st = std::sin(t0);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const double e = target(r, c) * target(r, c);
            const double dx = double(c) - cx, dy = double(r) - cy;
            const double xp = dx * ct + dy * st, yp = -dx * st + dy * ct;
            mxx += e * xp * xp;
            myy += e * yp * yp;
        }
    }
    const double sw0 = std::clamp(std::sqrt(2 * mxx / w), 0.5, double(std::max(rows, cols)));
    const double sl0 = std::clamp(std::sqrt(2 * myy / w), 0.5, double(std::max(rows, cols)));
    const double a0 = target.cwiseAbs().maxCoeff();

    detail::GaborResidual functor{&target};
    Eigen::NumericalDiff<detail::GaborResidual> numdiff(functor);
    GaborFit best;
    double best_cost = std::numeric_limits<double>::infinity();
    const double phases[] = {0.0, kPi / 2, kPi, -kPi / 2};
    const double widths[] = {1.0, 0.6};
    for (double scale : widths) {
        for (double ph : phases) {
            GaborFit g;
            g.x0 = cx;
            g.y0 = cy;
            g.theta = t0;
            g.freq = f0;
            g.phase = ph;
            g.sigma_w = sw0 * scale;
            g.sigma_l = sl0 * scale;
            g.amplitude = a0;
            Vec p = detail::pack_gabor(g);
            Eigen::LevenbergMarquardt<Eigen::NumericalDiff<detail::GaborResidual>> lm(numdiff);
            lm.parameters.maxfev = opt.max_evaluations;
            lm.parameters.xtol = 1e-12;
            lm.parameters.ftol = 1e-12;
            lm.minimize(p);
            Vec res(target.size());
            functor(p, res);
            const double cost = res.squaredNorm();
            if (std::isfinite(cost) && cost < best_cost) {
                best_cost = cost;
                best = detail::unpack_gabor(p);
            }
        }
    }
    best = canonical_gabor(best);
    best.amplitude *= norm;
    best.filter_norm = norm;
    best.residual = std::sqrt(best_cost) * norm;
    const bool inside = best.x0 >= -0.5 && best.x0 <= double(cols) - 0.5 && best.y0 >= -0.5 &&
                        best.y0 <= double(rows) - 0.5;
    best.good = std::isfinite(best_cost) && best.residual <= opt.good_residual_ratio * norm && inside &&
                best.freq > 0;
    return best;
}

/// Fits every row of F, each a side x side row-major filter.
inline std::vector<GaborFit> fit_gabors(const Mat& F, Index side, const GaborFitOptions& opt = {}) {
    if (side * side != F.cols()) {
        throw DimensionError("fit_gabors: filters are not side x side");
    }
    std::vector<GaborFit> fits(static_cast<std::size_t>(F.rows()));
    parallel_for(F.rows(), [&](Index k) {
        const Vec f = F.row(k).transpose();
        const Mat img = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            f.data(), side, side);
        if (img.norm() == 0) {
            fits[static_cast<std::size_t>(k)] = GaborFit{};
            return;
        }
        fits[static_cast<std::size_t>(k)] = fit_gabor(img, opt);
    });
    return fits;
}

// ---------------------------------------------------------------------------
// Topographic maps
// ---------------------------------------------------------------------------

/// Differences of a map property: linear, or circular with the given period.
struct PropertyMetric {
    double period = 0.0;  ///< 0 for linear properties

    double operator()(double a, double b) const {
        const double d = std::abs(a - b);
        if (period <= 0) {
            return d;
        }
        const double m = std::fmod(d, period);
        return std::min(m, period - m);
    }
};

struct ContinuityStat {
    double neighbor = 0.0;  ///< mean difference between torus 4-neighbors
    double shuffled = 0.0;  ///< same statistic under random relabelling of units
    double ratio() const { return shuffled > 0 ? neighbor / shuffled : 1.0; }
};

/// Neighbor-difference statistic of a grid of values (row-major, rows x cols,
/// toroidal), against its mean over `shuffles` random permutations. Cells with
/// mask == false are skipped.
inline ContinuityStat continuity(const Vec& values, const std::vector<bool>& mask, Index rows, Index cols,
                                 PropertyMetric metric, int shuffles, std::uint64_t seed) {
    require_dim(values.size(), rows * cols, "continuity");
    auto stat = [&](const std::vector<Index>& label) {
        double s = 0.0;
        Index n = 0;
        for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < cols; ++c) {
                const Index a = label[static_cast<std::size_t>(r * cols + c)];
                const Index nbrs[2] = {((r + 1) % rows) * cols + c, r * cols + (c + 1) % cols};
                for (Index nb : nbrs) {
                    const Index b = label[static_cast<std::size_t>(nb)];
                    if (a == b || !mask[static_cast<std::size_t>(a)] || !mask[static_cast<std::size_t>(b)]) {
                        continue;
                    }
                    s += metric(values[a], values[b]);
                    ++n;
                }
            }
        }
        return n ? s / double(n) : 0.0;
    };
    std::vector<Index> label(static_cast<std::size_t>(rows * cols));
    std::iota(label.begin(), label.end(), Index{0});
    ContinuityStat out;
    out.neighbor = stat(label);
    Rng rng = make_rng(seed, "continuity-shuffle");
    double acc = 0.0;
    for (int k = 0; k < shuffles; ++k) {
        std::shuffle(label.begin(), label.end(), rng);
        acc += stat(label);
    }
    out.shuffled = shuffles > 0 ? acc / shuffles : out.neighbor;
    return out;
}

struct MapReport {
    Index rows = 0;
    Index cols = 0;
    std::vector<GaborFit> fits;
    std::vector<bool> valid;
    Vec center_x, center_y, orientation, phase, log_freq;
    ContinuityStat c_center_x, c_center_y, c_orientation, c_phase, c_log_freq;

    double valid_fraction() const {
        return valid.empty() ? 0.0
                             : double(std::count(valid.begin(), valid.end(), true)) / double(valid.size());
    }
};

/// Gabor fits of the pixel-space filters of a topographic model laid out on a
/// rows x cols torus, with per-property continuity statistics.
inline MapReport map_report(const Mat& pixel_filters, Index side, Index rows, Index cols, std::uint64_t seed = 7,
                            int shuffles = 200, const GaborFitOptions& opt = {}) {
    require_dim(pixel_filters.rows(), rows * cols, "map_report: units vs grid");
    MapReport m;
    m.rows = rows;
    m.cols = cols;
    m.fits = fit_gabors(pixel_filters, side, opt);
    const Index n = rows * cols;
    m.valid.resize(static_cast<std::size_t>(n));
    m.center_x.resize(n);
    m.center_y.resize(n);
    m.orientation.resize(n);
    m.phase.resize(n);
    m.log_freq.resize(n);
    for (Index k = 0; k < n; ++k) {
        const GaborFit& g = m.fits[static_cast<std::size_t>(k)];
        m.valid[static_cast<std::size_t>(k)] = g.good;
        m.center_x[k] = g.x0;
        m.center_y[k] = g.y0;
        m.orientation[k] = g.theta;
        m.phase[k] = g.phase;
        m.log_freq[k] = std::log(std::max(g.freq, 1e-12));
    }
    m.c_center_x = continuity(m.center_x, m.valid, rows, cols, {}, shuffles, seed);
    m.c_center_y = continuity(m.center_y, m.valid, rows, cols, {}, shuffles, seed);
    m.c_orientation = continuity(m.orientation, m.valid, rows, cols, {kPi}, shuffles, seed);
    m.c_phase = continuity(m.phase, m.valid, rows, cols, {2 * kPi}, shuffles, seed);
    m.c_log_freq = continuity(m.log_freq, m.valid, rows, cols, {}, shuffles, seed);
    return m;
}

// ---------------------------------------------------------------------------
// Tuning curves
// ---------------------------------------------------------------------------

enum class TuningFamily { Phase, Orientation, Frequency, Location };

struct Grating {
    double theta = 0.0;
    double freq = 0.1;
    double phase = 0.0;
};

/// cos(2 pi f (x cos t + y sin t) + phi) sampled on a side x side grid, row-major.
inline Vec grating_stimulus(const Grating& g, Index side) {
    Vec s(side * side);
    for (Index r = 0; r < side; ++r) {
        for (Index c = 0; c < side; ++c) {
            s[r * side + c] =
                std::cos(2 * kPi * g.freq * (double(c) * std::cos(g.theta) + double(r) * std::sin(g.theta)) + g.phase);
        }
    }
    return s;
}

/// Response of a unit: |y_i| for first-layer units, z_i = sum_j W_ij y_j^2 when W is given.
inline double unit_response(const Mat& filters, const Mat* W, Index unit, const Vec& stimulus) {
    if (W) {
        const Vec y = filters * stimulus;
        return W->row(unit).dot(y.cwiseProduct(y));
    }
    return std::abs(filters.row(unit).dot(stimulus));
}

/// Best grating over a coarse orientation / frequency / phase grid.
inline Grating optimal_grating(const Mat& filters, const Mat* W, Index unit, Index side) {
    Grating best;
    double top = -1.0;
    for (int a = 0; a < 36; ++a) {
        for (int b = 0; b < 19; ++b) {
            for (int c = 0; c < 16; ++c) {
                const Grating g{kPi * a / 36.0, 0.05 + 0.025 * b, 2 * kPi * c / 16.0};
                const double r = unit_response(filters, W, unit, grating_stimulus(g, side));
                if (r > top) {
                    top = r;
                    best = g;
                }
            }
        }
    }
    return best;
}

/// Response to the unit's optimal stimulus with one parameter swept over
/// `grid`, normalized to a maximum of 1 (all zeros for a silent unit). Location
/// sweeps move a Gabor patch with the optimal carrier along the carrier
/// direction, by grid[k] pixels from the patch center.
inline Vec tuning_curve(const Mat& filters, const Mat* W, Index unit, TuningFamily family, const Vec& grid,
                        Index side, std::optional<Grating> optimal = std::nullopt) {
    require_dim(filters.cols(), side * side, "tuning_curve");
    const Grating opt = optimal ? *optimal : optimal_grating(filters, W, unit, side);
    Vec out(grid.size());
    for (Index k = 0; k < grid.size(); ++k) {
        Grating g = opt;
        Vec stim;
        switch (family) {
            case TuningFamily::Phase: g.phase = grid[k]; stim = grating_stimulus(g, side); break;
            case TuningFamily::Orientation: g.theta = grid[k]; stim = grating_stimulus(g, side); break;
            case TuningFamily::Frequency: g.freq = grid[k]; stim = grating_stimulus(g, side); break;
            case TuningFamily::Location: {
                GaborFit patch;
                patch.theta = g.theta;
                patch.freq = g.freq;
                patch.phase = g.phase;
                patch.sigma_w = patch.sigma_l = 0.5 / std::max(g.freq, 1e-3);
                const double mid = 0.5 * double(side - 1);
                patch.x0 = mid + grid[k] * std::cos(g.theta);
                patch.y0 = mid + grid[k] * std::sin(g.theta);
                const Mat img = gabor_image(patch, side, side);
                stim.resize(side * side);
                for (Index r = 0; r < side; ++r) {
                    for (Index c = 0; c < side; ++c) {
                        stim[r * side + c] = img(r, c);
                    }
                }
                break;
            }
        }
        out[k] = unit_response(filters, W, unit, stim);
    }
    const double top = out.maxCoeff();
    if (top > 0) {
        out /= top;
    } else {
        out.setZero();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stereo measures
// ---------------------------------------------------------------------------

struct Disparity {
    double phase_offset = 0.0;   ///< phi_L - phi_R, wrapped to [-pi, pi)
    double phase_shift = 0.0;    ///< spatial shift implied by the phase difference (px)
    double position_shift = 0.0; ///< x_L - x_R (px)

    /// Phase offset folded to [0, pi).
    double phase_offset_mod_pi() const {
        double m = std::fmod(phase_offset, kPi);
        return m < 0 ? m + kPi : m;
    }
};

inline Disparity disparity_measures(const GaborFit& l, const GaborFit& r) {
    if (!l.good || !r.good) {
        throw Error("disparity_measures: both fits must be valid");
    }
    Disparity d;
    d.phase_offset = wrap_pi(l.phase - r.phase);
    d.phase_shift = (l.phase / (2 * kPi * l.freq) - r.phase / (2 * kPi * r.freq)) * std::cos(0.5 * (l.theta + r.theta));
    d.position_shift = l.x0 - r.x0;
    return d;
}

/// Per-unit ocularity sum_j (|J^L_ij| - |J^R_ij|), units as rows.
inline Vec ocularity(const Mat& JL, const Mat& JR) {
    if (JL.rows() != JR.rows() || JL.cols() != JR.cols()) {
        throw DimensionError("ocularity: left and right weights differ in shape");
    }
    return (JL.cwiseAbs().rowwise().sum() - JR.cwiseAbs().rowwise().sum());
}

/// Number of sign changes along a sequence, ignoring exact zeros; `circular`
/// also counts the wrap-around pair.
inline int sign_changes(const Vec& v, bool circular) {
    std::vector<int> s;
    for (Index i = 0; i < v.size(); ++i) {
        if (v[i] > 0) {
            s.push_back(1);
        } else if (v[i] < 0) {
            s.push_back(-1);
        }
    }
    int n = 0;
    for (std::size_t i = 1; i < s.size(); ++i) {
        n += s[i] != s[i - 1];
    }
    if (circular && s.size() > 1) {
        n += s.front() != s.back();
    }
    return n;
}

/// Mean length of runs of constant sign around a ring (the ring length when there is no change).
inline double mean_band_width(const Vec& v) {
    const int changes = sign_changes(v, true);
    return changes == 0 ? double(v.size()) : double(v.size()) / changes;
}

// ---------------------------------------------------------------------------
// Matrix and signal measures
// ---------------------------------------------------------------------------

/// With C = A B^-1: sum_i (sum_j |C_ij| / max_k |C_ik| - 1) + sum_j (sum_i |C_ij| / max_k |C_kj| - 1).
/// Zero exactly when C is a scaled permutation.
inline double amari_distance(const Mat& A, const Mat& B) {
    if (A.rows() != A.cols() || B.rows() != B.cols() || A.rows() != B.rows()) {
        throw DimensionError("amari_distance: need square matrices of equal size");
    }
    Eigen::FullPivLU<Mat> lu(B);
    if (!lu.isInvertible()) {
        throw Error("amari_distance: B is singular");
    }
    const Mat C = (A * lu.inverse()).cwiseAbs();
    double d = 0.0;
    for (Index i = 0; i < C.rows(); ++i) {
        d += C.row(i).sum() / C.row(i).maxCoeff() - 1.0;
    }
    for (Index j = 0; j < C.cols(); ++j) {
        d += C.col(j).sum() / C.col(j).maxCoeff() - 1.0;
    }
    return d;
}

/// Amari distance divided by its maximum 2 N (N - 1), giving a value in [0, 1].
inline double amari_distance_normalized(const Mat& A, const Mat& B) {
    const double n = double(A.rows());
    return n > 1 ? amari_distance(A, B) / (2 * n * (n - 1)) : 0.0;
}

class IdenticalSignal : public Error {
public:
    IdenticalSignal() : Error("psnr: probe equals reference (infinite PSNR)") {}
};

/// 10 log10(s_max^2 / MSE).
inline double psnr(const Mat& reference, const Mat& probe, double s_max) {
    if (reference.rows() != probe.rows() || reference.cols() != probe.cols()) {
        throw DimensionError("psnr: geometry mismatch");
    }
    const double mse = (reference - probe).squaredNorm() / double(reference.size());
    if (mse == 0) {
        throw IdenticalSignal();
    }
    return 10.0 * std::log10(s_max * s_max / mse);
}

// ---------------------------------------------------------------------------
// Unimodality
// ---------------------------------------------------------------------------

/// Hartigan's dip statistic of a sample (the smallest sup-distance from its
/// empirical CDF to a unimodal CDF). Never below 1 / (2n).
inline double dip_statistic(std::vector<double> x) {
    const int n = static_cast<int>(x.size());
    if (n < 2) {
        return n == 1 ? 0.5 : 0.0;
    }
    std::sort(x.begin(), x.end());
    if (x.front() == x.back()) {
        return 0.5 / n;
    }
    // 1-based arrays as in the classical formulation.
    std::vector<double> xs(static_cast<std::size_t>(n + 1));
    for (int i = 0; i < n; ++i) {
        xs[static_cast<std::size_t>(i + 1)] = x[static_cast<std::size_t>(i)];
    }
    auto X = [&](int i) { return xs[static_cast<std::size_t>(i)]; };
    std::vector<int> mn(static_cast<std::size_t>(n + 1)), mj(static_cast<std::size_t>(n + 1)),
        gcm(static_cast<std::size_t>(n + 1)), lcm(static_cast<std::size_t>(n + 1));
    auto at = [](std::vector<int>& v, int i) -> int& { return v[static_cast<std::size_t>(i)]; };

    int low = 1, high = n;
    double dip = 1.0;

    at(mn, 1) = 1;
    for (int j = 2; j <= n; ++j) {
        at(mn, j) = j - 1;
        for (;;) {
            const int mnj = at(mn, j);
            const int mnmnj = at(mn, mnj);
            if (mnj == 1 || (X(j) - X(mnj)) * (mnj - mnmnj) < (X(mnj) - X(mnmnj)) * (j - mnj)) {
                break;
            }
            at(mn, j) = mnmnj;
        }
    }
    at(mj, n) = n;
    for (int k = n - 1; k >= 1; --k) {
        at(mj, k) = k + 1;
        for (;;) {
            const int mjk = at(mj, k);
            const int mjmjk = at(mj, mjk);
            if (mjk == n || (X(k) - X(mjk)) * (mjk - mjmjk) < (X(mjk) - X(mjmjk)) * (k - mjk)) {
                break;
            }
            at(mj, k) = mjmjk;
        }
    }

    for (;;) {
        int ic = 1;
        at(gcm, 1) = high;
        while (at(gcm, ic) > low) {
            const int prev = at(gcm, ic);
            ++ic;
            at(gcm, ic) = at(mn, prev);
        }
        const int icx = ic;
        ic = 1;
        at(lcm, 1) = low;
        while (at(lcm, ic) < high) {
            const int prev = at(lcm, ic);
            ++ic;
            at(lcm, ic) = at(mj, prev);
        }
        const int icv = ic;

        int ig = icx, ih = icv;
        int ix = icx - 1, iv = 2;
        double d = 0.0;
        if (icx != 2 || icv != 2) {
            do {
                const int igcmx = at(gcm, ix);
                const int lcmiv = at(lcm, iv);
                if (igcmx > lcmiv) {
                    const int lcmiv1 = at(lcm, iv - 1);
                    const double a = lcmiv - lcmiv1;
                    const double b = igcmx - lcmiv1 - 1;
                    const double dx = (X(igcmx) - X(lcmiv1)) * a / (X(lcmiv) - X(lcmiv1)) - b;
                    ++iv;
                    if (dx >= d) {
                        d = dx;
                        ig = ix + 1;
                        ih = iv - 1;
                    }
                } else {
                    const int gcmix1 = at(gcm, ix + 1);
                    const double a = lcmiv - gcmix1 + 1;
                    const double b = igcmx - gcmix1;
                    const double dx = a - (X(lcmiv) - X(gcmix1)) * b / (X(igcmx) - X(gcmix1));
                    --ix;
                    if (dx >= d) {
                        d = dx;
                        ig = ix + 1;
                        ih = iv;
                    }
                }
                ix = std::max(ix, 1);
                iv = std::min(iv, icv);
            } while (at(gcm, ix) != at(lcm, iv));
        } else {
            d = 1.0;
        }
        if (d < dip) {
            break;
        }

        double dip_l = 0.0;
        for (int j = ig; j < icx; ++j) {
            double max_t = 1.0;
            const int jb = at(gcm, j + 1), je = at(gcm, j);
            if (je - jb > 1 && X(je) != X(jb)) {
                const double C = (je - jb) / (X(je) - X(jb));
                for (int jj = jb; jj <= je; ++jj) {
                    max_t = std::max(max_t, (jj - jb + 1) - (X(jj) - X(jb)) * C);
                }
            }
            dip_l = std::max(dip_l, max_t);
        }
        double dip_u = 0.0;
        for (int j = ih; j < icv; ++j) {
            double max_t = 1.0;
            const int jb = at(lcm, j), je = at(lcm, j + 1);
            if (je - jb > 1 && X(je) != X(jb)) {
                const double C = (je - jb) / (X(je) - X(jb));
                for (int jj = jb; jj <= je; ++jj) {
                    max_t = std::max(max_t, (X(jj) - X(jb)) * C - (jj - jb - 1));
                }
            }
            dip_u = std::max(dip_u, max_t);
        }
        dip = std::max(dip, std::max(dip_l, dip_u));
        if (low == at(gcm, ig) && high == at(lcm, ih)) {
            break;
        }
        low = at(gcm, ig);
        high = at(lcm, ih);
    }
    return dip / (2.0 * n);
}

struct DipTest {
    double dip = 0.0;
    double p_value = 1.0;
};

/// Dip statistic with a Monte Carlo p-value against uniform samples of the same size.
inline DipTest dip_test(const std::vector<double>& x, int simulations = 2000, std::uint64_t seed = 11) {
    DipTest t;
    t.dip = dip_statistic(x);
    Rng rng = make_rng(seed, "dip-null");
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int exceed = 0;
    std::vector<double> s(x.size());
    for (int k = 0; k < simulations; ++k) {
        for (auto& v : s) {
            v = u(rng);
        }
        exceed += dip_statistic(s) >= t.dip;
    }
    t.p_value = (exceed + 1.0) / (simulations + 1.0);
    return t;
}

}  // namespace ebm
