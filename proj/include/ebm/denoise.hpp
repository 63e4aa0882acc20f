#pragma once

#include "ebm/analysis.hpp"
#include "ebm/core.hpp"
#include "ebm/data.hpp"
#include "ebm/pot.hpp"

#include <Eigen/Eigenvalues>

namespace ebm {

struct IwfOptions {
    double tol = 1e-8;       ///< stop when max |change in x| < tol
    int max_iter = 500;
    bool record_objective = false;
};

struct IwfResult {
    Vec x;
    int iterations = 0;
    bool converged = false;
    std::vector<double> objective;  ///< per iterate, starting with the noisy input, when recorded
};

/// 1/2 (x - y)^T S^-1 (x - y) + sum_i alpha_i log(1 + z_i / 2) with z = W (J x)^2.
inline double iwf_objective(const PotModel& prior, const Mat& noise_precision, const Vec& y, const Vec& x) {
    const Vec r = x - y;
    double e = 0.5 * r.dot(noise_precision * r);
    return e + prior.energy(x);
}

/// MAP estimate of a clean patch under a PoT prior with Gaussian noise of
/// precision S^-1, by alternating the tight log bound (gamma_i = 1 / (1 + z_i / 2))
/// with the Gaussian solve x = (S^-1 + J^T D J)^-1 S^-1 y, D = Diag(W^T (alpha o gamma)).
inline IwfResult iwf_patch(const PotModel& prior, const Mat& noise_precision, const Vec& y, const IwfOptions& opt = {},
                           const Vec* x0 = nullptr) {
    require_dim(y.size(), prior.state_dim(), "iwf_patch");
    if (noise_precision.rows() != y.size() || noise_precision.cols() != y.size()) {
        throw DimensionError("iwf_patch: noise precision must be square with the patch dimension");
    }
    const PotParams& p = prior.parameters();
    const Mat J = prior.effective_filters();
    const Vec alpha = p.alpha_vec();
    const Vec rhs = noise_precision * y;
    IwfResult res;
    res.x = x0 ? *x0 : y;
    if (opt.record_objective) {
        res.objective.push_back(iwf_objective(prior, noise_precision, y, res.x));
    }
    for (int it = 0; it < opt.max_iter; ++it) {
        const Vec u = J * res.x;
        const Vec z = prior.pool(u);
        Vec ag(z.size());
        for (Index i = 0; i < z.size(); ++i) {
            ag[i] = alpha[i] / (1.0 + 0.5 * z[i]);
        }
        const Vec d = p.hierarchical ? Vec(p.W.transpose() * ag) : ag;
        const Mat A = noise_precision + J.transpose() * d.asDiagonal() * J;
        Eigen::LLT<Mat> llt(A);
        if (llt.info() != Eigen::Success) {
            throw Error("iwf_patch: linear system is not positive definite");
        }
        const Vec next = llt.solve(rhs);
        const double change = (next - res.x).cwiseAbs().maxCoeff();
        res.x = next;
        res.iterations = it + 1;
        if (opt.record_objective) {
            res.objective.push_back(iwf_objective(prior, noise_precision, y, res.x));
        }
        if (change < opt.tol) {
            res.converged = true;
            break;
        }
    }
    return res;
}

/// Minimizer of (l - nu)^2 / (2 s) + alpha log(1 + l^2 / 2) for noise variance s:
/// a real root of l^3 - nu l^2 + 2 (1 + s alpha) l - 2 nu = 0 (s = 1 gives the unit-noise form).
/// Among several real roots the one with the lowest objective wins, ties toward smaller |l|.
inline double cubic_shortcut(double nu, double alpha, double noise_var = 1.0) {
    const double c2 = -nu, c1 = 2.0 * (1.0 + noise_var * alpha), c0 = -2.0 * nu;
    Eigen::Matrix3d companion;
    companion << 0, 0, -c0, 1, 0, -c1, 0, 1, -c2;
    const Eigen::Vector3cd roots = companion.eigenvalues();
    auto cubic = [&](double l) { return ((l + c2) * l + c1) * l + c0; };
    auto slope = [&](double l) { return (3 * l + 2 * c2) * l + c1; };
    auto objective = [&](double l) { return (l - nu) * (l - nu) / (2 * noise_var) + alpha * std::log1p(0.5 * l * l); };
    const double scale = 1.0 + std::abs(nu);
    double best = 0.0;
    double best_f = std::numeric_limits<double>::infinity();
    for (Index k = 0; k < 3; ++k) {
        if (std::abs(roots[k].imag()) > 1e-6 * scale) {
            continue;
        }
        double l = roots[k].real();
        for (int it = 0; it < 50; ++it) {
            const double s = slope(l);
            if (s == 0) {
                break;
            }
            const double step = cubic(l) / s;
            l -= step;
            if (std::abs(step) < 1e-15 * scale) {
                break;
            }
        }
        const double f = objective(l);
        if (f < best_f - 1e-14 * (1 + std::abs(f)) ||
            (std::abs(f - best_f) <= 1e-14 * (1 + std::abs(f)) && std::abs(l) < std::abs(best))) {
            best = l;
            best_f = f;
        }
    }
    return best;
}

/// Everything needed to denoise pixel blocks with a prior living in whitened space.
/// Blocks are side x side; pixel_mean is the per-pixel mean removed before whitening,
/// and the block DC level is kept as observed.
struct DenoiseJob {
    PotModel prior;
    WhiteningTransform whitener;
    Vec pixel_mean;
    Index side = 0;
    IwfOptions iwf;
    Index stride = 0;  ///< 0 or side: non-overlapping blocks; smaller strides average overlapping estimates
};

/// Pixel-space noise of std sigma, pushed through DC removal and the whitener.
inline Mat whitened_noise_covariance(const WhiteningTransform& t, double sigma) {
    const Index d = t.input_dim();
    const Mat P = Mat::Identity(d, d) - Mat::Constant(d, d, 1.0 / double(d));
    return sigma * sigma * t.forward * P * t.forward.transpose();
}

inline Index reflect_index(Index i, Index n) {
    if (n == 1) {
        return 0;
    }
    const Index period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

/// Mirror-extends img to rows x cols, starting at its top-left pixel.
inline Mat mirror_pad(const Mat& img, Index rows, Index cols) {
    Mat out(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            out(r, c) = img(reflect_index(r, img.rows()), reflect_index(c, img.cols()));
        }
    }
    return out;
}

/// Mirror-extends img by `before` pixels at the top/left and `after` at the bottom/right.
inline Mat mirror_pad_offset(const Mat& img, Index before, Index after) {
    Mat out(img.rows() + before + after, img.cols() + before + after);
    for (Index r = 0; r < out.rows(); ++r) {
        for (Index c = 0; c < out.cols(); ++c) {
            out(r, c) = img(reflect_index(r - before, img.rows()), reflect_index(c - before, img.cols()));
        }
    }
    return out;
}

/// Denoises one pixel block (row-major vector).
inline Vec denoise_block(const DenoiseJob& job, const Mat& noise_precision, const Vec& block) {
    const Vec centered_px = block - job.pixel_mean;
    const double dc = centered_px.mean();
    const Vec c = centered_px.array() - dc;
    const Vec w = apply_whitener(job.whitener, c.transpose()).row(0).transpose();
    const IwfResult r = iwf_patch(job.prior, noise_precision, w, job.iwf);
    const Vec back = invert_whitener(job.whitener, r.x.transpose()).row(0).transpose();
    return back.array() + dc + job.pixel_mean.array();
}

/// Block-wise IWF over an image. Edge blocks use mirror padding.
inline Mat iwf_image(const DenoiseJob& job, const Mat& noisy, double noise_std) {
    const Index side = job.side;
    require_dim(job.pixel_mean.size(), side * side, "iwf_image: pixel mean");
    require_dim(job.whitener.input_dim(), side * side, "iwf_image: whitener");
    require_dim(job.prior.state_dim(), job.whitener.output_dim(), "iwf_image: prior");
    const Index stride = (job.stride <= 0 || job.stride > side) ? side : job.stride;
    const Index br = (noisy.rows() - side + stride - 1) / stride + 1;
    const Index bc = (noisy.cols() - side + stride - 1) / stride + 1;
    const Index pr = std::max(noisy.rows(), (br - 1) * stride + side);
    const Index pc = std::max(noisy.cols(), (bc - 1) * stride + side);
    const Mat padded = mirror_pad(noisy, pr, pc);
    Mat cov = whitened_noise_covariance(job.whitener, noise_std);
    // Guard against a singular covariance when the noise is zero.
    cov.diagonal().array() += 1e-12 * std::max(1.0, cov.diagonal().cwiseAbs().maxCoeff());
    const Mat precision = cov.llt().solve(Mat::Identity(cov.rows(), cov.cols()));
    Mat sum = Mat::Zero(pr, pc);
    Mat count = Mat::Zero(pr, pc);
    std::vector<Vec> out(static_cast<std::size_t>(br * bc));
    parallel_for(br * bc, [&](Index k) {
        const Index r0 = (k / bc) * stride, c0 = (k % bc) * stride;
        Vec block(side * side);
        for (Index r = 0; r < side; ++r) {
            for (Index c = 0; c < side; ++c) {
                block[r * side + c] = padded(r0 + r, c0 + c);
            }
        }
        out[static_cast<std::size_t>(k)] = denoise_block(job, precision, block);
    });
    for (Index k = 0; k < br * bc; ++k) {
        const Index r0 = (k / bc) * stride, c0 = (k % bc) * stride;
        const Vec& v = out[static_cast<std::size_t>(k)];
        for (Index r = 0; r < side; ++r) {
            for (Index c = 0; c < side; ++c) {
                sum(r0 + r, c0 + c) += v[r * side + c];
                count(r0 + r, c0 + c) += 1.0;
            }
        }
    }
    return sum.topLeftCorner(noisy.rows(), noisy.cols()).cwiseQuotient(count.topLeftCorner(noisy.rows(), noisy.cols()));
}

/// Adds seeded i.i.d. Gaussian noise of std sigma.
inline Mat add_noise(const Mat& img, double sigma, std::uint64_t seed) {
    Rng rng = make_rng(seed, "image-noise");
    return img + randn(img.rows(), img.cols(), rng, sigma);
}

/// Local-statistics Wiener filter: m + max(v - s^2, 0) / max(v, s^2) (x - m) with
/// mean m and variance v over a window x window neighborhood (mirror boundaries).
inline Mat wiener_baseline(const Mat& img, double noise_std, Index window) {
    if (window < 1) {
        throw Error("wiener_baseline: window must be >= 1");
    }
    if (noise_std == 0) {
        return img;
    }
    const Index h = window / 2;
    const Index extra = window - 1 - h;
    const Mat padded = mirror_pad_offset(img, h, extra);
    const double s2 = noise_std * noise_std;
    const double n = double(window * window);
    Mat out(img.rows(), img.cols());
    for (Index r = 0; r < img.rows(); ++r) {
        for (Index c = 0; c < img.cols(); ++c) {
            const auto blk = padded.block(r, c, window, window);
            const double m = blk.sum() / n;
            const double v = blk.array().square().sum() / n - m * m;
            const double gain = std::max(v - s2, 0.0) / std::max(v, s2);
            out(r, c) = m + gain * (img(r, c) - m);
        }
    }
    return out;
}

struct WienerChoice {
    Mat image;
    Index window = 0;
    double psnr = 0.0;
};

/// Tries each window and keeps the one with the best PSNR against the clean image.
inline WienerChoice wiener_best(const Mat& clean, const Mat& noisy, double noise_std, const std::vector<Index>& windows,
                                double s_max = 255.0) {
    WienerChoice best;
    best.psnr = -std::numeric_limits<double>::infinity();
    for (Index w : windows) {
        Mat out = wiener_baseline(noisy, noise_std, w);
        const double q = psnr(clean, out, s_max);
        if (q > best.psnr) {
            best = {std::move(out), w, q};
        }
    }
    return best;
}

/// Noise std giving the requested PSNR of the noisy image: s_max / 10^(dB / 20).
inline double noise_std_for_psnr(double db, double s_max = 255.0) { return s_max / std::pow(10.0, db / 20.0); }

}  // namespace ebm
