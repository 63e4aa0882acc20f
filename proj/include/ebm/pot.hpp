#pragma once

#include "ebm/core.hpp"
#include "ebm/model.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <optional>

namespace ebm {

/// Product-of-Student-t parameters.
///
/// Features y = J x; top-layer inputs z = W (y o y) (z = y o y for the single
/// layer, where W is the identity); energy sum_i alpha_i log(1 + z_i / 2).
struct PotParams {
    Mat J;      ///< M features x D inputs
    Mat W;      ///< T top units x M features, nonnegative
    Vec alpha;  ///< one exponent per top unit, or a single shared exponent

    bool hierarchical = false;     ///< use W; otherwise W is the identity
    bool train_W = false;          ///< W is a learned parameter block
    bool norm_constrained = false; ///< filters are rows of norm `norm`, which is learned
    double norm = 1.0;
    bool exact_sampling = false;   ///< overcomplete x | u draws use the exact Cholesky path
    Index grid_rows = 0;  ///< topographic layout of the features (0 when none)
    Index grid_cols = 0;

    Index features() const { return J.rows(); }
    Index inputs() const { return J.cols(); }
    Index top_units() const { return hierarchical ? W.rows() : J.rows(); }
    bool shared_alpha() const { return alpha.size() == 1 && top_units() != 1; }
    bool complete() const { return J.rows() == J.cols(); }

    Vec alpha_vec() const { return shared_alpha() ? Vec::Constant(top_units(), alpha[0]) : alpha; }
};

/// Gibbs sweep: u | x, then x | u.
class PotGibbsSampler;

class PotModel {
public:
    static constexpr bool has_stochastic_hiddens = false;
    static constexpr bool supports_aux_gibbs = true;

    PotModel() = default;

    explicit PotModel(PotParams p) : p_(std::move(p)) {
        if (!p_.hierarchical) {
            p_.W = Mat::Identity(p_.J.rows(), p_.J.rows());
            p_.train_W = false;
        }
        if (p_.W.cols() != p_.J.rows()) {
            throw DimensionError("PotModel: W must have one column per feature");
        }
        if (p_.alpha.size() != 1 && p_.alpha.size() != p_.top_units()) {
            throw DimensionError("PotModel: alpha must have one entry per top unit, or a single shared entry");
        }
        if ((p_.W.array() < 0).any()) {
            throw Error("PotModel: W entries must be nonnegative");
        }
        if (p_.norm_constrained) {
            project();
        }
    }

    /// Single-layer model with Gaussian filters of standard deviation sd.
    static PotModel random(Index features, Index inputs, double sd, Rng& rng, double alpha = 1.5) {
        PotParams p;
        p.J = randn(features, inputs, rng, sd);
        p.alpha = Vec::Constant(features, alpha);
        return PotModel(std::move(p));
    }

    const PotParams& parameters() const { return p_; }

    Index state_dim() const { return p_.J.cols(); }
    std::string family() const { return "pot"; }

    /// Filters actually applied to the input (rescaled to the shared norm when constrained).
    Mat effective_filters() const {
        if (!p_.norm_constrained) {
            return p_.J;
        }
        Mat out = p_.J;
        for (Index i = 0; i < out.rows(); ++i) {
            const double r = out.row(i).norm();
            if (r > 0) {
                out.row(i) *= p_.norm / r;
            }
        }
        return out;
    }

    ParamLayout layout() const {
        ParamLayout l;
        l.add("J", p_.J.rows(), p_.J.cols());
        if (p_.train_W) {
            l.add("W", p_.W.rows(), p_.W.cols());
        }
        l.add("alpha", p_.alpha.size());
        if (p_.norm_constrained) {
            l.add("norm", 1);
        }
        return l;
    }

    Vec params() const {
        const ParamLayout l = layout();
        Vec v(l.size());
        block_view(v, l.block("J")) = p_.J;
        if (p_.train_W) {
            block_view(v, l.block("W")) = p_.W;
        }
        block_view(v, l.block("alpha")) = p_.alpha;
        if (p_.norm_constrained) {
            v[l.block("norm").offset] = p_.norm;
        }
        return v;
    }

    void set_params(const Vec& v) {
        const ParamLayout l = layout();
        require_dim(v.size(), l.size(), "PotModel::set_params");
        p_.J = block_view(v, l.block("J"));
        if (p_.train_W) {
            p_.W = block_view(v, l.block("W"));
        }
        p_.alpha = block_view(v, l.block("alpha"));
        if (p_.norm_constrained) {
            p_.norm = v[l.block("norm").offset];
        }
    }

    /// Keeps W nonnegative, alpha positive, and filter rows at the shared norm.
    /// Zero filter rows cannot be normalized and stay at zero.
    void project() {
        if (p_.train_W) {
            p_.W = p_.W.cwiseMax(0.0);
        }
        p_.alpha = p_.alpha.cwiseMax(1e-3);
        if (p_.norm_constrained) {
            p_.norm = std::max(p_.norm, 1e-8);
            for (Index i = 0; i < p_.J.rows(); ++i) {
                const double r = p_.J.row(i).norm();
                // Rows already at the target norm are left bit-for-bit alone, so
                // projection is idempotent and reloaded models save identically.
                if (r > 0 && std::abs(r - p_.norm) > 8 * std::numeric_limits<double>::epsilon() * p_.norm) {
                    p_.J.row(i) *= p_.norm / r;
                }
            }
        }
    }

    /// y = J x and z = W (y o y).
    std::pair<Vec, Vec> features(const Vec& x) const {
        require_dim(x.size(), state_dim(), "PotModel");
        Vec y = effective_filters() * x;
        Vec z = pool(y);
        return {std::move(y), std::move(z)};
    }

    double energy(const Vec& x) const {
        const auto [y, z] = features(x);
        const Vec a = p_.alpha_vec();
        double e = 0.0;
        for (Index i = 0; i < z.size(); ++i) {
            e += a[i] * std::log1p(0.5 * z[i]);
        }
        return e;
    }

    /// Energy of the augmented model over (x, u), u > 0:
    /// sum_i u_i (1 + z_i / 2) + (1 - alpha_i) log u_i. Integrating u out gives
    /// exp(-energy(x)) times prod_i Gamma(alpha_i).
    double joint_energy(const Vec& x, const Vec& u) const {
        const auto [y, z] = features(x);
        require_dim(u.size(), z.size(), "PotModel::joint_energy");
        const Vec a = p_.alpha_vec();
        double e = 0.0;
        for (Index i = 0; i < z.size(); ++i) {
            if (!(u[i] > 0)) {
                throw Error("PotModel::joint_energy: u must be positive");
            }
            e += u[i] * (1.0 + 0.5 * z[i]) + (1.0 - a[i]) * std::log(u[i]);
        }
        return e;
    }

    Vec energy_state_grad(const Vec& x) const {
        const Mat Je = effective_filters();
        const Vec y = Je * x;
        return Je.transpose() * feature_slope(y, pool(y));
    }

    Vec energy_param_grad(const Vec& x) const {
        require_dim(x.size(), state_dim(), "PotModel");
        return mean_energy_param_grad(x.transpose());
    }

    Vec mean_energy_param_grad(const Mat& X) const {
        require_dim(X.cols(), state_dim(), "PotModel");
        const ParamLayout l = layout();
        Vec out = Vec::Zero(l.size());
        const Index n = X.rows();
        if (n == 0) {
            return out;
        }
        const double inv = 1.0 / static_cast<double>(n);
        const Mat Je = effective_filters();
        const Mat Y = X * Je.transpose();                        // n x M
        const Mat Y2 = Y.array().square().matrix();
        const Mat Z = p_.hierarchical ? Mat(Y2 * p_.W.transpose()) : Y2;  // n x T
        const Vec a = p_.alpha_vec();
        Mat C(n, Z.cols());
        Mat L(n, Z.cols());
        for (Index j = 0; j < Z.cols(); ++j) {
            for (Index r = 0; r < n; ++r) {
                C(r, j) = a[j] / (1.0 + 0.5 * Z(r, j));
                L(r, j) = std::log1p(0.5 * Z(r, j));
            }
        }
        const Mat GY = p_.hierarchical ? Mat(Y.cwiseProduct(C * p_.W)) : Mat(Y.cwiseProduct(C));
        const Mat GJe = inv * (GY.transpose() * X);
        write_filter_grad(out, l, GJe);
        if (p_.train_W) {
            block_view(out, l.block("W")) = (0.5 * inv) * (C.transpose() * Y2);
        }
        const Vec galpha = inv * L.colwise().sum().transpose();
        if (p_.shared_alpha()) {
            out[l.block("alpha").offset] = galpha.sum();
        } else {
            block_view(out, l.block("alpha")) = galpha;
        }
        return out;
    }

    /// Normalizer of the 1-D density (1 + t^2/2)^(-alpha): sqrt(2 pi) Gamma(alpha - 1/2) / Gamma(alpha).
    static double log_student_normalizer(double alpha) {
        if (!(alpha > 0.5)) {
            throw Error("Student-t normalizer needs alpha > 1/2");
        }
        return 0.5 * std::log(2 * kPi) + std::lgamma(alpha - 0.5) - std::lgamma(alpha);
    }

    /// log Z for the complete single-layer model (the square, noiseless ICA case).
    double square_log_partition() const {
        require_square();
        Eigen::PartialPivLU<Mat> lu(effective_filters());
        const double det = lu.determinant();
        if (det == 0.0 || !std::isfinite(det)) {
            throw Error("square_log_partition: J is singular");
        }
        const Vec a = p_.alpha_vec();
        double logz = -std::log(std::abs(det));
        for (Index i = 0; i < a.size(); ++i) {
            logz += log_student_normalizer(a[i]);
        }
        return logz;
    }

    /// Exact model expectation of dE/dtheta (= -d log Z / d theta) in the square case.
    Vec exact_model_expectation() const {
        require_square();
        const ParamLayout l = layout();
        Vec out = Vec::Zero(l.size());
        Eigen::FullPivLU<Mat> lu(effective_filters());
        if (!lu.isInvertible()) {
            throw Error("exact_model_expectation: J is singular");
        }
        write_filter_grad(out, l, lu.inverse().transpose());
        const Vec a = p_.alpha_vec();
        Vec ga(a.size());
        for (Index i = 0; i < a.size(); ++i) {
            ga[i] = -(boost::math::digamma(a[i] - 0.5) - boost::math::digamma(a[i]));
        }
        if (p_.shared_alpha()) {
            out[l.block("alpha").offset] = ga.sum();
        } else {
            block_view(out, l.block("alpha")) = ga;
        }
        return out;
    }

    /// y*_i = y_i * sum_j W_ji (alpha_j - 1) / (1 + z_j / 2).
    Vec divisive_normalize(const Vec& x) const {
        const auto [y, z] = features(x);
        const Vec a = p_.alpha_vec();
        Vec s(z.size());
        for (Index j = 0; j < z.size(); ++j) {
            s[j] = (a[j] - 1.0) / (1.0 + 0.5 * z[j]);
        }
        return y.cwiseProduct(p_.W.transpose() * s);
    }

    PotGibbsSampler make_gibbs_sampler(bool exact_overcomplete = false) const;

    /// Pooled squared features for a given y.
    Vec pool(const Vec& y) const {
        const Vec y2 = y.array().square().matrix();
        return p_.hierarchical ? Vec(p_.W * y2) : y2;
    }

private:
    void require_square() const {
        if (!p_.complete()) {
            throw Error("exact partition function is only available for complete (square) models");
        }
        if (p_.hierarchical && !p_.W.isIdentity(0.0)) {
            throw Error("exact partition function needs W = identity");
        }
    }

    Vec feature_slope(const Vec& y, const Vec& z) const {
        const Vec a = p_.alpha_vec();
        Vec c(z.size());
        for (Index i = 0; i < z.size(); ++i) {
            c[i] = a[i] / (1.0 + 0.5 * z[i]);
        }
        return p_.hierarchical ? Vec(y.cwiseProduct(p_.W.transpose() * c)) : Vec(y.cwiseProduct(c));
    }

    /// Writes dE/dJ given dE/dJ_eff, chaining through the row normalization
    /// (and producing dE/dnorm) when the norm constraint is active.
    void write_filter_grad(Vec& out, const ParamLayout& l, const Mat& g_eff) const {
        auto gJ = block_view(out, l.block("J"));
        if (!p_.norm_constrained) {
            gJ = g_eff;
            return;
        }
        double gnorm = 0.0;
        for (Index i = 0; i < p_.J.rows(); ++i) {
            const double r = p_.J.row(i).norm();
            if (r == 0) {
                gJ.row(i).setZero();
                continue;
            }
            const Eigen::RowVectorXd u = p_.J.row(i) / r;
            const Eigen::RowVectorXd g = g_eff.row(i);
            const double gu = g.dot(u);
            gJ.row(i) = (p_.norm / r) * (g - gu * u);
            gnorm += gu;
        }
        out[l.block("norm").offset] = gnorm;
    }

    PotParams p_;
};

static_assert(DifferentiableEnergyModel<PotModel>);

/// Auxiliary-variable Gibbs sampler for a fixed parameter setting.
///
/// u_i | x ~ Gamma(shape alpha_i, rate 1 + z_i / 2);
/// x | u ~ N(0, (J^T V J)^-1) with V = Diag(W^T u).
/// Complete models sample x = J^-1 V^-1/2 n. Overcomplete models use the
/// pseudo-inverse J+ = (J^T J)^-1 J^T in place of J^-1 unless
/// exact_overcomplete is set, in which case J^T V J is factorized per draw.
class PotGibbsSampler {
public:
    PotGibbsSampler(const PotModel& model, bool exact_overcomplete) : model_(&model), exact_(exact_overcomplete) {
        Je_ = model.effective_filters();
        alpha_ = model.parameters().alpha_vec();
        if (model.parameters().complete()) {
            Eigen::FullPivLU<Mat> lu(Je_);
            if (!lu.isInvertible()) {
                throw Error("PoT sampler: filter matrix is singular");
            }
            inverse_ = lu.inverse();
            exact_ = false;
        } else if (!exact_) {
            const Mat gram = Je_.transpose() * Je_;
            Eigen::LDLT<Mat> ldlt(gram);
            if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                ldlt.vectorD().minCoeff() <= 1e-12 * ldlt.vectorD().maxCoeff()) {
                throw Error("PoT sampler: J^T J is rank deficient, pseudo-inverse unavailable");
            }
            inverse_ = ldlt.solve(Je_.transpose());
        }
    }

    /// Shape alpha_i / T, rate 1 + z_i / 2 (T tempers the marginal energy).
    Vec sample_u(const Vec& x, Rng& rng, double temperature = 1.0) const {
        const Vec y = Je_ * x;
        const Vec z = model_->pool(y);
        Vec u(z.size());
        for (Index i = 0; i < z.size(); ++i) {
            std::gamma_distribution<double> g(alpha_[i] / temperature, 1.0 / (1.0 + 0.5 * z[i]));
            u[i] = std::max(g(rng), std::numeric_limits<double>::min());
        }
        return u;
    }

    Vec sample_x(const Vec& u, Rng& rng) const {
        if ((u.array() <= 0).any()) {
            throw Error("PoT sampler: auxiliary variables must be positive");
        }
        const auto& p = model_->parameters();
        const Vec v = p.hierarchical ? Vec(p.W.transpose() * u) : u;
        if (!exact_) {
            const Vec n = randn(v.size(), rng);
            return inverse_ * n.cwiseQuotient(v.cwiseSqrt());
        }
        const Mat prec = Je_.transpose() * v.asDiagonal() * Je_;
        Eigen::LLT<Mat> llt(prec);
        if (llt.info() != Eigen::Success) {
            throw Error("PoT sampler: J^T V J is not positive definite");
        }
        const Vec n = randn(Je_.cols(), rng);
        return llt.matrixU().solve(n);
    }

    Vec sweep(const Vec& x, Rng& rng, double temperature = 1.0) const {
        return sample_x(sample_u(x, rng, temperature), rng);
    }

private:
    const PotModel* model_;
    bool exact_;
    Mat Je_;
    Vec alpha_;
    Mat inverse_;
};

inline PotGibbsSampler PotModel::make_gibbs_sampler(bool exact_overcomplete) const {
    return PotGibbsSampler(*this, exact_overcomplete || p_.exact_sampling);
}

inline Vec sample_u_given_x(const PotModel& model, const Vec& x, Rng& rng) {
    return model.make_gibbs_sampler().sample_u(x, rng);
}

inline Vec sample_x_given_u(const PotModel& model, const Vec& u, Rng& rng) {
    return model.make_gibbs_sampler().sample_x(u, rng);
}

// ---------------------------------------------------------------------------
// Topographic pooling
// ---------------------------------------------------------------------------

struct Neighborhood {
    enum class Shape { Manhattan, Square };
    Shape shape = Shape::Square;
    int size = 3;  ///< Manhattan radius, or square window side (odd)

    static Neighborhood manhattan(int radius) { return {Shape::Manhattan, radius}; }
    static Neighborhood square(int side) { return {Shape::Square, side}; }
};

/// 0/1 pooling matrix on a torus: W_ij = 1 when feature j lies in the
/// neighborhood of top unit i. Unit (r, c) has index r * cols + c.
inline Mat build_topographic_pooling(Index rows, Index cols, Neighborhood nb) {
    if (rows < 1 || cols < 1) {
        throw Error("topographic pooling: empty grid");
    }
    int reach = 0;
    if (nb.shape == Neighborhood::Shape::Square) {
        if (nb.size < 1 || nb.size % 2 == 0) {
            throw Error("topographic pooling: square window side must be odd and positive");
        }
        reach = nb.size / 2;
    } else {
        if (nb.size < 0) {
            throw Error("topographic pooling: negative radius");
        }
        reach = nb.size;
    }
    if (2 * reach + 1 > rows || 2 * reach + 1 > cols) {
        throw Error("topographic pooling: neighborhood larger than grid");
    }
    const Index n = rows * cols;
    Mat W = Mat::Zero(n, n);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            for (int dr = -reach; dr <= reach; ++dr) {
                for (int dc = -reach; dc <= reach; ++dc) {
                    if (nb.shape == Neighborhood::Shape::Manhattan && std::abs(dr) + std::abs(dc) > reach) {
                        continue;
                    }
                    const Index rr = ((r + dr) % rows + rows) % rows;
                    const Index cc = ((c + dc) % cols + cols) % cols;
                    W(r * cols + c, rr * cols + cc) = 1.0;
                }
            }
        }
    }
    return W;
}

/// Topographic PoT: fixed 0/1 pooling over a toroidal grid, J free.
inline PotModel make_topographic_pot(Index grid_rows, Index grid_cols, Index inputs, Neighborhood nb, double sd,
                                     Rng& rng, double alpha = 1.5) {
    PotParams p;
    p.J = randn(grid_rows * grid_cols, inputs, rng, sd);
    p.W = build_topographic_pooling(grid_rows, grid_cols, nb);
    p.alpha = Vec::Constant(grid_rows * grid_cols, alpha);
    p.hierarchical = true;
    p.train_W = false;
    p.grid_rows = grid_rows;
    p.grid_cols = grid_cols;
    return PotModel(std::move(p));
}

/// Turns a trained single-layer model into a hierarchical one with W = I, optionally trainable.
inline PotModel release_pooling(const PotModel& single, bool trainable) {
    PotParams p = single.parameters();
    p.hierarchical = true;
    p.train_W = trainable;
    p.W = Mat::Identity(p.J.rows(), p.J.rows());
    if (p.shared_alpha()) {
        p.alpha = Vec::Constant(p.J.rows(), p.alpha[0]);
    }
    return PotModel(std::move(p));
}

}  // namespace ebm
