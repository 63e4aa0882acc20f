#pragma once

#include "ebm/core.hpp"
#include "ebm/model.hpp"

namespace ebm {

/// Energy attached to each sigmoid unit s_i = sigma(J_i.x + b_i).
enum class SigmoidEnergy {
    /// E_i = a_i * s_i (toy density model).
    Weighted,
    /// E_i = -log((1 - s_i) s_i), the logistic source prior used for blind source separation.
    Logistic,
};

struct SigmoidNetParams {
    Mat J;  ///< features x inputs
    Vec b;  ///< per-feature bias
    Vec a;  ///< per-feature energy weight (unused by the logistic form)

    Index features() const { return J.rows(); }
    Index inputs() const { return J.cols(); }
};

/// Single layer of sigmoid units whose energies sum to the model energy.
class SigmoidNet {
public:
    static constexpr bool has_stochastic_hiddens = false;
    static constexpr bool supports_aux_gibbs = false;

    SigmoidNet() = default;

    SigmoidNet(SigmoidNetParams p, SigmoidEnergy form = SigmoidEnergy::Weighted) : p_(std::move(p)), form_(form) {
        if (p_.b.size() != p_.J.rows() || p_.a.size() != p_.J.rows()) {
            throw DimensionError("SigmoidNet: b and a must have one entry per feature");
        }
    }

    /// Zero biases, unit energy weights, Gaussian filters with standard deviation sd.
    static SigmoidNet random(Index features, Index inputs, double sd, Rng& rng,
                             SigmoidEnergy form = SigmoidEnergy::Weighted) {
        return SigmoidNet({randn(features, inputs, rng, sd), Vec::Zero(features), Vec::Ones(features)}, form);
    }

    const SigmoidNetParams& parameters() const { return p_; }
    SigmoidNetParams& parameters() { return p_; }
    SigmoidEnergy form() const { return form_; }

    Index state_dim() const { return p_.J.cols(); }
    std::string family() const { return "sigmoid-net"; }

    ParamLayout layout() const {
        ParamLayout l;
        l.add("J", p_.J.rows(), p_.J.cols()).add("b", p_.b.size()).add("a", p_.a.size());
        return l;
    }

    Vec params() const {
        Vec v(layout().size());
        const Index nj = p_.J.size();
        v.head(nj) = Eigen::Map<const Vec>(p_.J.data(), nj);
        v.segment(nj, p_.b.size()) = p_.b;
        v.tail(p_.a.size()) = p_.a;
        return v;
    }

    void set_params(const Vec& v) {
        require_dim(v.size(), layout().size(), "SigmoidNet::set_params");
        const Index nj = p_.J.size();
        p_.J = Eigen::Map<const Mat>(v.data(), p_.J.rows(), p_.J.cols());
        p_.b = v.segment(nj, p_.b.size());
        p_.a = v.tail(p_.a.size());
    }

    void project() {}

    Vec preactivation(const Vec& x) const {
        require_dim(x.size(), state_dim(), "SigmoidNet");
        return p_.J * x + p_.b;
    }

    double energy(const Vec& x) const {
        const Vec y = preactivation(x);
        double e = 0.0;
        for (Index i = 0; i < y.size(); ++i) {
            e += unit_energy(i, y[i]);
        }
        return e;
    }

    Vec energy_state_grad(const Vec& x) const {
        const Vec y = preactivation(x);
        Vec g(y.size());
        for (Index i = 0; i < y.size(); ++i) {
            g[i] = unit_slope(i, y[i]);
        }
        return p_.J.transpose() * g;
    }

    Vec energy_param_grad(const Vec& x) const {
        const Vec y = preactivation(x);
        Vec out(layout().size());
        const Index m = p_.J.rows();
        Vec g(m);
        for (Index i = 0; i < m; ++i) {
            g[i] = unit_slope(i, y[i]);
        }
        Eigen::Map<Mat>(out.data(), m, p_.J.cols()) = g * x.transpose();
        out.segment(p_.J.size(), m) = g;
        if (form_ == SigmoidEnergy::Weighted) {
            out.tail(m) = sigmoid(y);
        } else {
            out.tail(m).setZero();
        }
        return out;
    }

    Vec mean_energy_param_grad(const Mat& X) const {
        require_dim(X.cols(), state_dim(), "SigmoidNet");
        const Index n = X.rows();
        const Index m = p_.J.rows();
        Vec out = Vec::Zero(layout().size());
        if (n == 0) {
            return out;
        }
        Mat Y = X * p_.J.transpose();
        Y.rowwise() += p_.b.transpose();
        Mat G(n, m);
        Mat S(n, m);
        for (Index j = 0; j < m; ++j) {
            for (Index r = 0; r < n; ++r) {
                G(r, j) = unit_slope(j, Y(r, j));
                S(r, j) = sigmoid(Y(r, j));
            }
        }
        const double inv = 1.0 / static_cast<double>(n);
        Eigen::Map<Mat>(out.data(), m, p_.J.cols()) = inv * (G.transpose() * X);
        out.segment(p_.J.size(), m) = inv * G.colwise().sum().transpose();
        if (form_ == SigmoidEnergy::Weighted) {
            out.tail(m) = inv * S.colwise().sum().transpose();
        }
        return out;
    }

    /// -d(log Z)/d(theta), i.e. the exact model expectation of dE/dtheta, for the
    /// square logistic network where Z = |det J|^-1 (the bias shifts each unit
    /// density without changing its mass).
    Vec exact_model_expectation() const {
        if (form_ != SigmoidEnergy::Logistic || p_.J.rows() != p_.J.cols()) {
            throw Error("exact partition function needs a square logistic network");
        }
        Eigen::FullPivLU<Mat> lu(p_.J);
        if (!lu.isInvertible()) {
            throw Error("exact partition function: J is singular");
        }
        Vec out = Vec::Zero(layout().size());
        Eigen::Map<Mat>(out.data(), p_.J.rows(), p_.J.cols()) = lu.inverse().transpose();
        return out;
    }

    /// log Z for the square logistic network.
    double square_log_partition() const {
        if (form_ != SigmoidEnergy::Logistic || p_.J.rows() != p_.J.cols()) {
            throw Error("exact partition function needs a square logistic network");
        }
        Eigen::PartialPivLU<Mat> lu(p_.J);
        return -std::log(std::abs(lu.determinant()));
    }

private:
    double unit_energy(Index i, double y) const {
        if (form_ == SigmoidEnergy::Weighted) {
            return p_.a[i] * sigmoid(y);
        }
        // -log(sigma(y)) - log(1 - sigma(y))
        return softplus(-y) + softplus(y);
    }

    double unit_slope(Index i, double y) const {
        const double s = sigmoid(y);
        if (form_ == SigmoidEnergy::Weighted) {
            return p_.a[i] * s * (1.0 - s);
        }
        return 2.0 * s - 1.0;
    }

    SigmoidNetParams p_;
    SigmoidEnergy form_ = SigmoidEnergy::Weighted;
};

static_assert(DifferentiableEnergyModel<SigmoidNet>);

}  // namespace ebm
