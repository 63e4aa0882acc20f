#pragma once

#include "ebm/core.hpp"

#include <concepts>
#include <string>
#include <vector>

namespace ebm {

/// A named, shaped slice of a model's flat parameter vector.
struct ParamBlock {
    std::string name;
    Index rows = 0;
    Index cols = 1;
    Index offset = 0;

    Index size() const { return rows * cols; }
};

/// Describes how a flat parameter vector splits into named blocks.
/// Matrices are stored column-major inside the flat vector (Eigen's native order).
class ParamLayout {
public:
    ParamLayout() = default;

    ParamLayout& add(std::string name, Index rows, Index cols = 1) {
        blocks_.push_back(ParamBlock{std::move(name), rows, cols, total_});
        total_ += rows * cols;
        return *this;
    }

    Index size() const { return total_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }

    bool has(std::string_view name) const {
        return std::any_of(blocks_.begin(), blocks_.end(), [&](const ParamBlock& b) { return b.name == name; });
    }

    const ParamBlock& block(std::string_view name) const {
        for (const auto& b : blocks_) {
            if (b.name == name) {
                return b;
            }
        }
        throw Error("parameter block '" + std::string(name) + "' not in layout");
    }

    bool operator==(const ParamLayout& o) const {
        if (blocks_.size() != o.blocks_.size()) {
            return false;
        }
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            if (blocks_[i].name != o.blocks_[i].name || blocks_[i].rows != o.blocks_[i].rows ||
                blocks_[i].cols != o.blocks_[i].cols) {
                return false;
            }
        }
        return true;
    }

private:
    std::vector<ParamBlock> blocks_;
    Index total_ = 0;
};

/// Mutable view of one block of a flat vector as a matrix.
inline Eigen::Map<Mat> block_view(Vec& flat, const ParamBlock& b) {
    return Eigen::Map<Mat>(flat.data() + b.offset, b.rows, b.cols);
}

inline Eigen::Map<const Mat> block_view(const Vec& flat, const ParamBlock& b) {
    return Eigen::Map<const Mat>(flat.data() + b.offset, b.rows, b.cols);
}

/// The contract every energy-model family implements.
///
/// energy() returns E(x) for a state x; for families with stochastic hiddens it
/// returns the free-energy surrogate of the visibles instead. Parameter
/// gradients are laid out according to layout().
template <class M>
concept EnergyModel = requires(const M& cm, M& m, const Vec& x, const Mat& X) {
    { cm.state_dim() } -> std::convertible_to<Index>;
    { cm.energy(x) } -> std::convertible_to<double>;
    { cm.energy_param_grad(x) } -> std::convertible_to<Vec>;
    { cm.mean_energy_param_grad(X) } -> std::convertible_to<Vec>;
    { cm.layout() } -> std::convertible_to<ParamLayout>;
    { cm.params() } -> std::convertible_to<Vec>;
    { m.set_params(x) };
    { m.project() };
    { cm.family() } -> std::convertible_to<std::string>;
    { M::has_stochastic_hiddens } -> std::convertible_to<bool>;
    { M::supports_aux_gibbs } -> std::convertible_to<bool>;
};

/// Models that also expose dE/dx (needed for Hybrid Monte Carlo).
template <class M>
concept DifferentiableEnergyModel = EnergyModel<M> && requires(const M& cm, const Vec& x) {
    { cm.energy_state_grad(x) } -> std::convertible_to<Vec>;
};

/// Mean energy over the rows of X.
template <EnergyModel M>
double mean_energy(const M& model, const Mat& X) {
    if (X.rows() == 0) {
        return 0.0;
    }
    double s = 0.0;
    for (Index r = 0; r < X.rows(); ++r) {
        s += model.energy(X.row(r).transpose());
    }
    return s / static_cast<double>(X.rows());
}

}  // namespace ebm
