#pragma once

#include "ebm/core.hpp"
#include "ebm/model.hpp"
#include "ebm/samplers.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <type_traits>

namespace ebm {

struct TrainSchedule {
    Index batch_size = 100;
    int epochs = 1;
    Index max_iterations = 0;        ///< stop after this many updates (0: no cap)
    double learning_rate = 0.05;     ///< base rate, see anneal
    std::map<std::string, double> group_scale;  ///< per-block multiplier of the base rate
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::vector<std::pair<Index, double>> anneal;  ///< (first iteration, base rate), ascending
    int cd_steps = 1;
    bool use_hmc = false;            ///< prefer HMC even for Gibbs-capable models
    bool adapt_hmc = true;           ///< adapt the HMC step size between minibatches
    Index record_every = 1;

    void validate() const {
        if (batch_size < 1) {
            throw Error("TrainSchedule: batch size must be >= 1");
        }
        if (learning_rate < 0) {
            throw Error("TrainSchedule: learning rate must be >= 0");
        }
        for (const auto& [name, s] : group_scale) {
            if (s < 0) {
                throw Error("TrainSchedule: group rate for '" + name + "' must be >= 0");
            }
        }
        if (!(momentum >= 0 && momentum < 1)) {
            throw Error("TrainSchedule: momentum must lie in [0, 1)");
        }
        if (weight_decay < 0) {
            throw Error("TrainSchedule: weight decay must be >= 0");
        }
        for (std::size_t i = 0; i < anneal.size(); ++i) {
            if (anneal[i].second < 0 || (i > 0 && anneal[i].first < anneal[i - 1].first)) {
                throw Error("TrainSchedule: anneal steps must have ascending iterations and rates >= 0");
            }
        }
        if (cd_steps < 0 || record_every < 1) {
            throw Error("TrainSchedule: invalid cd_steps or record_every");
        }
    }

    double rate_at(Index iteration) const {
        double r = learning_rate;
        for (const auto& [start, rate] : anneal) {
            if (iteration >= start) {
                r = rate;
            }
        }
        return r;
    }

    /// Piecewise-constant schedule: `iterations_each` updates at each rate in turn.
    static std::vector<std::pair<Index, double>> stepwise(const std::vector<double>& rates, Index iterations_each) {
        std::vector<std::pair<Index, double>> out;
        for (std::size_t i = 0; i < rates.size(); ++i) {
            out.emplace_back(static_cast<Index>(i) * iterations_each, rates[i]);
        }
        return out;
    }
};

struct TrainRecord {
    Index iteration = 0;
    double learning_rate = 0.0;
    double data_energy = 0.0;
    double sample_energy = 0.0;
    double param_norm = 0.0;
    double acceptance = 1.0;
    double step_size = 0.0;
    double monitor = std::numeric_limits<double>::quiet_NaN();  ///< e.g. Amari distance to a reference
};

struct TrainHistory {
    std::vector<TrainRecord> records;

    void write_csv(std::ostream& os) const {
        os << "iteration,learning_rate,data_energy,sample_energy,param_norm,acceptance,step_size,monitor\n";
        os.precision(17);
        for (const auto& r : records) {
            os << r.iteration << ',' << r.learning_rate << ',' << r.data_energy << ',' << r.sample_energy << ','
               << r.param_norm << ',' << r.acceptance << ',' << r.step_size << ',' << r.monitor << '\n';
        }
    }

    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) {
            throw Error("cannot write " + path);
        }
        write_csv(f);
    }
};

/// Thrown when an update produces non-finite parameters.
class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string& what, Vec snapshot, Index iteration)
        : Error(what), snapshot_(std::move(snapshot)), iteration_(iteration) {}
    const Vec& snapshot() const { return snapshot_; }
    Index iteration() const { return iteration_; }

private:
    Vec snapshot_;
    Index iteration_;
};

/// Momentum state of the optimizer.
struct UpdateState {
    Vec velocity;
};

/// velocity <- momentum * velocity + rate o direction;
/// params <- params + velocity - decay * params.
inline void apply_update(Vec& params, const Vec& direction, UpdateState& state, const Vec& rates, double momentum,
                         double decay) {
    require_dim(direction.size(), params.size(), "apply_update direction");
    require_dim(rates.size(), params.size(), "apply_update rates");
    if (state.velocity.size() == 0) {
        state.velocity = Vec::Zero(params.size());
    }
    require_dim(state.velocity.size(), params.size(), "apply_update velocity");
    state.velocity = momentum * state.velocity + rates.cwiseProduct(direction);
    params += state.velocity - decay * params;
}

inline void apply_update(Vec& params, const Vec& direction, UpdateState& state, double rate, double momentum,
                         double decay) {
    apply_update(params, direction, state, Vec::Constant(params.size(), rate), momentum, decay);
}

/// Rescales every row to norm l. Zero rows stay at zero; their count is returned.
inline Index enforce_filter_norm(Mat& J, double l) {
    if (!(l > 0)) {
        throw Error("enforce_filter_norm: l must be positive");
    }
    Index zero_rows = 0;
    for (Index i = 0; i < J.rows(); ++i) {
        const double r = J.row(i).norm();
        if (r == 0) {
            ++zero_rows;
            continue;
        }
        J.row(i) *= l / r;
    }
    return zero_rows;
}

/// Per-element learning-rate multipliers from per-block scales.
inline Vec group_rates(const ParamLayout& layout, const std::map<std::string, double>& scale) {
    Vec out = Vec::Ones(layout.size());
    for (const auto& [name, s] : scale) {
        if (layout.has(name)) {
            const ParamBlock& b = layout.block(name);
            out.segment(b.offset, b.size()).setConstant(s);
        }
    }
    return out;
}

/// Supplies the ascent direction (minus the log-likelihood gradient estimate)
/// for one minibatch, plus the negative-phase samples when there are any.
template <class M>
struct Estimate {
    Vec direction;
    Mat samples;
    double acceptance = 1.0;
    bool hmc = false;  ///< samples came from HMC (drives step-size adaptation)
};

template <class M>
using GradientEstimator = std::function<Estimate<M>(const M&, const Mat&, Index iteration, HmcConfig& hmc)>;

/// Contrastive divergence: positive phase over the data, negative phase over
/// cd_steps-step chains started at the data.
template <EnergyModel M>
GradientEstimator<M> cd_estimator(const TrainSchedule& s, std::uint64_t seed) {
    return [n = s.cd_steps, use_hmc = s.use_hmc, seed](const M& m, const Mat& batch, Index it, HmcConfig& hmc) {
        const NegativePhase neg =
            run_cd_negative_phase(m, batch, n, hmc, stream_seed(seed, "cd-batch", static_cast<std::uint64_t>(it)),
                                  use_hmc);
        Estimate<M> e;
        e.direction = m.mean_energy_param_grad(neg.samples) - m.mean_energy_param_grad(batch);
        e.samples = neg.samples;
        e.acceptance = neg.acceptance_rate;
        e.hmc = n > 0 && (use_hmc || !GibbsModel<M>);
        return e;
    };
}

/// Exact maximum likelihood for models with a closed-form model expectation.
template <EnergyModel M>
GradientEstimator<M> exact_estimator() {
    return [](const M& m, const Mat& batch, Index, HmcConfig&) {
        Estimate<M> e;
        e.direction = m.exact_model_expectation() - m.mean_energy_param_grad(batch);
        return e;
    };
}

/// Mean-field variational CD for Boltzmann machines.
template <EnergyModel M>
GradientEstimator<M> variational_estimator(int n) {
    return [n](const M& m, const Mat& batch, Index, HmcConfig&) {
        Estimate<M> e;
        e.direction = m.cd_direction(batch, n);
        return e;
    };
}

struct TrainOptions {
    HmcConfig hmc;
    std::uint64_t seed = 1;
    std::function<void(Index, const Vec&)> on_update;  ///< called after every projected update
};

template <EnergyModel M>
struct TrainResult {
    M model;
    TrainHistory history;
    HmcConfig hmc;  ///< final (adapted) sampler settings
};

/// Minibatch training loop. Each epoch visits the rows in a fresh seeded
/// permutation, without replacement; a trailing partial batch is dropped when a
/// full batch exists. Constraints are applied after every update.
template <EnergyModel M>
TrainResult<M> train(M model, const Mat& data, const TrainSchedule& schedule,
                     const std::type_identity_t<GradientEstimator<M>>& estimator,
                     const TrainOptions& opt = {}, std::type_identity_t<std::function<double(const M&)>> monitor = {}) {
    schedule.validate();
    require_dim(data.cols(), model.state_dim(), "train: data dimension");
    if (data.rows() == 0) {
        throw Error("train: empty dataset");
    }
    TrainResult<M> out{model, {}, opt.hmc};
    out.hmc.validate();
    const ParamLayout layout = model.layout();
    const Vec scale = group_rates(layout, schedule.group_scale);
    UpdateState state;
    const Index n = data.rows();
    const Index bs = std::min(schedule.batch_size, n);
    const Index per_epoch = std::max<Index>(n / bs, 1);
    std::vector<Index> order(static_cast<std::size_t>(n));
    Index it = 0;
    Mat batch(bs, data.cols());
    for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), Index{0});
        Rng shuffle = make_rng(opt.seed, "epoch-order", static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle);
        for (Index b = 0; b < per_epoch; ++b) {
            if (schedule.max_iterations > 0 && it >= schedule.max_iterations) {
                return out;
            }
            for (Index r = 0; r < bs; ++r) {
                batch.row(r) = data.row(order[static_cast<std::size_t>(b * bs + r)]);
            }
            const Estimate<M> est = estimator(out.model, batch, it, out.hmc);
            require_dim(est.direction.size(), layout.size(), "train: gradient estimate");
            const double rate = schedule.rate_at(it);
            const bool record = it % schedule.record_every == 0;
            TrainRecord rec;
            if (record) {
                rec.iteration = it;
                rec.learning_rate = rate;
                rec.data_energy = mean_energy(out.model, batch);
                rec.sample_energy = est.samples.size() ? mean_energy(out.model, est.samples) : rec.data_energy;
                rec.acceptance = est.acceptance;
                rec.step_size = out.hmc.step_size;
            }
            Vec params = out.model.params();
            apply_update(params, est.direction, state, rate * scale, schedule.momentum, schedule.weight_decay);
            if (!params.allFinite()) {
                throw TrainingDiverged("training produced non-finite parameters at iteration " + std::to_string(it),
                                       out.model.params(), it);
            }
            out.model.set_params(params);
            out.model.project();
            if (schedule.adapt_hmc && out.hmc.adapt && est.hmc) {
                out.hmc.step_size = adapt_step_size(out.hmc.step_size, est.acceptance, out.hmc);
            }
            if (record) {
                rec.param_norm = out.model.params().norm();
                if (monitor) {
                    rec.monitor = monitor(out.model);
                }
                out.history.records.push_back(rec);
            }
            if (opt.on_update) {
                opt.on_update(it, out.model.params());
            }
            ++it;
        }
    }
    return out;
}

}  // namespace ebm
