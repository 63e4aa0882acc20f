#pragma once

#include "ebm/core.hpp"
#include "ebm/model.hpp"

#include <utility>

namespace ebm {

/// Settings for Hybrid Monte Carlo.
struct HmcConfig {
    int leapfrog_steps = 30;    ///< n_l, leapfrog iterations per trajectory
    double step_size = 0.1;     ///< epsilon, in state units
    int outer_steps = 1;        ///< trajectories per chain (the CD step count for HMC)
    double accept_lo = 0.90;    ///< lower edge of the target acceptance band
    double accept_hi = 0.95;    ///< upper edge of the target acceptance band
    double adapt_factor = 1.02; ///< multiplicative step-size change per adaptation round
    bool adapt = true;          ///< adapt between sampling runs (disable for evaluation runs)
    double divergence_threshold = 1000.0;

    void validate() const {
        if (!(accept_lo > 0 && accept_lo < accept_hi && accept_hi < 1)) {
            throw Error("HmcConfig: need 0 < accept_lo < accept_hi < 1");
        }
        if (!(step_size > 0)) {
            throw Error("HmcConfig: step_size must be positive");
        }
        if (leapfrog_steps < 1) {
            throw Error("HmcConfig: leapfrog_steps must be >= 1");
        }
        if (outer_steps < 0) {
            throw Error("HmcConfig: outer_steps must be >= 0");
        }
        if (!(adapt_factor >= 1)) {
            throw Error("HmcConfig: adapt_factor must be >= 1");
        }
    }
};

struct ChainState {
    Vec q;
    bool last_accepted = false;
    std::size_t accepted = 0;
    std::size_t proposed = 0;

    double acceptance_rate() const {
        return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
    }
};

struct LeapfrogResult {
    Vec q;
    Vec p;
    bool diverged = false;
};

/// n_l ordered half-kick / drift / half-kick updates in direction `direction`.
/// The energy is divided by `temperature`.
template <DifferentiableEnergyModel M>
LeapfrogResult leapfrog(const M& model, Vec q, Vec p, double eps, int n_l, int direction,
                        double temperature = 1.0) {
    if (direction != 1 && direction != -1) {
        throw Error("leapfrog: direction must be +1 or -1");
    }
    require_dim(q.size(), model.state_dim(), "leapfrog");
    require_dim(p.size(), q.size(), "leapfrog momentum");
    const double h = direction * eps;
    const double inv_t = 1.0 / temperature;
    Vec g = model.energy_state_grad(q) * inv_t;
    for (int k = 0; k < n_l; ++k) {
        if (!g.allFinite()) {
            return {std::move(q), std::move(p), true};
        }
        p.noalias() -= 0.5 * h * g;
        q.noalias() += h * p;
        g = model.energy_state_grad(q) * inv_t;
        if (!g.allFinite()) {
            return {std::move(q), std::move(p), true};
        }
        p.noalias() -= 0.5 * h * g;
    }
    return {std::move(q), std::move(p), false};
}

/// One outer HMC iteration: momentum refresh, random direction, leapfrog
/// trajectory, Metropolis test. Divergent trajectories count as rejections.
template <DifferentiableEnergyModel M>
void hmc_step(const M& model, ChainState& chain, const HmcConfig& cfg, Rng& rng, double temperature = 1.0) {
    const Index d = chain.q.size();
    const Vec p0 = randn(d, rng);
    std::bernoulli_distribution coin(0.5);
    const int direction = coin(rng) ? 1 : -1;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);

    const double h0 = model.energy(chain.q) / temperature + 0.5 * p0.squaredNorm();
    LeapfrogResult r = leapfrog(model, chain.q, p0, cfg.step_size, cfg.leapfrog_steps, direction, temperature);
    bool accept = false;
    if (!r.diverged && r.q.allFinite()) {
        const double h1 = model.energy(r.q) / temperature + 0.5 * r.p.squaredNorm();
        const double dh = h1 - h0;
        if (std::isfinite(dh) && std::abs(dh) <= cfg.divergence_threshold) {
            accept = dh <= 0 || u < std::exp(-dh);
        }
    }
    ++chain.proposed;
    chain.last_accepted = accept;
    if (accept) {
        ++chain.accepted;
        chain.q = std::move(r.q);
    }
}

/// Multiplies eps by the adaptation factor above the band, divides below it.
inline double adapt_step_size(double eps, double running_rate, double lo, double hi, double factor = 1.02) {
    if (running_rate > hi) {
        return eps * factor;
    }
    if (running_rate < lo) {
        return eps / factor;
    }
    return eps;
}

inline double adapt_step_size(double eps, double running_rate, const HmcConfig& cfg) {
    return adapt_step_size(eps, running_rate, cfg.accept_lo, cfg.accept_hi, cfg.adapt_factor);
}

struct NegativePhase {
    Mat samples;                  ///< one row per source data row
    double acceptance_rate = 1.0; ///< fraction of accepted proposals (1 for Gibbs)
};

/// Advances one HMC chain per data row, started at that row, for cfg.outer_steps
/// trajectories. Chain r draws from the stream (seed, "hmc-chain", r).
template <DifferentiableEnergyModel M>
NegativePhase run_hmc_negative_phase(const M& model, const Mat& batch, const HmcConfig& cfg, std::uint64_t seed) {
    require_dim(batch.cols(), model.state_dim(), "run_hmc_negative_phase");
    NegativePhase out{batch, 1.0};
    if (cfg.outer_steps == 0 || batch.rows() == 0) {
        return out;
    }
    std::vector<std::size_t> acc(static_cast<std::size_t>(batch.rows()), 0);
    parallel_for(batch.rows(), [&](Index r) {
        Rng rng = make_rng(seed, "hmc-chain", static_cast<std::uint64_t>(r));
        ChainState chain{batch.row(r).transpose()};
        for (int s = 0; s < cfg.outer_steps; ++s) {
            hmc_step(model, chain, cfg, rng);
        }
        out.samples.row(r) = chain.q.transpose();
        acc[static_cast<std::size_t>(r)] = chain.accepted;
    });
    std::size_t total = 0;
    for (auto a : acc) {
        total += a;
    }
    out.acceptance_rate =
        static_cast<double>(total) / static_cast<double>(batch.rows() * static_cast<Index>(cfg.outer_steps));
    return out;
}

/// Models with an exact block-Gibbs transition (e.g. auxiliary-variable sweeps).
template <class M>
concept GibbsModel = EnergyModel<M> && requires(const M& cm, const Vec& x, Rng& rng) {
    { cm.make_gibbs_sampler().sweep(x, rng, 1.0) } -> std::convertible_to<Vec>;
};

/// `sweeps` Gibbs sweeps from every data row. Chain r draws from (seed, "gibbs-chain", r).
template <GibbsModel M>
NegativePhase run_gibbs_negative_phase(const M& model, const Mat& batch, int sweeps, std::uint64_t seed) {
    require_dim(batch.cols(), model.state_dim(), "run_gibbs_negative_phase");
    NegativePhase out{batch, 1.0};
    if (sweeps <= 0 || batch.rows() == 0) {
        return out;
    }
    const auto sampler = model.make_gibbs_sampler();
    parallel_for(batch.rows(), [&](Index r) {
        Rng rng = make_rng(seed, "gibbs-chain", static_cast<std::uint64_t>(r));
        Vec x = batch.row(r).transpose();
        for (int s = 0; s < sweeps; ++s) {
            x = sampler.sweep(x, rng, 1.0);
        }
        out.samples.row(r) = x.transpose();
    });
    return out;
}

/// CD negative phase: n Gibbs sweeps for Gibbs-capable models (unless
/// use_hmc is set), otherwise n outer HMC trajectories, from every data row.
template <EnergyModel M>
NegativePhase run_cd_negative_phase(const M& model, const Mat& batch, int n, const HmcConfig& hmc,
                                    std::uint64_t seed, bool use_hmc = false) {
    if (n < 0) {
        throw Error("run_cd_negative_phase: n must be >= 0");
    }
    if constexpr (GibbsModel<M>) {
        if (!use_hmc) {
            return run_gibbs_negative_phase(model, batch, n, seed);
        }
    }
    if constexpr (DifferentiableEnergyModel<M>) {
        HmcConfig cfg = hmc;
        cfg.outer_steps = n;
        return run_hmc_negative_phase(model, batch, cfg, seed);
    } else {
        throw Error("run_cd_negative_phase: model has no sampler");
    }
}

/// Geometric temperature ladder from t_start down to 1 (inclusive), `levels` entries.
inline std::vector<double> geometric_schedule(double t_start, int levels) {
    if (levels < 1) {
        throw Error("geometric_schedule: need at least one level");
    }
    std::vector<double> temps(static_cast<std::size_t>(levels));
    for (int k = 0; k < levels; ++k) {
        const double frac = levels == 1 ? 1.0 : static_cast<double>(k) / (levels - 1);
        temps[static_cast<std::size_t>(k)] = std::pow(t_start, 1.0 - frac);
    }
    temps.back() = 1.0;
    return temps;
}

inline std::vector<int> split_steps(int steps, std::size_t levels) {
    std::vector<int> per(levels, steps / static_cast<int>(levels));
    per.back() += steps % static_cast<int>(levels);
    return per;
}

/// Long chains from the rows of `init`, run through the temperature schedule
/// (total `steps` transitions split evenly across levels, remainder on the last).
/// HMC step size is frozen during these runs.
template <EnergyModel M>
Mat annealed_sample(const M& model, const Mat& init, int steps, const std::vector<double>& schedule,
                    std::uint64_t seed, const HmcConfig& hmc = {}) {
    if (schedule.empty()) {
        throw Error("annealed_sample: empty schedule");
    }
    require_dim(init.cols(), model.state_dim(), "annealed_sample");
    const auto per = split_steps(steps, schedule.size());
    Mat out = init;
    if constexpr (GibbsModel<M>) {
        const auto sampler = model.make_gibbs_sampler();
        parallel_for(init.rows(), [&](Index r) {
            Rng rng = make_rng(seed, "anneal-chain", static_cast<std::uint64_t>(r));
            Vec x = init.row(r).transpose();
            for (std::size_t k = 0; k < schedule.size(); ++k) {
                for (int s = 0; s < per[k]; ++s) {
                    x = sampler.sweep(x, rng, schedule[k]);
                }
            }
            out.row(r) = x.transpose();
        });
    } else if constexpr (DifferentiableEnergyModel<M>) {
        parallel_for(init.rows(), [&](Index r) {
            Rng rng = make_rng(seed, "anneal-chain", static_cast<std::uint64_t>(r));
            ChainState chain{init.row(r).transpose()};
            for (std::size_t k = 0; k < schedule.size(); ++k) {
                for (int s = 0; s < per[k]; ++s) {
                    hmc_step(model, chain, hmc, rng, schedule[k]);
                }
            }
            out.row(r) = chain.q.transpose();
        });
    } else {
        static_assert(GibbsModel<M> || DifferentiableEnergyModel<M>, "model supports neither Gibbs nor HMC");
    }
    return out;
}

}  // namespace ebm
