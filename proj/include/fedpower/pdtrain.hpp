#pragma once

// Primal-dual constrained learning of a power policy. The policy weights
// ascend λ_qᵀ E[f_q] + λ_rᵀ E[f_r]; the auxiliaries q̃, r and the duals
// λ_q, λ_r follow projected gradient steps on the Lagrangian
//   g(q̃) + λ_qᵀ(E[f_q] - q̃) + λ_rᵀ(E[f_r] - r).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "fedpower/channel.hpp"
#include "fedpower/diffcore.hpp"
#include "fedpower/error.hpp"
#include "fedpower/policy.hpp"

namespace fedpower {

struct StepSizes {
    double theta = 1e-3;
    double q = 1e-4;
    double r = 1e-4;
    double lambda_q = 1e-4;
    double lambda_r = 1e-4;
};

struct PrimalDualState {
    std::vector<double> q_aux;    // q̃ ∈ [0,1]
    std::vector<double> rate_aux; // r ≥ r_0, b/s
    std::vector<double> lambda_q;
    std::vector<double> lambda_r;
    std::vector<double> rate_floor; // r_0
    /// Rates enter the Lagrangian divided by this (b/s per unit), so λ_r is a
    /// price per unit of spectral efficiency when it equals the bandwidth.
    double rate_unit = 1.0;

    /// λ = 1, q̃ = 0.5, r = r_0.
    static PrimalDualState initial(std::vector<double> rate_floor, double rate_unit = 1.0) {
        if (!(rate_unit > 0.0)) throw ConfigError("rate unit must be positive");
        const std::size_t L = rate_floor.size();
        PrimalDualState s;
        s.rate_unit = rate_unit;
        s.q_aux.assign(L, 0.5);
        s.rate_aux = rate_floor;
        s.lambda_q.assign(L, 1.0);
        s.lambda_r.assign(L, 1.0);
        s.rate_floor = std::move(rate_floor);
        return s;
    }

    [[nodiscard]] std::size_t workers() const noexcept { return q_aux.size(); }
};

struct BatchEstimates {
    std::vector<double> success_mean;        // f̂_q
    std::vector<double> rate_mean;           // f̂_r, meaningful where transmit_counts > 0
    std::vector<std::size_t> transmit_counts;

    [[nodiscard]] bool rate_defined(std::size_t i) const { return transmit_counts[i] > 0; }
};

struct LinkParams {
    double waterfall = 0.023;   // m
    double bandwidth_hz = 1e6;  // B
    double p_max = 0.01;        // W
};

/// Estimates plus ∇_Θ(λ_qᵀ f̂_q + λ_rᵀ f̂_r), one tensor per policy parameter.
struct EstimatesWithGradient {
    BatchEstimates estimates;
    std::vector<Tensor> grads;
};

namespace detail {

template <LearnedPolicy P>
EstimatesWithGradient estimate_impl(const P& policy, std::span<const CSIMatrix* const> batch, const LinkParams& link,
                                    const std::vector<double>* lambda_q, const std::vector<double>* lambda_r) {
    if (batch.empty()) throw ConfigError("expectation estimate needs a nonempty batch");
    const std::size_t L = batch.front()->workers;
    const std::size_t n = batch.size();
    const bool want_grad = lambda_q != nullptr;
    const double eps_p = transmit_threshold(link.p_max);

    Tape tape;
    std::vector<Var> params;
    for (const auto& p : policy.parameters()) params.push_back(want_grad ? tape.parameter(p) : tape.constant(p));
    const auto powers = policy.forward_batch(tape, params, batch, link.p_max);

    EstimatesWithGradient out;
    BatchEstimates& est = out.estimates;
    est.success_mean.assign(L, 0.0);
    est.rate_mean.assign(L, 0.0);
    est.transmit_counts.assign(L, 0);

    std::vector<Var> success(n), rates(n);
    std::vector<std::vector<char>> mask(n, std::vector<char>(L, 0));
    for (std::size_t s = 0; s < n; ++s) {
        if (batch[s]->workers != L) throw DimensionError("batch mixes network sizes");
        const Var sn = sinr(powers[s], *batch[s]);
        success[s] = success_probability(sn, link.waterfall);
        rates[s] = rate(sn, link.bandwidth_hz);
        const Tensor& p = tape.value(powers[s]);
        const Tensor& q = tape.value(success[s]);
        const Tensor& r = tape.value(rates[s]);
        for (std::size_t i = 0; i < L; ++i) {
            est.success_mean[i] += q[i];
            if (p[i] > eps_p) {
                mask[s][i] = 1;
                ++est.transmit_counts[i];
                est.rate_mean[i] += r[i];
            }
        }
    }
    for (std::size_t i = 0; i < L; ++i) {
        est.success_mean[i] /= static_cast<double>(n);
        if (est.transmit_counts[i] > 0) est.rate_mean[i] /= static_cast<double>(est.transmit_counts[i]);
    }
    if (!want_grad) return out;

    // The transmit indicator is held constant: only the rate values carry gradient.
    std::optional<Var> objective;
    std::vector<double> wq(L), wr(L);
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < L; ++i) {
            wq[i] = (*lambda_q)[i] / static_cast<double>(n);
            wr[i] = mask[s][i] ? (*lambda_r)[i] / static_cast<double>(est.transmit_counts[i]) : 0.0;
        }
        const Var term = add(weighted_sum(success[s], wq), weighted_sum(rates[s], wr));
        objective = objective ? add(*objective, term) : term;
    }
    tape.backward(*objective);
    out.grads.reserve(params.size());
    for (Var v : params) out.grads.push_back(tape.grad(v));
    return out;
}

inline std::vector<const CSIMatrix*> pointers(std::span<const CSIMatrix> channels) {
    std::vector<const CSIMatrix*> out;
    out.reserve(channels.size());
    for (const auto& H : channels) out.push_back(&H);
    return out;
}

} // namespace detail

template <LearnedPolicy P>
BatchEstimates estimate_expectations(const P& policy, std::span<const CSIMatrix* const> batch, const LinkParams& link) {
    return detail::estimate_impl(policy, batch, link, nullptr, nullptr).estimates;
}

template <LearnedPolicy P>
BatchEstimates estimate_expectations(const P& policy, std::span<const CSIMatrix> batch, const LinkParams& link) {
    const auto ptrs = detail::pointers(batch);
    return estimate_expectations(policy, std::span<const CSIMatrix* const>(ptrs), link);
}

template <LearnedPolicy P>
EstimatesWithGradient estimate_with_gradient(const P& policy, std::span<const CSIMatrix* const> batch,
                                             const LinkParams& link, const PrimalDualState& state) {
    std::vector<double> lambda_r = state.lambda_r;
    for (double& v : lambda_r) v /= state.rate_unit;
    return detail::estimate_impl(policy, batch, link, &state.lambda_q, &lambda_r);
}

/// g(q̃) + λ_qᵀ(f̂_q - q̃) + λ_rᵀ(f̂_r - r)/unit, skipping undefined rate terms.
inline double lagrangian(const PrimalDualState& state, const BatchEstimates& est, std::span<const double> weights) {
    double value = weighted_success(state.q_aux, weights);
    for (std::size_t i = 0; i < state.workers(); ++i) {
        value += state.lambda_q[i] * (est.success_mean[i] - state.q_aux[i]);
        if (est.rate_defined(i)) {
            value += state.lambda_r[i] * (est.rate_mean[i] - state.rate_aux[i]) / state.rate_unit;
        }
    }
    return value;
}

struct AuxiliaryUpdateOptions {
    StepSizes steps;
    /// Drop the -λ_q term from the q̃ step (ascend g alone).
    bool literal_q_update = false;
};

/// Steps for q̃, r, λ_q, λ_r in that order; each dual uses the freshly
/// updated auxiliary.
inline void update_auxiliaries(PrimalDualState& state, const BatchEstimates& est, std::span<const double> weights,
                               const AuxiliaryUpdateOptions& opt) {
    const std::size_t L = state.workers();
    if (weights.size() != L || est.success_mean.size() != L) throw DimensionError("primal-dual state size mismatch");
    const auto& g = opt.steps;
    for (std::size_t i = 0; i < L; ++i) {
        const double ascent = opt.literal_q_update ? weights[i] : weights[i] - state.lambda_q[i];
        state.q_aux[i] = std::clamp(state.q_aux[i] + g.q * ascent, 0.0, 1.0);
        state.rate_aux[i] =
            std::max(state.rate_floor[i], state.rate_aux[i] - g.r * state.lambda_r[i] * state.rate_unit);
        state.lambda_q[i] = std::max(0.0, state.lambda_q[i] - g.lambda_q * (est.success_mean[i] - state.q_aux[i]));
        if (est.rate_defined(i)) {
            state.lambda_r[i] =
                std::max(0.0, state.lambda_r[i] - g.lambda_r * (est.rate_mean[i] - state.rate_aux[i]) / state.rate_unit);
        }
    }
}

struct ThetaUpdate {
    double step = 1e-3;
    /// Adam on the ascent direction instead of a plain gradient step.
    bool adam = true;
};

/// Ascent step on the policy weights along the given gradient.
inline void update_theta(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& adam,
                         const ThetaUpdate& opt) {
    for (const auto& g : grads)
        for (double v : g.values())
            if (!std::isfinite(v)) throw NumericError("non-finite policy gradient");
    if (opt.step == 0.0) return;
    if (opt.adam) {
        std::vector<Tensor> descent;
        descent.reserve(grads.size());
        for (const auto& g : grads) {
            Tensor d = g;
            for (double& v : d.values()) v = -v;
            descent.push_back(std::move(d));
        }
        adam_step(params, descent, adam, AdamOptions{opt.step});
        return;
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto p = params[k].values();
        auto d = grads[k].values();
        for (std::size_t j = 0; j < p.size(); ++j) p[j] += opt.step * d[j];
    }
}

struct PrimalDualOptions {
    StepSizes steps;
    bool literal_q_update = false;
    bool adam_theta = true;
};

/// One full iteration: estimate on the batch, update Θ, then q̃, r, λ_q, λ_r.
template <LearnedPolicy P>
BatchEstimates primal_dual_step(P& policy, PrimalDualState& state, AdamState& adam,
                                std::span<const CSIMatrix* const> batch, std::span<const double> weights,
                                const LinkParams& link, const PrimalDualOptions& opt) {
    auto eg = estimate_with_gradient(policy, batch, link, state);
    update_theta(policy.parameters(), eg.grads, adam, ThetaUpdate{opt.steps.theta, opt.adam_theta});
    update_auxiliaries(state, eg.estimates, weights, AuxiliaryUpdateOptions{opt.steps, opt.literal_q_update});
    return std::move(eg.estimates);
}

// ---------------------------------------------------------------------------
// Evaluation helpers shared with the experiment runner.

/// Σ ω_i PER_i over workers with p_i above the transmit threshold.
inline double weighted_per(std::span<const double> powers, const CSIMatrix& H, std::span<const double> weights,
                           double waterfall, double p_max) {
    const auto e = per(powers, H, waterfall);
    const double eps_p = transmit_threshold(p_max);
    double total = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i)
        if (powers[i] > eps_p) total += weights[i] * e[i];
    return total;
}

/// Σ ω_i PER_i over all workers, a silent worker counting as a certain failure.
inline double weighted_failure(std::span<const double> powers, const CSIMatrix& H, std::span<const double> weights,
                               double waterfall, double p_max) {
    const auto e = per(powers, H, waterfall);
    const double eps_p = transmit_threshold(p_max);
    double total = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) total += weights[i] * (powers[i] > eps_p ? e[i] : 1.0);
    return total;
}

template <LearnedPolicy P>
double mean_weighted_failure(const P& policy, std::span<const CSIMatrix> channels, std::span<const double> weights,
                             const LinkParams& link) {
    const auto powers = allocate_batch(policy, channels, link.p_max);
    double total = 0.0;
    for (std::size_t s = 0; s < channels.size(); ++s)
        total += weighted_failure(powers[s], channels[s], weights, link.waterfall, link.p_max);
    return total / static_cast<double>(channels.size());
}

template <LearnedPolicy P>
double mean_weighted_per(const P& policy, std::span<const CSIMatrix> channels, std::span<const double> weights,
                         const LinkParams& link) {
    const auto powers = allocate_batch(policy, channels, link.p_max);
    double total = 0.0;
    for (std::size_t s = 0; s < channels.size(); ++s)
        total += weighted_per(powers[s], channels[s], weights, link.waterfall, link.p_max);
    return total / static_cast<double>(channels.size());
}

/// r_0,i = ρ · median over the set of worker i's rate when everyone transmits at P_max.
inline std::vector<double> default_rate_floor(std::span<const CSIMatrix> channels, const LinkParams& link,
                                              double fraction = 0.5) {
    if (channels.empty()) throw ConfigError("rate floor needs at least one channel");
    const std::size_t L = channels.front().workers;
    std::vector<std::vector<double>> rates(L);
    for (const auto& H : channels) {
        const auto s = sinr(orth_policy(L, link.p_max), H);
        for (std::size_t i = 0; i < L; ++i) rates[i].push_back(link.bandwidth_hz * std::log1p(s[i]));
    }
    std::vector<double> floor(L);
    for (std::size_t i = 0; i < L; ++i) {
        auto& v = rates[i];
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        const double median = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
        floor[i] = fraction * median;
    }
    return floor;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
    PrimalDualOptions update;
    LinkParams link;
    std::size_t batch_size = 64;
    std::size_t epochs = 1000;
    std::uint64_t seed = 1;
    double divergence_factor = 10.0;
    std::size_t divergence_patience = 50;
};

struct EpochLog {
    std::size_t epoch = 0;
    double lagrangian = 0.0;  // mean over the epoch's batches
    double objective = 0.0;   // g(q̃) at epoch end
    std::vector<double> lambda_q;
    std::vector<double> lambda_r;
    double validation_per = 0.0;
};

template <LearnedPolicy P>
struct TrainResult {
    P best_policy;
    std::size_t best_epoch = 0;
    double best_validation_per = std::numeric_limits<double>::infinity();
    PrimalDualState final_state;
    std::vector<EpochLog> log;
};

/// Runs epochs of shuffled minibatch primal-dual steps and keeps the policy
/// with the lowest validation weighted-sum PER (silent workers counted as
/// failed, so switching a worker off never looks like an improvement).
template <LearnedPolicy P>
TrainResult<P> train(P policy, std::span<const CSIMatrix> train_set, std::span<const CSIMatrix> validation_set,
                     std::span<const double> weights, std::vector<double> rate_floor, const TrainConfig& config) {
    if (train_set.empty() || validation_set.empty()) throw ConfigError("training needs train and validation channels");
    if (config.batch_size == 0) throw ConfigError("batch size must be positive");
    const std::size_t L = train_set.front().workers;
    if (weights.size() != L || rate_floor.size() != L) throw DimensionError("weights/rate floor length mismatch");

    TrainResult<P> result{policy, 0, std::numeric_limits<double>::infinity(),
                          PrimalDualState::initial(std::move(rate_floor), config.link.bandwidth_hz), {}};
    PrimalDualState& state = result.final_state;
    AdamState adam;
    std::mt19937_64 rng(config.seed);
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t worse_streak = 0;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double lag_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t stop = std::min(order.size(), start + config.batch_size);
            std::vector<const CSIMatrix*> batch;
            for (std::size_t k = start; k < stop; ++k) batch.push_back(&train_set[order[k]]);
            const auto est = primal_dual_step(policy, state, adam, batch, weights, config.link, config.update);
            lag_sum += lagrangian(state, est, weights);
            ++batches;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.lagrangian = lag_sum / static_cast<double>(batches);
        entry.objective = weighted_success(state.q_aux, weights);
        entry.lambda_q = state.lambda_q;
        entry.lambda_r = state.lambda_r;
        entry.validation_per = mean_weighted_failure(policy, validation_set, weights, config.link);
        if (entry.validation_per < result.best_validation_per) {
            result.best_validation_per = entry.validation_per;
            result.best_epoch = epoch;
            result.best_policy = policy;
        }
        const bool much_worse = entry.validation_per > config.divergence_factor * result.best_validation_per &&
                                entry.validation_per > result.best_validation_per;
        worse_streak = much_worse ? worse_streak + 1 : 0;
        result.log.push_back(std::move(entry));
        if (worse_streak >= config.divergence_patience) {
            throw DivergenceError("validation PER stayed above " + std::to_string(config.divergence_factor) +
                                  "x its best for " + std::to_string(worse_streak) + " epochs");
        }
    }
    if (config.epochs == 0) result.best_policy = policy;
    return result;
}

/// Columns: epoch, lagrangian, objective, lambda_q_<i>..., lambda_r_<i>..., validation_per.
inline void write_training_log(std::ostream& os, const std::vector<EpochLog>& log) {
    if (log.empty()) return;
    const std::size_t L = log.front().lambda_q.size();
    os << "epoch,lagrangian,objective";
    for (std::size_t i = 0; i < L; ++i) os << ",lambda_q_" << i;
    for (std::size_t i = 0; i < L; ++i) os << ",lambda_r_" << i;
    os << ",validation_per\n";
    os.precision(12);
    for (const auto& e : log) {
        os << e.epoch << "," << e.lagrangian << "," << e.objective;
        for (double v : e.lambda_q) os << "," << v;
        for (double v : e.lambda_r) os << "," << v;
        os << "," << e.validation_per << "\n";
    }
}

} // namespace fedpower
