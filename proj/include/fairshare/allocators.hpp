#pragma once

// Power allocation over parallel ZFDPC channels R_k = log2(1 + p_k g_k):
// water-filling (optionally on top of a baseline allocation), proportional
// fairness, harmonic mean and max-min.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "fairshare/channel.hpp"
#include "fairshare/error.hpp"

namespace fairshare {

struct AllocationResult {
    PowerAllocation alloc;
    RateVector rates;
    double sum_rate = 0.0;
    double kkt_residual = 0.0;
    int iterations = 0;
};

struct SolverOptions {
    double tolerance = 1e-9; // on the unit-step projected gradient
    int max_iterations = 10000;
};

namespace detail {

inline void check_gains(std::span<const double> gains)
{
    if (gains.empty())
        throw DimensionError("no users");
    for (double g : gains)
        if (!(g >= 0.0) || !std::isfinite(g))
            throw Error("gains must be finite and nonnegative");
}

inline void require_positive_gains(std::span<const double> gains, const char* criterion)
{
    check_gains(gains);
    for (double g : gains)
        if (g <= 0.0)
            throw InfeasibleFairness(std::string(criterion) + ": a user with zero gain has zero rate at any power");
}

inline void check_budget(double budget)
{
    if (!(budget >= 0.0) || !std::isfinite(budget))
        throw InvalidAllocation("budget must be finite and nonnegative");
}

inline AllocationResult finish(std::span<const double> gains, std::vector<double> powers, double budget,
                               double residual, int iterations)
{
    AllocationResult out;
    out.rates = zfdpc_rates(gains, powers);
    out.sum_rate = sum_of(out.rates);
    out.alloc = PowerAllocation{std::move(powers), budget};
    out.kkt_residual = residual;
    out.iterations = iterations;
    return out;
}

} // namespace detail

/// Euclidean projection of x onto {y >= 0, sum y = total}.
inline std::vector<double> project_onto_simplex(std::span<const double> x, double total)
{
    std::vector<double> sorted(x.begin(), x.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double cumulative = 0.0;
    double shift = 0.0;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        cumulative += sorted[i];
        const double candidate = (cumulative - total) / static_cast<double>(i + 1);
        if (sorted[i] - candidate > 0.0)
            shift = candidate;
    }
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        y[i] = std::max(0.0, x[i] - shift);
    return y;
}

/// Water-filling over sum_k log2(1 + (p_k + b_k) g_k) with sum p <= budget.
/// Exact water level by sorting the floors 1/g_k + b_k. Users with g_k = 0
/// get nothing. `rates` and `sum_rate` are evaluated at p + baseline.
inline AllocationResult max_sum_rate(std::span<const double> gains, double budget,
                                     std::span<const double> baseline = {})
{
    detail::check_gains(gains);
    detail::check_budget(budget);
    const std::size_t k_users = gains.size();
    std::vector<double> base(k_users, 0.0);
    if (!baseline.empty()) {
        if (baseline.size() != k_users)
            throw DimensionError("baseline length differs from user count");
        for (std::size_t k = 0; k < k_users; ++k) {
            if (!(baseline[k] >= 0.0))
                throw InvalidAllocation("baseline powers must be nonnegative");
            base[k] = baseline[k];
        }
    }

    struct Floor {
        double level;
        std::size_t user;
    };
    std::vector<Floor> floors;
    for (std::size_t k = 0; k < k_users; ++k)
        if (gains[k] > 0.0)
            floors.push_back({1.0 / gains[k] + base[k], k});
    std::sort(floors.begin(), floors.end(), [](const Floor& a, const Floor& b) { return a.level < b.level; });

    std::vector<double> powers(k_users, 0.0);
    double residual = 0.0;
    if (!floors.empty()) {
        double level = floors.front().level;
        double cumulative = 0.0;
        for (std::size_t m = 0; m < floors.size(); ++m) {
            cumulative += floors[m].level;
            level = (budget + cumulative) / static_cast<double>(m + 1);
            if (m + 1 < floors.size() && level <= floors[m + 1].level)
                break;
        }
        for (const Floor& f : floors)
            powers[f.user] = std::max(0.0, level - f.level);

        // Marginal rates g / ((1 + (p + b) g) ln 2) must equal 1 / (level ln 2)
        // on active users and not exceed it elsewhere.
        const double multiplier = 1.0 / level;
        for (const Floor& f : floors) {
            const std::size_t k = f.user;
            const double marginal = gains[k] / (1.0 + (powers[k] + base[k]) * gains[k]);
            const double ratio = marginal / multiplier - 1.0;
            residual = std::max(residual, powers[k] > 0.0 ? std::abs(ratio) : std::max(0.0, ratio));
        }
        const double spent = std::accumulate(powers.begin(), powers.end(), 0.0);
        residual = std::max(residual, std::abs(spent - budget) / std::max(1.0, budget));
    }

    AllocationResult out;
    std::vector<double> effective(k_users);
    for (std::size_t k = 0; k < k_users; ++k)
        effective[k] = powers[k] + base[k];
    out.rates = zfdpc_rates(gains, effective);
    out.sum_rate = sum_of(out.rates);
    out.alloc = PowerAllocation{std::move(powers), budget};
    out.kkt_residual = residual;
    return out;
}

/// Equal-rate allocation p_k = (P / g_k) / sum_i (1 / g_i).
inline AllocationResult max_min(std::span<const double> gains, double budget)
{
    detail::require_positive_gains(gains, "max-min");
    detail::check_budget(budget);
    double inverse_sum = 0.0;
    for (double g : gains)
        inverse_sum += 1.0 / g;
    std::vector<double> powers(gains.size());
    for (std::size_t k = 0; k < gains.size(); ++k)
        powers[k] = (budget / gains[k]) / inverse_sum;

    AllocationResult out;
    const RateVector evaluated = zfdpc_rates(gains, powers);
    const auto [lo, hi] = std::minmax_element(evaluated.begin(), evaluated.end());
    // The closed form equalizes rates analytically; report the common value.
    out.rates.assign(gains.size(), std::log2(1.0 + budget / inverse_sum));
    out.sum_rate = sum_of(out.rates);
    out.alloc = PowerAllocation{std::move(powers), budget};
    out.kkt_residual = *hi - *lo;
    return out;
}

/// sum_k ln R_k(p); maximized by the proportional-fair allocation.
struct ProportionalFairObjective {
    std::span<const double> gains;

    double value(std::span<const double> p) const
    {
        double total = 0.0;
        for (std::size_t k = 0; k < gains.size(); ++k) {
            const double rate = std::log1p(std::max(0.0, p[k]) * gains[k]) / std::numbers::ln2;
            if (rate <= 0.0)
                return -std::numeric_limits<double>::infinity();
            total += std::log(rate);
        }
        return total;
    }

    void gradient(std::span<const double> p, std::span<double> grad) const
    {
        for (std::size_t k = 0; k < gains.size(); ++k) {
            const double x = p[k] * gains[k];
            grad[k] = gains[k] / ((1.0 + x) * std::log1p(x));
        }
    }
};

/// -sum_k 1 / R_k(p); maximized by the harmonic-mean allocation.
struct HarmonicMeanObjective {
    std::span<const double> gains;

    double value(std::span<const double> p) const
    {
        double total = 0.0;
        for (std::size_t k = 0; k < gains.size(); ++k) {
            const double rate = std::log1p(std::max(0.0, p[k]) * gains[k]) / std::numbers::ln2;
            if (rate <= 0.0)
                return -std::numeric_limits<double>::infinity();
            total += 1.0 / rate;
        }
        return -total;
    }

    void gradient(std::span<const double> p, std::span<double> grad) const
    {
        for (std::size_t k = 0; k < gains.size(); ++k) {
            const double x = p[k] * gains[k];
            const double rate = std::log1p(x) / std::numbers::ln2;
            const double slope = gains[k] / ((1.0 + x) * std::numbers::ln2);
            grad[k] = slope / (rate * rate);
        }
    }
};

struct AscentResult {
    std::vector<double> point;
    double residual = 0.0;
    int iterations = 0;
};

/// Spectral projected-gradient ascent on {x >= 0, sum x = total} with Armijo
/// backtracking along the projection arc. Stops when the unit-step projected
/// gradient falls below the tolerance or the line search stalls.
template <class Objective>
AscentResult projected_gradient_ascent(const Objective& objective, std::vector<double> x, double total,
                                       const SolverOptions& options = {})
{
    const std::size_t n = x.size();
    constexpr double kArmijo = 1e-4;
    constexpr double kMinStep = 1e-14;

    std::vector<double> grad(n), next_grad(n), shifted(n);
    double value = objective.value(x);
    objective.gradient(x, grad);

    // Projection onto {sum = total} ignores constant shifts of the gradient, so
    // work with the centered gradient to keep x + step * g well conditioned.
    auto centered_spread = [&](std::vector<double>& g) {
        const double mean = std::accumulate(g.begin(), g.end(), 0.0) / static_cast<double>(n);
        double spread = 0.0;
        for (double& v : g) {
            v -= mean;
            spread = std::max(spread, std::abs(v));
        }
        return spread;
    };
    auto project_step = [&](const std::vector<double>& point, const std::vector<double>& g, double step) {
        for (std::size_t i = 0; i < n; ++i)
            shifted[i] = point[i] + step * g[i];
        return project_onto_simplex(shifted, total);
    };
    auto projected_residual = [&](const std::vector<double>& point, const std::vector<double>& g) {
        const auto proj = project_step(point, g, 1.0);
        double r = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            r = std::max(r, std::abs(proj[i] - point[i]));
        return r;
    };

    double spread = centered_spread(grad);
    // A step that moves some coordinate by more than the whole budget only
    // lands on a face of the simplex.
    auto max_step = [&] { return spread > 0.0 ? 4.0 * total / spread : 1.0; };
    double step = max_step();

    AscentResult out;
    out.residual = projected_residual(x, grad);
    int iter = 0;
    bool restarted = false;
    while (iter < options.max_iterations && out.residual > options.tolerance) {
        ++iter;
        double trial_step = std::clamp(step, kMinStep, std::max(kMinStep, max_step()));
        std::vector<double> candidate;
        double candidate_value = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int tries = 0; tries < 80; ++tries) {
            candidate = project_step(x, grad, trial_step);
            double ascent = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                ascent += grad[i] * (candidate[i] - x[i]);
            candidate_value = objective.value(candidate);
            if (std::isfinite(candidate_value)) {
                if (ascent <= 0.0) {
                    // Step too short to move x in floating point.
                    break;
                }
                if (candidate_value >= value + kArmijo * ascent) {
                    accepted = true;
                } else {
                    // Near the optimum value differences drop below rounding.
                    // For a concave objective a nonnegative slope at the end of
                    // the step still certifies ascent along the whole step.
                    objective.gradient(candidate, next_grad);
                    centered_spread(next_grad);
                    double end_slope = 0.0;
                    for (std::size_t i = 0; i < n; ++i)
                        end_slope += next_grad[i] * (candidate[i] - x[i]);
                    accepted = end_slope >= 0.0;
                }
                if (accepted)
                    break;
            }
            trial_step *= 0.5;
        }
        if (!accepted) {
            // A collapsed spectral step can stall the search; retry once from
            // the largest useful step before giving up.
            if (restarted)
                break;
            restarted = true;
            step = max_step();
            continue;
        }
        restarted = false;

        objective.gradient(candidate, next_grad);
        spread = centered_spread(next_grad);
        double ss = 0.0;
        double sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double s = candidate[i] - x[i];
            ss += s * s;
            sy -= s * (next_grad[i] - grad[i]);
        }
        if (ss == 0.0)
            break;
        step = sy > 0.0 ? ss / sy : max_step();

        x = std::move(candidate);
        value = candidate_value;
        std::swap(grad, next_grad);
        out.residual = projected_residual(x, grad);
    }
    out.point = std::move(x);
    out.iterations = iter;
    return out;
}

namespace detail {

template <class Objective>
AllocationResult solve_fair(std::span<const double> gains, double budget, const SolverOptions& options,
                            const char* criterion)
{
    require_positive_gains(gains, criterion);
    check_budget(budget);
    if (budget <= 0.0)
        throw InfeasibleFairness(std::string(criterion) + ": zero budget leaves every rate at zero");
    // Max-min is interior (every rate positive) and symmetric under equal gains.
    std::vector<double> start = max_min(gains, budget).alloc.powers;
    const Objective objective{gains};
    AscentResult ascent = projected_gradient_ascent(objective, std::move(start), budget, options);
    return finish(gains, std::move(ascent.point), budget, ascent.residual, ascent.iterations);
}

} // namespace detail

/// Maximizes sum_k log R_k over the power simplex.
inline AllocationResult proportional_fair(std::span<const double> gains, double budget,
                                          const SolverOptions& options = {})
{
    return detail::solve_fair<ProportionalFairObjective>(gains, budget, options, "proportional fairness");
}

/// Maximizes the harmonic mean (sum_k 1/R_k)^-1 over the power simplex.
inline AllocationResult harmonic_mean(std::span<const double> gains, double budget,
                                      const SolverOptions& options = {})
{
    return detail::solve_fair<HarmonicMeanObjective>(gains, budget, options, "harmonic mean");
}

} // namespace fairshare
