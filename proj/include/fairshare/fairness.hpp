#pragma once

// Quantitative fairness of a rate vector: Jain's index (and its squared-cosine
// form) and the l1-distance measure F = 1 - K/(2(K-1)) * ||gamma - e||_1.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fairshare/error.hpp"

namespace fairshare {

/// Rate shares gamma_k = R_k / sum R; nonnegative, summing to one.
class NormalizedRateVector {
public:
    static NormalizedRateVector from_rates(std::span<const double> rates)
    {
        if (rates.empty())
            throw DimensionError("empty rate vector");
        double total = 0.0;
        for (double r : rates) {
            if (!(r >= 0.0) || !std::isfinite(r))
                throw Error("rates must be finite and nonnegative");
            total += r;
        }
        if (total <= 0.0)
            throw ZeroSumRate("fairness is undefined when every rate is zero");
        NormalizedRateVector out;
        // Identical rates map to e itself; r / (K r) can miss 1/K by an ulp.
        if (std::adjacent_find(rates.begin(), rates.end(), std::not_equal_to<>()) == rates.end()) {
            out.shares_.assign(rates.size(), 1.0 / static_cast<double>(rates.size()));
            return out;
        }
        out.shares_.reserve(rates.size());
        for (double r : rates)
            out.shares_.push_back(r / total);
        return out;
    }

    /// Wraps shares that already sum to one.
    static NormalizedRateVector from_shares(std::vector<double> shares, double tol = 1e-12)
    {
        if (shares.empty())
            throw DimensionError("empty share vector");
        double total = 0.0;
        for (double s : shares) {
            if (!(s >= 0.0))
                throw Error("shares must be nonnegative");
            total += s;
        }
        if (std::abs(total - 1.0) > tol)
            throw Error("shares must sum to one");
        NormalizedRateVector out;
        out.shares_ = std::move(shares);
        return out;
    }

    std::size_t users() const { return shares_.size(); }
    std::span<const double> shares() const { return shares_; }
    double operator[](std::size_t k) const { return shares_[k]; }

private:
    std::vector<double> shares_;
};

inline NormalizedRateVector normalize(std::span<const double> rates)
{
    return NormalizedRateVector::from_rates(rates);
}

/// J = 1 / (K ||gamma||_2^2), in [1/K, 1].
inline double jain_index(const NormalizedRateVector& gamma)
{
    double sq = 0.0;
    for (double s : gamma.shares())
        sq += s * s;
    return 1.0 / (static_cast<double>(gamma.users()) * sq);
}

/// |cos theta|^2 for the angle between gamma and the equal-share vector e,
/// computed from the inner product directly.
inline double jain_cos_identity(const NormalizedRateVector& gamma)
{
    const double k = static_cast<double>(gamma.users());
    const double e = 1.0 / k;
    double dot = 0.0;
    double gg = 0.0;
    for (double s : gamma.shares()) {
        dot += s * e;
        gg += s * s;
    }
    const double ee = k * e * e;
    return (dot * dot) / (ee * gg);
}

/// Angle between gamma and e, via tan(theta) = sqrt(K) ||gamma - e||_2 which
/// keeps precision near theta = 0.
inline double angle_to_equal_share(const NormalizedRateVector& gamma)
{
    const double k = static_cast<double>(gamma.users());
    double dist2 = 0.0;
    for (double s : gamma.shares())
        dist2 += (s - 1.0 / k) * (s - 1.0 / k);
    return std::atan(std::sqrt(k * dist2));
}

inline double l1_fairness(const NormalizedRateVector& gamma)
{
    const std::size_t users = gamma.users();
    if (users < 2)
        throw UndefinedForSingleUser("l1 fairness needs at least two users");
    const double k = static_cast<double>(users);
    double dist = 0.0;
    for (double s : gamma.shares())
        dist += std::abs(s - 1.0 / k);
    const double f = 1.0 - k / (2.0 * (k - 1.0)) * dist;
    return std::clamp(f, 0.0, 1.0);
}

enum class SingleUser {
    Raise,      // l1 fairness throws UndefinedForSingleUser
    ReportFair, // a lone user is reported as perfectly fair
};

/// l1 fairness straight from rates.
inline double l1_fairness_of_rates(std::span<const double> rates, SingleUser policy = SingleUser::Raise)
{
    if (rates.size() == 1 && policy == SingleUser::ReportFair)
        return 1.0;
    return l1_fairness(normalize(rates));
}

inline double jain_index_of_rates(std::span<const double> rates)
{
    return jain_index(normalize(rates));
}

} // namespace fairshare
