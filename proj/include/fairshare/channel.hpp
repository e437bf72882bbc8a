#pragma once

// K-user MISO broadcast channel: channel realizations, the zero-forcing DPC
// decomposition of H^H and per-user rate formulas for DPC and ZFDPC.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fairshare/error.hpp"

namespace fairshare {

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using RateVector = std::vector<double>;

/// K x N channel realization; row k holds h_k^T, the channel of user k.
class ChannelMatrix {
public:
    ChannelMatrix() = default;

    explicit ChannelMatrix(ComplexMatrix entries) : entries_(std::move(entries))
    {
        if (entries_.rows() < 1 || entries_.cols() < 1)
            throw DimensionError("channel matrix needs at least one user and one antenna");
        if (!entries_.allFinite())
            throw Error("channel matrix has non-finite entries");
    }

    std::size_t users() const { return static_cast<std::size_t>(entries_.rows()); }
    std::size_t antennas() const { return static_cast<std::size_t>(entries_.cols()); }
    const ComplexMatrix& entries() const { return entries_; }

    /// h_k^T as a 1 x N row.
    auto user_row(std::size_t k) const { return entries_.row(static_cast<Eigen::Index>(k)); }

    bool operator==(const ChannelMatrix& other) const
    {
        return entries_.rows() == other.entries_.rows() && entries_.cols() == other.entries_.cols() &&
               entries_ == other.entries_;
    }

private:
    ComplexMatrix entries_;
};

/// Nonnegative per-user powers (linear units) under a total budget.
struct PowerAllocation {
    std::vector<double> powers;
    double budget = 0.0;

    std::size_t users() const { return powers.size(); }

    double total() const { return std::accumulate(powers.begin(), powers.end(), 0.0); }

    bool feasible(double tol = 1e-9) const
    {
        if (!(budget >= 0.0) || !std::isfinite(budget))
            return false;
        for (double p : powers)
            if (!(p >= 0.0) || !std::isfinite(p))
                return false;
        return total() <= budget + tol * std::max(1.0, budget);
    }

    void validate(double tol = 1e-9) const
    {
        if (!feasible(tol))
            throw InvalidAllocation("power allocation is negative or exceeds its budget");
    }
};

/// Per-user transmit covariances K_1..K_K with optional per-user trace limits p_k.
struct CovarianceSet {
    std::vector<ComplexMatrix> covariances;
    std::vector<double> power_limits; // empty: traces are not bounded per user

    void validate(std::size_t antennas, double tol = 1e-9) const
    {
        if (!power_limits.empty() && power_limits.size() != covariances.size())
            throw InvalidCovariance("power limit count differs from covariance count");
        for (std::size_t k = 0; k < covariances.size(); ++k) {
            const ComplexMatrix& cov = covariances[k];
            if (static_cast<std::size_t>(cov.rows()) != antennas ||
                static_cast<std::size_t>(cov.cols()) != antennas)
                throw InvalidCovariance("covariance " + std::to_string(k) + " is not N x N");
            const double scale = std::max(1.0, cov.norm());
            if ((cov - cov.adjoint()).norm() > tol * scale)
                throw InvalidCovariance("covariance " + std::to_string(k) + " is not Hermitian");
            Eigen::SelfAdjointEigenSolver<ComplexMatrix> eig(cov, Eigen::EigenvaluesOnly);
            if (eig.eigenvalues().minCoeff() < -tol * scale)
                throw InvalidCovariance("covariance " + std::to_string(k) + " is not positive semidefinite");
            const double trace = cov.trace().real();
            if (!power_limits.empty() && trace > power_limits[k] + tol * std::max(1.0, power_limits[k]))
                throw InvalidCovariance("covariance " + std::to_string(k) + " exceeds its power limit");
        }
    }
};

/// Result of the QR-based ZFDPC decomposition H^H = Q L^H of a row-permuted channel.
struct ZfdpcDecomposition {
    ComplexMatrix beamformers;       // Q, N x K, orthonormal columns q_k
    ComplexMatrix gains_matrix;      // L, K x K lower triangular, real nonnegative diagonal
    std::vector<std::size_t> ordering; // position k is served to original user ordering[k]
    std::vector<double> gains;       // g_k = |l_kk|^2; zero for rank-deficient positions
    std::vector<bool> deficient;     // |l_kk|^2 under the rank tolerance
    bool rank_deficient = false;

    std::size_t users() const { return gains.size(); }
};

inline constexpr double kRankTolerance = 1e-8;

/// i.i.d. CN(0,1) entries: real and imaginary parts N(0, 1/2).
template <class Rng>
ChannelMatrix sample_channel(std::size_t users, std::size_t antennas, Rng& rng)
{
    if (users < 1 || antennas < 1)
        throw DimensionError("sample_channel needs K >= 1 and N >= 1");
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    ComplexMatrix h(static_cast<Eigen::Index>(users), static_cast<Eigen::Index>(antennas));
    for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index j = 0; j < h.cols(); ++j) {
            const double re = normal(rng);
            const double im = normal(rng);
            h(i, j) = Complex(re, im);
        }
    return ChannelMatrix(std::move(h));
}

inline ChannelMatrix sample_channel(std::size_t users, std::size_t antennas, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sample_channel(users, antennas, rng);
}

inline std::vector<std::size_t> identity_ordering(std::size_t users)
{
    std::vector<std::size_t> order(users);
    std::iota(order.begin(), order.end(), std::size_t{0});
    return order;
}

inline bool is_permutation_of_users(std::span<const std::size_t> ordering, std::size_t users)
{
    if (ordering.size() != users)
        return false;
    std::vector<bool> seen(users, false);
    for (std::size_t idx : ordering) {
        if (idx >= users || seen[idx])
            return false;
        seen[idx] = true;
    }
    return true;
}

/// Rows of H rearranged so that row k is original row ordering[k].
inline ChannelMatrix permute_users(const ChannelMatrix& h, std::span<const std::size_t> ordering)
{
    if (!is_permutation_of_users(ordering, h.users()))
        throw DimensionError("ordering is not a permutation of the users");
    ComplexMatrix out(h.entries().rows(), h.entries().cols());
    for (std::size_t k = 0; k < ordering.size(); ++k)
        out.row(static_cast<Eigen::Index>(k)) = h.user_row(ordering[k]);
    return ChannelMatrix(std::move(out));
}

/// Householder QR of the permuted H^H with the diagonal of L forced real and
/// nonnegative. Requires K <= N.
inline ZfdpcDecomposition zfdpc_decompose(const ChannelMatrix& channel, std::span<const std::size_t> ordering)
{
    const std::size_t k_users = channel.users();
    const std::size_t n_ant = channel.antennas();
    if (k_users > n_ant)
        throw DimensionError("ZFDPC needs K <= N (got K=" + std::to_string(k_users) +
                             ", N=" + std::to_string(n_ant) + ")");
    const ChannelMatrix permuted = permute_users(channel, ordering);
    const auto kk = static_cast<Eigen::Index>(k_users);
    const auto nn = static_cast<Eigen::Index>(n_ant);

    const ComplexMatrix a = permuted.entries().adjoint(); // N x K
    Eigen::HouseholderQR<ComplexMatrix> qr(a);
    ComplexMatrix q = qr.householderQ() * ComplexMatrix::Identity(nn, kk);
    ComplexMatrix r = qr.matrixQR().topRows(kk).triangularView<Eigen::Upper>();

    for (Eigen::Index k = 0; k < kk; ++k) {
        const double mag = std::abs(r(k, k));
        const Complex phase = mag > 0.0 ? r(k, k) / mag : Complex(1.0, 0.0);
        q.col(k) *= phase;
        r.row(k) *= std::conj(phase);
        r(k, k) = Complex(mag, 0.0);
    }

    ZfdpcDecomposition dec;
    dec.beamformers = std::move(q);
    dec.gains_matrix = r.adjoint();
    dec.ordering.assign(ordering.begin(), ordering.end());
    dec.gains.resize(k_users);
    dec.deficient.resize(k_users);

    const double threshold = kRankTolerance * permuted.entries().squaredNorm() / static_cast<double>(k_users);
    for (std::size_t k = 0; k < k_users; ++k) {
        const double g = std::norm(dec.gains_matrix(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
        dec.deficient[k] = !(g >= threshold) || g == 0.0;
        dec.gains[k] = dec.deficient[k] ? 0.0 : g;
        dec.rank_deficient = dec.rank_deficient || dec.deficient[k];
    }
    return dec;
}

inline ZfdpcDecomposition zfdpc_decompose(const ChannelMatrix& channel)
{
    const auto order = identity_ordering(channel.users());
    return zfdpc_decompose(channel, order);
}

/// R_k = log2(1 + p_k g_k) in bits per channel use.
inline RateVector zfdpc_rates(std::span<const double> gains, std::span<const double> powers)
{
    if (gains.size() != powers.size())
        throw DimensionError("gain and power vectors differ in length");
    RateVector rates(gains.size());
    for (std::size_t k = 0; k < gains.size(); ++k)
        rates[k] = std::log2(1.0 + std::max(0.0, powers[k]) * gains[k]);
    return rates;
}

inline RateVector zfdpc_rates(const ZfdpcDecomposition& dec, const PowerAllocation& alloc)
{
    alloc.validate();
    return zfdpc_rates(dec.gains, alloc.powers);
}

/// Rank-one zero-forcing covariances K_k = p_k q_k q_k^H.
inline CovarianceSet zero_forcing_covariances(const ZfdpcDecomposition& dec, std::span<const double> powers)
{
    if (powers.size() != dec.users())
        throw DimensionError("power vector length differs from user count");
    CovarianceSet set;
    for (std::size_t k = 0; k < powers.size(); ++k) {
        const auto q = dec.beamformers.col(static_cast<Eigen::Index>(k));
        set.covariances.emplace_back(powers[k] * (q * q.adjoint()));
        set.power_limits.push_back(powers[k]);
    }
    return set;
}

/// DPC rates with users encoded in row order: user k sees interference only
/// from users i > k. Received power of a covariance C at user k is
/// h_k^T C conj(h_k).
inline RateVector dpc_rates(const ChannelMatrix& channel, const CovarianceSet& covs)
{
    if (covs.covariances.size() != channel.users())
        throw DimensionError("covariance count differs from user count");
    covs.validate(channel.antennas());

    const std::size_t k_users = channel.users();
    auto received = [&](std::size_t k, const ComplexMatrix& cov) {
        const auto row = channel.user_row(k);
        return std::max(0.0, (row * cov * row.adjoint())(0, 0).real());
    };

    RateVector rates(k_users);
    const auto n = static_cast<Eigen::Index>(channel.antennas());
    ComplexMatrix succeeding = ComplexMatrix::Zero(n, n);
    for (std::size_t k = k_users; k-- > 0;) {
        const double signal = received(k, covs.covariances[k]);
        const double interference = received(k, succeeding);
        rates[k] = std::log2(1.0 + signal / (1.0 + interference));
        succeeding += covs.covariances[k];
    }
    return rates;
}

inline double sum_of(std::span<const double> values)
{
    return std::accumulate(values.begin(), values.end(), 0.0);
}

} // namespace fairshare
