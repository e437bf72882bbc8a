#pragma once

// Ergodic evaluation over i.i.d. quasi-static blocks: per-criterion ensemble
// averages of sum rate and fairness, and the non-causal rate-split upper bound
// on average fairness at a given average sum rate.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <initializer_list>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "fairshare/allocators.hpp"
#include "fairshare/channel.hpp"
#include "fairshare/error.hpp"
#include "fairshare/fairness.hpp"
#include "fairshare/tristage.hpp"

namespace fairshare {

enum class Criterion { MaxSum, ProportionalFair, HarmonicMean, MaxMin, Tristage };

inline constexpr std::array<Criterion, 5> kAllCriteria = {Criterion::MaxSum, Criterion::ProportionalFair,
                                                          Criterion::HarmonicMean, Criterion::MaxMin,
                                                          Criterion::Tristage};

inline std::string_view to_string(Criterion c)
{
    switch (c) {
    case Criterion::MaxSum: return "max_sum";
    case Criterion::ProportionalFair: return "pf";
    case Criterion::HarmonicMean: return "hm";
    case Criterion::MaxMin: return "max_min";
    case Criterion::Tristage: return "tristage";
    }
    return "unknown";
}

inline std::optional<Criterion> parse_criterion(std::string_view name)
{
    for (Criterion c : kAllCriteria)
        if (to_string(c) == name)
            return c;
    return std::nullopt;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

/// Mixes a master seed with stream tags into an independent 64-bit seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> tags)
{
    std::vector<std::uint32_t> words;
    words.reserve(2 * (tags.size() + 1));
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(master);
    for (std::uint64_t t : tags)
        push(t);
    std::seed_seq seq(words.begin(), words.end());
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

/// Seed of a per-power ensemble; depends on the power value, not its list position.
inline std::uint64_t power_seed(std::uint64_t master, double power_db)
{
    if (power_db == 0.0)
        power_db = 0.0; // -0 and +0 share a seed
    return derive_seed(master, {0x706f776572ULL, std::bit_cast<std::uint64_t>(power_db)});
}

/// Kahan-Babuska compensated sum.
class CompensatedSum {
public:
    void add(double x)
    {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

/// Worker count: FAIRSHARE_THREADS if set to a positive integer, else the
/// hardware concurrency; never more than `jobs`.
inline std::size_t thread_count(std::size_t jobs, std::size_t requested = 0)
{
    std::size_t n = requested;
    if (n == 0) {
        if (const char* env = std::getenv("FAIRSHARE_THREADS")) {
            char* end = nullptr;
            const unsigned long long v = std::strtoull(env, &end, 10);
            if (end != env && *end == '\0' && v > 0)
                n = static_cast<std::size_t>(v);
        }
    }
    if (n == 0)
        n = std::max(1u, std::thread::hardware_concurrency());
    return std::max<std::size_t>(1, std::min(n, jobs));
}

/// Runs body(i) for i in [0, jobs) on up to `threads` workers; rethrows the
/// first failure.
template <class Body>
void parallel_for(std::size_t jobs, std::size_t threads, Body&& body)
{
    threads = std::max<std::size_t>(1, std::min(threads, jobs));
    if (threads == 1) {
        for (std::size_t i = 0; i < jobs; ++i)
            body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs || failed.load())
                return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
        pool.emplace_back(worker);
    for (auto& th : pool)
        th.join();
    if (error)
        std::rethrow_exception(error);
}

struct EnsembleConfig {
    std::size_t users = 2;
    std::size_t antennas = 2;
    double power_db = 0.0;
    std::size_t n_blocks = 4000; // about 1% standard error on every criterion's sum rate, K = 2..8 at 0 dB
    std::uint64_t seed = 1;
    TristageOptions tristage;
    std::size_t threads = 0;        // 0: FAIRSHARE_THREADS or hardware concurrency
    std::size_t max_resamples = 64; // per block
    bool envelope_includes_fallback = true; // a fallback block's pf pair joins its bound envelope

    void validate() const
    {
        if (users < 1 || antennas < 1)
            throw DimensionError("K and N must be positive");
        if (users > antennas)
            throw DimensionError("ZFDPC needs K <= N");
        if (!std::isfinite(power_db))
            throw Error("power in dB must be finite");
        if (n_blocks < 1)
            throw Error("n_blocks must be at least 1");
        if (tristage.grid_size < 2)
            throw Error("cake-cut grid needs at least two points");
    }
};

struct EnsembleResult {
    Criterion criterion = Criterion::MaxSum;
    double avg_sum_rate = 0.0;
    double avg_fairness_l1 = 0.0;
    double avg_fairness_jain = 0.0;
    double stderr_sum_rate = 0.0; // standard error of the mean
    double stderr_fairness_l1 = 0.0;
    std::size_t n_blocks = 0;
    double power_db = 0.0;
    std::size_t users = 0;
    std::size_t antennas = 0;
    std::uint64_t seed = 0;
    std::size_t resampled_blocks = 0; // rank-deficient draws replaced
    std::size_t fallback_blocks = 0;  // tristage blocks that kept the pf pair

    bool operator==(const EnsembleResult&) const = default;
};

struct BlockMetrics {
    double sum_rate = 0.0;
    double fairness = 0.0;
    double jain = 0.0;
};

/// Envelope vertices of one block, kept for the rate-split bound.
struct BlockEnvelope {
    std::vector<double> sum_rate;
    std::vector<double> fairness;
};

struct EnsembleBatch {
    EnsembleConfig config;
    std::vector<EnsembleResult> results; // in requested criterion order
    std::vector<BlockEnvelope> envelopes; // one per block when requested
    std::size_t resampled_blocks = 0;

    const EnsembleResult& result(Criterion c) const
    {
        for (const auto& r : results)
            if (r.criterion == c)
                return r;
        throw Error("criterion " + std::string(to_string(c)) + " was not evaluated");
    }
};

struct BlockDraw {
    ChannelMatrix channel;
    ZfdpcDecomposition decomposition;
    std::size_t rejected = 0; // rank-deficient draws replaced
};

/// Channel of block `index`: the first full-rank draw among the block's
/// attempt streams.
inline BlockDraw draw_block(const EnsembleConfig& config, std::size_t index)
{
    for (std::size_t attempt = 0; attempt <= config.max_resamples; ++attempt) {
        std::mt19937_64 rng(derive_seed(config.seed, {static_cast<std::uint64_t>(index), attempt}));
        ChannelMatrix h = sample_channel(config.users, config.antennas, rng);
        ZfdpcDecomposition dec = zfdpc_decompose(h);
        if (!dec.rank_deficient)
            return {std::move(h), std::move(dec), attempt};
    }
    throw Error("block " + std::to_string(index) + " stayed rank deficient after resampling");
}

inline BlockMetrics metrics_of(std::span<const double> rates, SingleUser policy)
{
    return {sum_of(rates), l1_fairness_of_rates(rates, policy), jain_index_of_rates(rates)};
}

/// Evaluates every requested criterion on the same n_blocks channel draws.
inline EnsembleBatch run_ensembles(const EnsembleConfig& config, std::span<const Criterion> criteria,
                                   bool keep_envelopes = false)
{
    config.validate();
    if (criteria.empty() && !keep_envelopes)
        throw Error("no criterion requested");
    const double budget = db_to_linear(config.power_db);
    const std::size_t n = config.n_blocks;
    const std::size_t nc = criteria.size();
    const bool need_tristage =
        keep_envelopes || std::find(criteria.begin(), criteria.end(), Criterion::Tristage) != criteria.end();

    std::vector<BlockMetrics> metrics(n * nc);
    std::vector<std::size_t> resamples(n, 0);
    std::vector<char> fallback(n, 0);
    EnsembleBatch batch;
    batch.config = config;
    if (keep_envelopes)
        batch.envelopes.resize(n);

    parallel_for(n, thread_count(n, config.threads), [&](std::size_t b) {
        const BlockDraw draw = draw_block(config, b);
        resamples[b] = draw.rejected;
        const auto& g = draw.decomposition.gains;
        const SingleUser policy = config.tristage.single_user;
        std::optional<TristageOutcome> tri;
        if (need_tristage)
            tri = run_tristage(g, budget, config.tristage);
        for (std::size_t j = 0; j < nc; ++j) {
            BlockMetrics& m = metrics[b * nc + j];
            switch (criteria[j]) {
            case Criterion::MaxSum: m = metrics_of(max_sum_rate(g, budget).rates, policy); break;
            case Criterion::ProportionalFair: m = metrics_of(tri ? tri->pf.rates : proportional_fair(g, budget).rates, policy); break;
            case Criterion::HarmonicMean: m = metrics_of(harmonic_mean(g, budget).rates, policy); break;
            case Criterion::MaxMin: m = metrics_of(max_min(g, budget).rates, policy); break;
            case Criterion::Tristage:
                m = {tri->op.sum_rate, tri->op.fairness, tri->jain};
                fallback[b] = tri->op.fallback_used ? 1 : 0;
                break;
            }
        }
        if (keep_envelopes) {
            std::vector<HullVertex> hull = tri->curve.hull();
            if (hull.empty() || (tri->op.fallback_used && config.envelope_includes_fallback)) {
                hull.push_back({tri->op.sum_rate, tri->op.fairness, 0});
                hull = upper_concave_envelope(std::move(hull));
            }
            BlockEnvelope& env = batch.envelopes[b];
            for (const HullVertex& v : hull) {
                env.sum_rate.push_back(v.sum_rate);
                env.fairness.push_back(v.fairness);
            }
        }
    });

    std::size_t resampled = 0;
    std::size_t fallbacks = 0;
    for (std::size_t b = 0; b < n; ++b) {
        resampled += resamples[b] > 0 ? 1 : 0;
        fallbacks += static_cast<std::size_t>(fallback[b]);
    }
    batch.resampled_blocks = resampled;

    const double dn = static_cast<double>(n);
    for (std::size_t j = 0; j < nc; ++j) {
        CompensatedSum r, f, jn, r2, f2;
        for (std::size_t b = 0; b < n; ++b) {
            const BlockMetrics& m = metrics[b * nc + j];
            r.add(m.sum_rate);
            f.add(m.fairness);
            jn.add(m.jain);
            r2.add(m.sum_rate * m.sum_rate);
            f2.add(m.fairness * m.fairness);
        }
        EnsembleResult res;
        res.criterion = criteria[j];
        res.avg_sum_rate = r.value() / dn;
        res.avg_fairness_l1 = f.value() / dn;
        res.avg_fairness_jain = jn.value() / dn;
        if (n > 1) {
            auto stderr_of = [&](double mean, double sq) {
                const double var = std::max(0.0, (sq - dn * mean * mean) / (dn - 1.0));
                return std::sqrt(var / dn);
            };
            res.stderr_sum_rate = stderr_of(res.avg_sum_rate, r2.value());
            res.stderr_fairness_l1 = stderr_of(res.avg_fairness_l1, f2.value());
        }
        res.n_blocks = n;
        res.power_db = config.power_db;
        res.users = config.users;
        res.antennas = config.antennas;
        res.seed = config.seed;
        res.resampled_blocks = resampled;
        res.fallback_blocks = criteria[j] == Criterion::Tristage ? fallbacks : 0;
        batch.results.push_back(res);
    }
    return batch;
}

inline EnsembleResult run_ensemble(Criterion criterion, const EnsembleConfig& config)
{
    const std::array<Criterion, 1> one{criterion};
    return run_ensembles(config, one).results.front();
}

/// Average fairness achievable at a given average sum rate when each block's
/// sum rate may be chosen with non-causal knowledge of all blocks:
///   max (1/L) sum F_l(R_l)  s.t.  (1/L) sum R_l = target,
/// with F_l the concave piecewise-linear envelope of block l. Every block starts
/// at its leftmost vertex and envelope segments are taken in order of decreasing
/// slope, which is the optimum of the Lagrangian dual.
class RateSplitFrontier {
public:
    explicit RateSplitFrontier(std::vector<BlockEnvelope> blocks) : blocks_(std::move(blocks))
    {
        if (blocks_.empty())
            throw Error("rate-split bound needs at least one block");
        const double dl = static_cast<double>(blocks_.size());
        CompensatedSum r0, f0;
        for (std::size_t l = 0; l < blocks_.size(); ++l) {
            const BlockEnvelope& b = blocks_[l];
            if (b.sum_rate.empty() || b.sum_rate.size() != b.fairness.size())
                throw Error("block envelope " + std::to_string(l) + " is empty or malformed");
            for (std::size_t v = 0; v + 1 < b.sum_rate.size(); ++v) {
                const double dr = b.sum_rate[v + 1] - b.sum_rate[v];
                if (!(dr > 0.0))
                    throw Error("block envelope " + std::to_string(l) + " is not strictly increasing in rate");
                segments_.push_back({(b.fairness[v + 1] - b.fairness[v]) / dr, dr, b.fairness[v + 1] - b.fairness[v], l});
            }
            r0.add(b.sum_rate.front());
            f0.add(b.fairness.front());
        }
        std::stable_sort(segments_.begin(), segments_.end(),
                         [](const Segment& a, const Segment& b) { return a.slope > b.slope; });
        rates_.push_back(r0.value() / dl);
        values_.push_back(f0.value() / dl);
        CompensatedSum r = r0, f = f0;
        for (const Segment& s : segments_) {
            r.add(s.length);
            f.add(s.rise);
            rates_.push_back(r.value() / dl);
            values_.push_back(f.value() / dl);
        }
    }

    std::size_t blocks() const { return blocks_.size(); }
    const std::vector<BlockEnvelope>& envelopes() const { return blocks_; }
    double min_rate() const { return rates_.front(); }
    double max_rate() const { return rates_.back(); }

    /// Breakpoints of the bound curve (average rate, average fairness).
    std::span<const double> breakpoint_rates() const { return rates_; }
    std::span<const double> breakpoint_values() const { return values_; }

    /// Bound F*_max at average sum rate `target`.
    double value(double target) const
    {
        const std::size_t i = locate(target);
        if (i + 1 >= rates_.size() || target <= rates_[i])
            return values_[i];
        const double t = (target - rates_[i]) / (rates_[i + 1] - rates_[i]);
        return values_[i] + t * (values_[i + 1] - values_[i]);
    }

    /// Per-block sum rates of an optimal split.
    std::vector<double> split(double target) const
    {
        locate(target);
        std::vector<double> rates(blocks_.size());
        for (std::size_t l = 0; l < blocks_.size(); ++l)
            rates[l] = blocks_[l].sum_rate.front();
        double remaining = (target - min_rate()) * static_cast<double>(blocks_.size());
        for (const Segment& s : segments_) {
            if (remaining <= 0.0)
                break;
            const double take = std::min(s.length, remaining);
            rates[s.block] += take;
            remaining -= take;
        }
        return rates;
    }

    /// Dual function d(lambda) = (1/L) sum_l max_R [F_l(R) - lambda R] + lambda target;
    /// its minimum over lambda equals value(target).
    double dual_value(double lambda, double target) const
    {
        CompensatedSum total;
        for (const BlockEnvelope& b : blocks_) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t v = 0; v < b.sum_rate.size(); ++v)
                best = std::max(best, b.fairness[v] - lambda * b.sum_rate[v]);
            total.add(best);
        }
        return total.value() / static_cast<double>(blocks_.size()) + lambda * target;
    }

private:
    struct Segment {
        double slope;
        double length;
        double rise;
        std::size_t block;
    };

    std::size_t locate(double target) const
    {
        const double tol = 1e-12 * std::max(1.0, std::abs(max_rate()));
        if (!(target >= min_rate() - tol && target <= max_rate() + tol))
            throw InfeasibleTarget("average sum rate outside the achievable range of the blocks");
        auto it = std::upper_bound(rates_.begin(), rates_.end(), target);
        if (it == rates_.begin())
            return 0;
        return static_cast<std::size_t>(it - rates_.begin()) - 1;
    }

    std::vector<BlockEnvelope> blocks_;
    std::vector<Segment> segments_;
    std::vector<double> rates_;
    std::vector<double> values_;
};

inline double rate_split_bound(const RateSplitFrontier& frontier, double target_avg_rate)
{
    return frontier.value(target_avg_rate);
}

inline double rate_split_bound(std::vector<BlockEnvelope> blocks, double target_avg_rate)
{
    return RateSplitFrontier(std::move(blocks)).value(target_avg_rate);
}

struct UpperBoundCurve {
    std::vector<double> sum_rate;
    std::vector<double> fairness;
    std::size_t n_blocks = 0;
};

/// Bound sampled at `points` evenly spaced average rates over its range.
inline UpperBoundCurve rate_split_curve(const RateSplitFrontier& frontier, std::size_t points = 101)
{
    if (points < 2)
        throw Error("bound curve needs at least two points");
    UpperBoundCurve curve;
    curve.n_blocks = frontier.blocks();
    const double lo = frontier.min_rate();
    const double hi = frontier.max_rate();
    for (std::size_t i = 0; i < points; ++i) {
        const double r = i + 1 == points ? hi : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
        curve.sum_rate.push_back(r);
        curve.fairness.push_back(frontier.value(r));
    }
    return curve;
}

struct DominanceReport {
    double tristage_sum_rate = 0.0;
    double tristage_fairness = 0.0;
    double bound = 0.0;
    double gap = 0.0; // bound - tristage fairness
    bool holds = false;
};

/// Compares the tristage ensemble mean with the bound at the same average rate.
inline DominanceReport bound_dominance_report(const EnsembleResult& tristage, const RateSplitFrontier& frontier,
                                              double tolerance = 1e-6)
{
    if (tristage.criterion != Criterion::Tristage)
        throw Error("dominance report expects a tristage ensemble");
    if (tristage.n_blocks != frontier.blocks())
        throw Error("ensemble and bound were built from different block counts");
    DominanceReport rep;
    rep.tristage_sum_rate = tristage.avg_sum_rate;
    rep.tristage_fairness = tristage.avg_fairness_l1;
    const double r = std::clamp(tristage.avg_sum_rate, frontier.min_rate(), frontier.max_rate());
    if (std::abs(r - tristage.avg_sum_rate) > 1e-9 * std::max(1.0, frontier.max_rate()))
        throw InfeasibleTarget("tristage average rate outside the bound's range");
    rep.bound = frontier.value(r);
    rep.gap = rep.bound - rep.tristage_fairness;
    rep.holds = rep.gap >= -tolerance;
    return rep;
}

} // namespace fairshare
