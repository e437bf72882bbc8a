#pragma once

// Tri-stage statistical power allocation:
//   1. cake-cutting: a fraction c of the budget is shared by max-min, the rest
//      is water-filled on top of it, giving a curve (R_sum(c), F(c));
//   2. mixing: time-sharing over c reaches the upper concave envelope
//      F_max(R) of that curve, and any envelope point needs at most two cuts;
//   3. selection: the envelope point nearest to the proportional-fair pair,
//      unless the envelope lies below it.
// Sampling c from the selected two-point mixture realizes the operating point
// on average over a quasi-static block.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "fairshare/allocators.hpp"
#include "fairshare/channel.hpp"
#include "fairshare/error.hpp"
#include "fairshare/fairness.hpp"

namespace fairshare {

struct CakeCutPoint {
    double c = 0.0;
    PowerAllocation alloc;
    RateVector rates;
    double sum_rate = 0.0;
    double fairness = 0.0; // l1 measure
    double jain = 0.0;
    bool refinement = false; // inserted off the uniform grid
};

struct TristageOptions {
    std::size_t grid_size = 201;
    bool normalize_distance = false; // divide R by the largest envelope rate in the selection distance
    SingleUser single_user = SingleUser::Raise;
    bool refine_at_pf = true; // add the cut whose sum rate equals the pf sum rate
    double fallback_tolerance = 1e-9; // F_max(R_pf) may trail F_pf by this much before falling back
};

/// Power allocation p(c) = p1(c) + p2(c): max-min share of c*P plus water-filling
/// of (1 - c)*P on top of it.
inline CakeCutPoint cake_cut(std::span<const double> gains, double budget, double c,
                             SingleUser single_user = SingleUser::Raise)
{
    if (!(c >= 0.0 && c <= 1.0))
        throw Error("splitting factor must lie in [0, 1]");
    CakeCutPoint point;
    point.c = c;
    if (c == 1.0) {
        AllocationResult mm = max_min(gains, budget);
        point.alloc = std::move(mm.alloc);
        point.rates = std::move(mm.rates);
    } else {
        std::vector<double> base(gains.size(), 0.0);
        if (c > 0.0)
            base = max_min(gains, c * budget).alloc.powers;
        AllocationResult top = max_sum_rate(gains, (1.0 - c) * budget, base);
        std::vector<double> powers(gains.size());
        for (std::size_t k = 0; k < gains.size(); ++k)
            powers[k] = base[k] + top.alloc.powers[k];
        point.rates = zfdpc_rates(gains, powers);
        point.alloc = PowerAllocation{std::move(powers), budget};
    }
    point.sum_rate = sum_of(point.rates);
    point.fairness = l1_fairness_of_rates(point.rates, single_user);
    point.jain = jain_index_of_rates(point.rates);
    return point;
}

inline CakeCutPoint cake_cut(const ZfdpcDecomposition& dec, double budget, double c,
                             SingleUser single_user = SingleUser::Raise)
{
    return cake_cut(dec.gains, budget, c, single_user);
}

/// Cake cuts on the uniform grid c_i = i / (grid_size - 1), endpoints included.
inline std::vector<CakeCutPoint> sweep(std::span<const double> gains, double budget, std::size_t grid_size,
                                       SingleUser single_user = SingleUser::Raise)
{
    if (grid_size < 2)
        throw Error("cake-cut grid needs at least two points");
    std::vector<CakeCutPoint> grid;
    grid.reserve(grid_size);
    const double last = static_cast<double>(grid_size - 1);
    for (std::size_t i = 0; i < grid_size; ++i)
        grid.push_back(cake_cut(gains, budget, static_cast<double>(i) / last, single_user));
    return grid;
}

inline std::vector<CakeCutPoint> sweep(const ZfdpcDecomposition& dec, double budget, std::size_t grid_size,
                                       SingleUser single_user = SingleUser::Raise)
{
    return sweep(dec.gains, budget, grid_size, single_user);
}

/// Inserts, between each pair of neighbouring cuts whose sum rates bracket
/// `rate`, the cut with R_sum(c) = rate (bisection on c). Keeps c order.
inline void refine_at_rate(std::vector<CakeCutPoint>& grid, std::span<const double> gains, double budget,
                           double rate, SingleUser single_user = SingleUser::Raise)
{
    std::vector<CakeCutPoint> inserted;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const double lo_gap = grid[i].sum_rate - rate;
        const double hi_gap = grid[i + 1].sum_rate - rate;
        if (lo_gap == 0.0 || hi_gap == 0.0 || (lo_gap > 0.0) == (hi_gap > 0.0))
            continue;
        double c_lo = grid[i].c;
        double c_hi = grid[i + 1].c;
        const bool decreasing = lo_gap > 0.0;
        for (int it = 0; it < 200 && c_hi - c_lo > 0.0; ++it) {
            const double mid = 0.5 * (c_lo + c_hi);
            if (mid <= c_lo || mid >= c_hi)
                break;
            const double gap = cake_cut(gains, budget, mid, single_user).sum_rate - rate;
            if ((gap > 0.0) == decreasing)
                c_lo = mid;
            else
                c_hi = mid;
        }
        CakeCutPoint lo = cake_cut(gains, budget, c_lo, single_user);
        CakeCutPoint hi = cake_cut(gains, budget, c_hi, single_user);
        CakeCutPoint best = std::abs(lo.sum_rate - rate) <= std::abs(hi.sum_rate - rate) ? std::move(lo) : std::move(hi);
        best.refinement = true;
        inserted.push_back(std::move(best));
        positions.push_back(i + 1);
    }
    for (std::size_t j = inserted.size(); j-- > 0;)
        grid.insert(grid.begin() + static_cast<std::ptrdiff_t>(positions[j]), std::move(inserted[j]));
}

struct HullVertex {
    double sum_rate = 0.0;
    double fairness = 0.0;
    std::size_t grid_index = 0;
};

struct MixAtom {
    std::size_t grid_index = 0;
    double c = 0.0;
    double weight = 0.0;
};

/// Distribution over cake cuts with one or two atoms.
struct Mixture {
    std::vector<MixAtom> atoms;

    bool degenerate() const { return atoms.size() == 1; }
};

/// Raw cake-cut grid together with its upper concave envelope.
class TradeoffCurve {
public:
    TradeoffCurve() = default;
    TradeoffCurve(std::vector<CakeCutPoint> grid, std::vector<HullVertex> hull)
        : grid_(std::move(grid)), hull_(std::move(hull))
    {
    }

    const std::vector<CakeCutPoint>& grid() const { return grid_; }
    const std::vector<HullVertex>& hull() const { return hull_; }

    double min_rate() const { return hull_.front().sum_rate; }
    double max_rate() const { return hull_.back().sum_rate; }
    bool contains(double rate) const { return !hull_.empty() && rate >= min_rate() && rate <= max_rate(); }

    /// F_max(R) by linear interpolation between envelope vertices.
    double f_max(double rate) const
    {
        const auto [a, b, t] = locate(rate);
        return (1.0 - t) * hull_[a].fairness + t * hull_[b].fairness;
    }

    /// Two-atom mixture over cake cuts whose expected (R, F) is (rate, F_max(rate)).
    Mixture mixer_at(double rate) const
    {
        const auto [a, b, t] = locate(rate);
        return mixture(a, b, t);
    }

    /// Atoms at envelope vertices a and b = a + 1 with weights (1 - t, t).
    Mixture mixture(std::size_t a, std::size_t b, double t) const
    {
        Mixture m;
        auto atom = [&](std::size_t vertex, double w) {
            const std::size_t idx = hull_[vertex].grid_index;
            return MixAtom{idx, grid_[idx].c, w};
        };
        if (t <= 0.0 || a == b)
            m.atoms.push_back(atom(a, 1.0));
        else if (t >= 1.0)
            m.atoms.push_back(atom(b, 1.0));
        else {
            m.atoms.push_back(atom(a, 1.0 - t));
            m.atoms.push_back(atom(b, t));
        }
        return m;
    }

    double expected_sum_rate(const Mixture& m) const
    {
        double total = 0.0;
        for (const MixAtom& atom : m.atoms)
            total += atom.weight * grid_[atom.grid_index].sum_rate;
        return total;
    }

    double expected_fairness(const Mixture& m) const
    {
        double total = 0.0;
        for (const MixAtom& atom : m.atoms)
            total += atom.weight * grid_[atom.grid_index].fairness;
        return total;
    }

    double expected_jain(const Mixture& m) const
    {
        double total = 0.0;
        for (const MixAtom& atom : m.atoms)
            total += atom.weight * grid_[atom.grid_index].jain;
        return total;
    }

private:
    struct Location {
        std::size_t a;
        std::size_t b;
        double t;
    };

    Location locate(double rate) const
    {
        if (hull_.empty())
            throw DegenerateCurve("tradeoff curve has no envelope");
        if (!contains(rate))
            throw InfeasibleTarget("sum rate outside the envelope range");
        if (hull_.size() == 1)
            return {0, 0, 0.0};
        auto it = std::upper_bound(hull_.begin(), hull_.end(), rate,
                                   [](double r, const HullVertex& v) { return r < v.sum_rate; });
        std::size_t b = static_cast<std::size_t>(it - hull_.begin());
        if (b >= hull_.size())
            return {hull_.size() - 2, hull_.size() - 1, 1.0};
        const std::size_t a = b - 1;
        if (rate == hull_[a].sum_rate)
            return {a, b, 0.0};
        const double t = (rate - hull_[a].sum_rate) / (hull_[b].sum_rate - hull_[a].sum_rate);
        return {a, b, t};
    }

    std::vector<CakeCutPoint> grid_;
    std::vector<HullVertex> hull_;
};

/// Upper concave envelope of (R, F) points, left to right. Among points with
/// equal R the fairest (then the earliest) is kept; collinear vertices are dropped.
inline std::vector<HullVertex> upper_concave_envelope(std::vector<HullVertex> points)
{
    std::stable_sort(points.begin(), points.end(), [](const HullVertex& x, const HullVertex& y) {
        if (x.sum_rate != y.sum_rate)
            return x.sum_rate < y.sum_rate;
        return x.fairness > y.fairness;
    });
    std::vector<HullVertex> hull;
    for (const HullVertex& p : points) {
        if (!hull.empty() && hull.back().sum_rate == p.sum_rate)
            continue;
        while (hull.size() >= 2) {
            const HullVertex& o = hull[hull.size() - 2];
            const HullVertex& a = hull.back();
            const double cross =
                (a.sum_rate - o.sum_rate) * (p.fairness - o.fairness) - (a.fairness - o.fairness) * (p.sum_rate - o.sum_rate);
            if (cross < 0.0)
                break;
            hull.pop_back();
        }
        hull.push_back(p);
    }
    return hull;
}

/// Mixing stage: envelope of a raw cake-cut grid.
inline TradeoffCurve mix(std::vector<CakeCutPoint> grid)
{
    if (grid.size() < 2)
        throw DegenerateCurve("mixing needs at least two cake cuts");
    std::vector<HullVertex> points;
    points.reserve(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i)
        points.push_back({grid[i].sum_rate, grid[i].fairness, i});
    std::vector<HullVertex> hull = upper_concave_envelope(std::move(points));
    if (hull.size() < 2 ||
        hull.back().sum_rate - hull.front().sum_rate <= 1e-12 * std::max(1.0, std::abs(hull.back().sum_rate)))
        throw DegenerateCurve("every cake cut gives the same sum rate");
    return TradeoffCurve(std::move(grid), std::move(hull));
}

struct RateFairnessPoint {
    double sum_rate = 0.0;
    double fairness = 0.0;
    std::vector<double> powers;
};

struct OperatingPoint {
    double sum_rate = 0.0;
    double fairness = 0.0;
    Mixture mixer;             // empty when the fallback is used
    bool fallback_used = false;
    std::vector<double> fallback_powers; // the proportional-fair allocation on fallback
};

/// Selection stage. Returns the envelope point nearest to the proportional-fair
/// pair when F_max(R_pf) >= F_pf - tolerance; otherwise the pair itself.
inline OperatingPoint select(const TradeoffCurve& curve, const RateFairnessPoint& pf, bool normalize_distance = false,
                             double tolerance = 0.0)
{
    OperatingPoint op;
    if (!curve.contains(pf.sum_rate) || curve.f_max(pf.sum_rate) < pf.fairness - tolerance) {
        op.sum_rate = pf.sum_rate;
        op.fairness = pf.fairness;
        op.fallback_used = true;
        op.fallback_powers = pf.powers;
        return op;
    }

    const auto& hull = curve.hull();
    const double scale = normalize_distance ? curve.max_rate() : 1.0;
    const double px = pf.sum_rate / scale;
    const double py = pf.fairness;

    double best = std::numeric_limits<double>::infinity();
    std::size_t best_seg = 0;
    double best_t = 0.0;
    double best_f = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s + 1 < hull.size(); ++s) {
        const double ax = hull[s].sum_rate / scale;
        const double ay = hull[s].fairness;
        const double dx = hull[s + 1].sum_rate / scale - ax;
        const double dy = hull[s + 1].fairness - ay;
        const double len2 = dx * dx + dy * dy;
        double t = len2 > 0.0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double qx = ax + t * dx;
        const double qy = ay + t * dy;
        const double dist = (qx - px) * (qx - px) + (qy - py) * (qy - py);
        const double tie = 1e-14 * std::max(1.0, best);
        if (dist < best - tie || (dist <= best + tie && qy > best_f)) {
            best = std::min(best, dist);
            best_seg = s;
            best_t = t;
            best_f = qy;
        }
    }

    op.mixer = curve.mixture(best_seg, best_seg + 1, best_t);
    op.sum_rate = curve.expected_sum_rate(op.mixer);
    op.fairness = curve.expected_fairness(op.mixer);
    return op;
}

struct AllocationDraw {
    std::optional<std::size_t> grid_index; // empty on fallback
    double c = std::numeric_limits<double>::quiet_NaN();
    PowerAllocation alloc;
    double sum_rate = 0.0;
    double fairness = 0.0;
};

/// Statistical power allocation: n i.i.d. cake cuts drawn from the operating
/// point's mixture. Under fallback every draw is the proportional-fair allocation.
inline std::vector<AllocationDraw> sample_allocation(const OperatingPoint& op, const TradeoffCurve& curve,
                                                     double budget, std::size_t n, std::uint64_t seed)
{
    std::vector<AllocationDraw> draws;
    draws.reserve(n);
    if (op.fallback_used || op.mixer.atoms.empty()) {
        for (std::size_t i = 0; i < n; ++i)
            draws.push_back({std::nullopt, std::numeric_limits<double>::quiet_NaN(),
                             PowerAllocation{op.fallback_powers, budget}, op.sum_rate, op.fairness});
        return draws;
    }
    std::mt19937_64 rng(seed);
    const auto& atoms = op.mixer.atoms;
    std::bernoulli_distribution second(atoms.size() == 2 ? atoms[1].weight : 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const MixAtom& atom = (atoms.size() == 2 && second(rng)) ? atoms[1] : atoms[0];
        const CakeCutPoint& point = curve.grid()[atom.grid_index];
        draws.push_back({atom.grid_index, point.c, point.alloc, point.sum_rate, point.fairness});
    }
    return draws;
}

/// All three stages on one channel realization.
struct TristageOutcome {
    TradeoffCurve curve;
    AllocationResult pf;
    RateFairnessPoint pf_point;
    OperatingPoint op;
    double jain = 0.0; // expected Jain index under the mixture (or at pf on fallback)
    bool degenerate_curve = false;
};

inline TristageOutcome run_tristage(std::span<const double> gains, double budget, const TristageOptions& options = {})
{
    TristageOutcome out;
    out.pf = proportional_fair(gains, budget);
    out.pf_point = RateFairnessPoint{out.pf.sum_rate, l1_fairness_of_rates(out.pf.rates, options.single_user),
                                     out.pf.alloc.powers};
    std::vector<CakeCutPoint> grid = sweep(gains, budget, options.grid_size, options.single_user);
    if (options.refine_at_pf)
        refine_at_rate(grid, gains, budget, out.pf_point.sum_rate, options.single_user);
    try {
        out.curve = mix(grid);
    } catch (const DegenerateCurve&) {
        // All cuts coincide (a single user): nothing to mix, keep the pf pair.
        out.degenerate_curve = true;
        out.curve = TradeoffCurve(std::move(grid), {});
        out.op = OperatingPoint{out.pf_point.sum_rate, out.pf_point.fairness, {}, true, out.pf_point.powers};
        out.jain = jain_index_of_rates(out.pf.rates);
        return out;
    }
    out.op = select(out.curve, out.pf_point, options.normalize_distance, options.fallback_tolerance);
    out.jain = out.op.fallback_used ? jain_index_of_rates(out.pf.rates) : out.curve.expected_jain(out.op.mixer);
    return out;
}

} // namespace fairshare
