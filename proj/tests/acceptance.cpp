// Acceptance suite: one PASS/FAIL line per criterion; nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "fairshare/benchmark.hpp"
#include "fairshare/io.hpp"
#include "oracles.hpp"

using namespace fairshare;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            if (!detail.empty())
                detail += "; ";
            detail += what;
        }
    }
};

std::string fmt(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, const std::string& summary)
{
    std::printf("%s criterion %d: %s | %s%s%s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), summary.c_str(),
                o.detail.empty() ? "" : " | ", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass)
        ++failures;
}

// 1 --------------------------------------------------------------------------

void decomposition()
{
    const auto start = Clock::now();
    Outcome o;
    std::mt19937_64 rng(101);
    double worst = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 1; k <= 4; ++k) {
        for (std::size_t n = k; n <= k + 2; ++n) {
            const std::size_t reps = count < 4 * 84 ? 84 : 83; // 12 shapes, 1000 channels
            for (std::size_t rep = 0; rep < reps; ++rep, ++count) {
                const ChannelMatrix h = sample_channel(k, n, rng);
                std::vector<std::size_t> order = identity_ordering(k);
                std::shuffle(order.begin(), order.end(), rng);
                const ZfdpcDecomposition d = zfdpc_decompose(h, order);
                const ComplexMatrix& q = d.beamformers;
                const ComplexMatrix& l = d.gains_matrix;
                const double orth = (q.adjoint() * q - ComplexMatrix::Identity(k, k)).cwiseAbs().maxCoeff();
                double upper = 0.0, diag = 0.0, gain = 0.0;
                for (std::size_t i = 0; i < k; ++i) {
                    const auto ii = static_cast<Eigen::Index>(i);
                    diag = std::max({diag, std::abs(l(ii, ii).imag()), std::max(0.0, -l(ii, ii).real())});
                    gain = std::max(gain, std::abs(d.gains[i] - std::norm(l(ii, ii))));
                    for (std::size_t j = i + 1; j < k; ++j)
                        upper = std::max(upper, std::abs(l(ii, static_cast<Eigen::Index>(j))));
                }
                const double recon =
                    (permute_users(h, order).entries() - l * q.adjoint()).cwiseAbs().maxCoeff();
                worst = std::max({worst, orth, upper, diag, gain, recon});
            }
        }
    }
    const double t = seconds_since(start);
    o.require(count == 1000, "expected 1000 channels");
    o.require(worst <= 1e-10, "max invariant error " + fmt(worst));
    o.require(t < 5.0, "runtime " + fmt(t) + " s");
    report(1, "QR decomposition invariants", o,
           std::to_string(count) + " channels, max error " + fmt(worst) + ", " + fmt(t) + " s");
}

// 2 --------------------------------------------------------------------------

void fairness_measures()
{
    Outcome o;
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<std::size_t> kdist(1, 12);
    double identity = 0.0;
    std::size_t bound_violations = 0;
    for (int i = 0; i < 10000; ++i) {
        const std::size_t k = kdist(rng);
        const std::vector<double> s = oracle::random_simplex(k, rng);
        const NormalizedRateVector g = NormalizedRateVector::from_shares(s);
        const double j = jain_index(g);
        const double f = l1_fairness_of_rates(s, SingleUser::ReportFair);
        identity = std::max(identity, std::abs(j - jain_cos_identity(g)));
        const double kk = static_cast<double>(k);
        if (!(j >= 1.0 / kk - 1e-15 && j <= 1.0 + 1e-15 && f >= -1e-15 && f <= 1.0 + 1e-15))
            ++bound_violations;
    }
    o.require(identity <= 1e-12, "identity error " + fmt(identity));
    o.require(bound_violations == 0, std::to_string(bound_violations) + " bound violations");

    // 1 - F ~ theta, 1 - J ~ theta^2 along several directions with zero sum
    double worst_f = 0.0, worst_j = 0.0;
    const std::vector<std::vector<double>> directions{
        {0.3, -0.1, -0.2, 0.0}, {1.0, -1.0}, {0.5, 0.5, -1.0}, {0.2, -0.4, 0.1, 0.3, -0.2, 0.0, 0.0, 0.0}};
    for (const auto& dir : directions) {
        const double e = 1.0 / static_cast<double>(dir.size());
        std::vector<double> lt, lf, lj;
        for (double eps = 1e-4; eps <= 1e-1 * (1.0 + 1e-9); eps *= std::pow(10.0, 0.125)) {
            std::vector<double> s(dir.size());
            for (std::size_t i = 0; i < s.size(); ++i)
                s[i] = e * (1.0 + eps * dir[i]);
            const NormalizedRateVector g = normalize(s);
            lt.push_back(std::log(angle_to_equal_share(g)));
            lf.push_back(std::log(1.0 - l1_fairness(g)));
            lj.push_back(std::log(1.0 - jain_index(g)));
        }
        worst_f = std::max(worst_f, std::abs(oracle::fit_slope(lt, lf) - 1.0));
        worst_j = std::max(worst_j, std::abs(oracle::fit_slope(lt, lj) - 2.0));
    }
    o.require(worst_f <= 0.05, "F slope off by " + fmt(worst_f));
    o.require(worst_j <= 0.05, "J slope off by " + fmt(worst_j));
    report(2, "fairness measures", o,
           "identity error " + fmt(identity) + ", slope errors F " + fmt(worst_f) + " J " + fmt(worst_j));
}

// 3 --------------------------------------------------------------------------

void allocators_vs_oracle()
{
    Outcome o;
    std::mt19937_64 rng(303);
    std::uniform_real_distribution<double> db(-5.0, 20.0);
    double worst_gap = 0.0, worst_equal = 0.0, worst_kkt = 0.0;
    for (int i = 0; i < 100; ++i) {
        const ChannelMatrix h = sample_channel(2, 2, rng);
        const std::vector<double> g = zfdpc_decompose(h).gains;
        const double budget = db_to_linear(db(rng));
        const auto check = [&](const AllocationResult& a, const std::function<double(double, double)>& f) {
            const auto ref = oracle::grid_search_two_users(f, budget);
            const double v = f(a.alloc.powers[0], a.alloc.powers[1]);
            worst_gap = std::max(worst_gap, std::abs(ref.value - v));
        };
        const AllocationResult ms = max_sum_rate(g, budget);
        check(ms, [&](double a, double b) { return oracle::sum_rate2(g, a, b); });
        check(proportional_fair(g, budget), [&](double a, double b) { return oracle::pf2(g, a, b); });
        check(harmonic_mean(g, budget), [&](double a, double b) { return oracle::harmonic2(g, a, b); });
        const AllocationResult mm = max_min(g, budget);
        check(mm, [&](double a, double b) { return oracle::min_rate2(g, a, b); });
        worst_equal = std::max(worst_equal, std::abs(mm.rates[0] - mm.rates[1]));
        worst_kkt = std::max(worst_kkt, ms.kkt_residual);
    }
    // KKT on larger instances too
    for (int i = 0; i < 200; ++i) {
        const std::size_t k = 1 + static_cast<std::size_t>(rng() % 8);
        const std::vector<double> g = zfdpc_decompose(sample_channel(k, k, rng)).gains;
        worst_kkt = std::max(worst_kkt, max_sum_rate(g, db_to_linear(db(rng))).kkt_residual);
    }
    o.require(worst_gap <= 1e-4, "oracle gap " + fmt(worst_gap));
    o.require(worst_equal <= 1e-12, "max-min rate spread " + fmt(worst_equal));
    o.require(worst_kkt <= 1e-9, "water-filling KKT residual " + fmt(worst_kkt));
    report(3, "allocators against grid-search oracle", o,
           "oracle gap " + fmt(worst_gap) + ", max-min spread " + fmt(worst_equal) + ", KKT " + fmt(worst_kkt));
}

// 4 --------------------------------------------------------------------------

void tristage_geometry()
{
    Outcome o;
    std::mt19937_64 rng(404);
    std::uniform_real_distribution<double> db(-5.0, 20.0);
    double worst_hull = 0.0, worst_mixer = 0.0, min_margin = std::numeric_limits<double>::infinity();
    io::Json counterexamples = io::Json::array();
    for (int i = 0; i < 100; ++i) {
        const ChannelMatrix h = sample_channel(2, 2, rng);
        const std::vector<double> g = zfdpc_decompose(h).gains;
        const double budget = db_to_linear(db(rng));
        const TristageOutcome out = run_tristage(g, budget);
        const TradeoffCurve& curve = out.curve;
        for (const CakeCutPoint& p : curve.grid())
            worst_hull = std::max(worst_hull, p.fairness - curve.f_max(p.sum_rate));
        const double margin = curve.f_max(out.pf_point.sum_rate) - out.pf_point.fairness;
        min_margin = std::min(min_margin, margin);
        if (margin < -1e-9)
            counterexamples.push_back({{"instance", i},
                                       {"channel", io::channel_to_json(h)},
                                       {"budget", budget},
                                       {"pf_sum_rate", out.pf_point.sum_rate},
                                       {"pf_fairness", out.pf_point.fairness},
                                       {"envelope_fairness", curve.f_max(out.pf_point.sum_rate)}});
        const auto& hull = curve.hull();
        for (std::size_t v = 0; v < hull.size(); ++v) {
            const Mixture at = curve.mixer_at(hull[v].sum_rate);
            worst_mixer = std::max({worst_mixer, std::abs(curve.expected_sum_rate(at) - hull[v].sum_rate),
                                    std::abs(curve.expected_fairness(at) - hull[v].fairness)});
            if (v + 1 < hull.size()) {
                for (double t : {0.1, 0.37, 0.5, 0.9}) {
                    const double r = (1 - t) * hull[v].sum_rate + t * hull[v + 1].sum_rate;
                    const double f = (1 - t) * hull[v].fairness + t * hull[v + 1].fairness;
                    const Mixture m = curve.mixer_at(r);
                    worst_mixer = std::max({worst_mixer, std::abs(curve.expected_sum_rate(m) - r),
                                            std::abs(curve.expected_fairness(m) - f)});
                }
            }
        }
    }
    if (!counterexamples.empty())
        io::write_file("pf_envelope_counterexamples.json", io::dump(counterexamples));
    o.require(worst_hull <= 1e-12, "grid point above envelope by " + fmt(worst_hull));
    o.require(counterexamples.empty(),
              std::to_string(counterexamples.size()) + " pf points above the envelope, written to "
                                                         "pf_envelope_counterexamples.json");
    o.require(worst_mixer <= 1e-10, "mixer error " + fmt(worst_mixer));
    report(4, "tri-stage geometry", o,
           "hull excess " + fmt(worst_hull) + ", min pf margin " + fmt(min_margin) + ", mixer error " +
               fmt(worst_mixer));
}

// 5 --------------------------------------------------------------------------

void sampling_convergence()
{
    const auto start = Clock::now();
    Outcome o;
    std::mt19937_64 rng(505);
    const std::size_t n = 10000;
    double worst = 0.0; // in units of sigma / sqrt(n)
    std::size_t instances = 0, mixed = 0;
    const std::size_t sizes[] = {2, 2, 3, 4, 8};
    for (std::size_t i = 0; i < 10; ++i) {
        const std::size_t k = sizes[i % 5];
        const std::vector<double> g = zfdpc_decompose(sample_channel(k, k, rng)).gains;
        const double budget = db_to_linear(std::uniform_real_distribution<double>(0.0, 15.0)(rng));
        const TristageOutcome tri = run_tristage(g, budget);
        OperatingPoint op = tri.op;
        const auto& hull = tri.curve.hull();
        if (i >= 5 && hull.size() >= 2) {
            // interior of the middle segment: a genuine two-atom mixture
            const std::size_t seg = (hull.size() - 2) / 2;
            const double rate = 0.6 * hull[seg].sum_rate + 0.4 * hull[seg + 1].sum_rate;
            op = OperatingPoint{rate, tri.curve.f_max(rate), tri.curve.mixer_at(rate), false, {}};
        }
        const TradeoffCurve& curve = tri.curve;
        const auto draws = sample_allocation(op, curve, budget, n, rng());
        ++instances;
        if (op.mixer.atoms.size() == 2)
            ++mixed;
        CompensatedSum sum_r, sum_f;
        for (const auto& d : draws) {
            sum_r.add(d.sum_rate);
            sum_f.add(d.fairness);
        }
        const double mr = sum_r.value() / static_cast<double>(n);
        const double mf = sum_f.value() / static_cast<double>(n);
        // standard deviation of the mixing law itself
        double vr = 0.0, vf = 0.0;
        for (const MixAtom& a : op.mixer.atoms) {
            const CakeCutPoint& p = curve.grid()[a.grid_index];
            vr += a.weight * (p.sum_rate - op.sum_rate) * (p.sum_rate - op.sum_rate);
            vf += a.weight * (p.fairness - op.fairness) * (p.fairness - op.fairness);
        }
        const double root_n = std::sqrt(static_cast<double>(n));
        const auto score = [](double err, double se, double scale) {
            const double noise = 1e-12 * std::max(1.0, scale);
            if (err <= noise)
                return 0.0;
            return se > 0.0 ? (err - noise) / se : std::numeric_limits<double>::infinity();
        };
        const double zr = score(std::abs(mr - op.sum_rate), std::sqrt(vr) / root_n, op.sum_rate);
        const double zf = score(std::abs(mf - op.fairness), std::sqrt(vf) / root_n, 1.0);
        worst = std::max({worst, zr, zf});
    }
    const double t = seconds_since(start);
    o.require(worst <= 3.0, "worst deviation " + fmt(worst) + " sigma/sqrt(n)");
    o.require(t < 10.0, "runtime " + fmt(t) + " s");
    report(5, "sampled allocations converge", o,
           std::to_string(instances) + " instances (" + std::to_string(mixed) + " two-atom), worst " + fmt(worst) +
               " sigma/sqrt(n), " + fmt(t) + " s");
}

// 6, 7, 8 --------------------------------------------------------------------

struct Run {
    std::string label;
    EnsembleBatch batch;
};

EnsembleConfig ensemble(std::size_t k, double p_db, std::size_t blocks)
{
    EnsembleConfig c;
    c.users = k;
    c.antennas = k;
    c.power_db = p_db;
    c.n_blocks = blocks;
    c.seed = power_seed(2024, p_db);
    c.tristage.single_user = SingleUser::ReportFair;
    return c;
}

double tristage_bound_gap(const EnsembleBatch& b)
{
    const RateSplitFrontier frontier(b.envelopes);
    return bound_dominance_report(b.result(Criterion::Tristage), frontier).gap;
}

void two_user_ensemble(std::vector<Run>& runs)
{
    const auto start = Clock::now();
    Outcome o;
    const EnsembleBatch low = run_ensembles(ensemble(2, 0.0, 10000), kAllCriteria, true);
    const EnsembleBatch high = run_ensembles(ensemble(2, 15.0, 10000), kAllCriteria, true);
    const EnsembleResult& ms = low.result(Criterion::MaxSum);
    const EnsembleResult& pf = low.result(Criterion::ProportionalFair);
    const EnsembleResult& mm = low.result(Criterion::MaxMin);
    const EnsembleResult& tri = low.result(Criterion::Tristage);
    o.require(mm.avg_fairness_l1 == 1.0, "F(max_min) = " + fmt(mm.avg_fairness_l1));
    o.require(mm.avg_fairness_l1 > tri.avg_fairness_l1, "F(max_min) <= F(tri)");
    o.require(tri.avg_fairness_l1 >= pf.avg_fairness_l1 - 1e-3, "F(tri) < F(pf)");
    o.require(pf.avg_fairness_l1 > ms.avg_fairness_l1, "F(pf) <= F(max_sum)");
    o.require(ms.avg_sum_rate > tri.avg_sum_rate, "R(max_sum) <= R(tri)");
    o.require(tri.avg_sum_rate >= pf.avg_sum_rate - 1e-3, "R(tri) < R(pf)");
    o.require(pf.avg_sum_rate > mm.avg_sum_rate, "R(pf) <= R(max_min)");
    const double gap_low = tristage_bound_gap(low);
    const double gap_high = tristage_bound_gap(high);
    o.require(gap_high < gap_low, "bound gap at 15 dB " + fmt(gap_high) + " not below 0 dB " + fmt(gap_low));
    const double t = seconds_since(start);
    o.require(t < 120.0, "runtime " + fmt(t) + " s");
    report(6, "two-user ensemble ordering", o,
           "0 dB: F max_sum " + fmt(ms.avg_fairness_l1) + " pf " + fmt(pf.avg_fairness_l1) + " tri " +
               fmt(tri.avg_fairness_l1) + ", R max_min " + fmt(mm.avg_sum_rate) + " pf " + fmt(pf.avg_sum_rate) +
               " tri " + fmt(tri.avg_sum_rate) + " max_sum " + fmt(ms.avg_sum_rate) + "; bound gap 0 dB " +
               fmt(gap_low) + " 15 dB " + fmt(gap_high) + "; " + fmt(t) + " s");
    runs.push_back({"K=2 P=0dB", low});
    runs.push_back({"K=2 P=15dB", high});
}

void eight_user_ensemble(std::vector<Run>& runs)
{
    const auto start = Clock::now();
    Outcome o;
    const Criterion wanted[] = {Criterion::ProportionalFair, Criterion::Tristage};
    const EnsembleBatch b = run_ensembles(ensemble(8, 0.0, 1000), wanted, true);
    const EnsembleResult& pf = b.result(Criterion::ProportionalFair);
    const EnsembleResult& tri = b.result(Criterion::Tristage);
    o.require(tri.avg_sum_rate >= pf.avg_sum_rate - 1e-3, "R(tri) < R(pf)");
    o.require(tri.avg_fairness_l1 >= pf.avg_fairness_l1 - 1e-3, "F(tri) < F(pf)");
    const double t = seconds_since(start);
    o.require(t < 600.0, "runtime " + fmt(t) + " s");
    report(7, "eight-user ensemble dominance", o,
           "tri (R " + fmt(tri.avg_sum_rate) + ", F " + fmt(tri.avg_fairness_l1) + ") vs pf (R " +
               fmt(pf.avg_sum_rate) + ", F " + fmt(pf.avg_fairness_l1) + "), " +
               std::to_string(tri.fallback_blocks) + " fallback blocks, " + fmt(t) + " s");
    runs.push_back({"K=8 P=0dB", b});
}

double envelope_value(const BlockEnvelope& e, double r)
{
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < e.sum_rate.size(); ++i)
        pts.emplace_back(e.sum_rate[i], e.fairness[i]);
    return oracle::envelope_at(pts, r);
}

// Best (F1(r1) + F2(2T - r1)) / 2 over a uniform grid of r1.
double exhaustive_two_block(const BlockEnvelope& a, const BlockEnvelope& b, double target)
{
    const double lo = std::max(a.sum_rate.front(), 2.0 * target - b.sum_rate.back());
    const double hi = std::min(a.sum_rate.back(), 2.0 * target - b.sum_rate.front());
    double best = -std::numeric_limits<double>::infinity();
    const int steps = 20000;
    for (int i = 0; i <= steps; ++i) {
        const double r1 = lo + (hi - lo) * i / steps;
        const double r2 = std::clamp(2.0 * target - r1, b.sum_rate.front(), b.sum_rate.back());
        best = std::max(best, 0.5 * (envelope_value(a, r1) + envelope_value(b, r2)));
    }
    return best;
}

void upper_bound(const std::vector<Run>& runs)
{
    Outcome o;
    double worst_split = 0.0;
    std::size_t pairs = 0;
    for (const Run& run : runs) {
        const auto& env = run.batch.envelopes;
        for (std::size_t i = 0; i + 1 < env.size() && i < 40; i += 2) {
            const std::vector<BlockEnvelope> two{env[i], env[i + 1]};
            const RateSplitFrontier frontier(two);
            for (double s : {0.0, 0.13, 0.5, 0.77, 1.0}) {
                const double target = frontier.min_rate() + s * (frontier.max_rate() - frontier.min_rate());
                const double lagrangian = frontier.value(target);
                const double brute = exhaustive_two_block(env[i], env[i + 1], target);
                worst_split = std::max(worst_split, std::abs(lagrangian - brute));
            }
            ++pairs;
        }
    }
    o.require(worst_split <= 1e-3, "split mismatch " + fmt(worst_split));
    std::string gaps;
    for (const Run& run : runs) {
        const double gap = tristage_bound_gap(run.batch);
        gaps += (gaps.empty() ? "" : ", ") + run.label + " " + fmt(gap);
        o.require(gap >= -1e-6, run.label + " gap " + fmt(gap));
    }
    report(8, "rate-split upper bound", o,
           std::to_string(pairs) + " block pairs, split mismatch " + fmt(worst_split) + "; gaps " + gaps);
}

} // namespace

int main()
{
    decomposition();
    fairness_measures();
    allocators_vs_oracle();
    tristage_geometry();
    sampling_convergence();
    std::vector<Run> runs;
    two_user_ensemble(runs);
    eight_user_ensemble(runs);
    upper_bound(runs);
    std::printf("%s: %d of 8 criteria failed\n", failures == 0 ? "ACCEPTED" : "REJECTED", failures);
    return failures == 0 ? 0 : 1;
}
