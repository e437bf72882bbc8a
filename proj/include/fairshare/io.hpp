#pragma once

// Serialization of channels, tradeoff geometry, ensemble summaries and
// allocation draws (JSON and CSV), and read-back validation of emitted files.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fairshare/benchmark.hpp"
#include "fairshare/channel.hpp"
#include "fairshare/error.hpp"
#include "fairshare/tristage.hpp"

namespace fairshare::io {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double x)
{
    if (std::isnan(x))
        return "nan";
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text)
{
    if (text == "nan")
        return std::nan("");
    if (text == "inf")
        return INFINITY;
    if (text == "-inf")
        return -INFINITY;
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
        throw Error("not a number: '" + std::string(text) + "'");
    return v;
}

// ---------------------------------------------------------------- CSV

/// Quotes a field when it holds a comma, quote or line break.
inline std::string csv_field(std::string_view s)
{
    if (s.find_first_of(",\"\r\n") == std::string_view::npos)
        return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"')
            out += '"';
        out += ch;
    }
    out += '"';
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        throw Error("missing CSV column '" + std::string(name) + "'");
    }
};

inline std::string to_csv(const CsvTable& table)
{
    std::string out;
    auto line = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i)
                out += ',';
            out += csv_field(fields[i]);
        }
        out += '\n';
    };
    line(table.header);
    for (const auto& r : table.rows)
        line(r);
    return out;
}

/// RFC 4180 reader (quoted fields, doubled quotes); accepts LF or CRLF.
inline CsvTable parse_csv(std::string_view text)
{
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
        } else if (ch == '"' && !field_started) {
            quoted = true;
            field_started = true;
        } else if (ch == ',') {
            record.push_back(std::move(field));
            field.clear();
            field_started = false;
        } else if (ch == '\n' || ch == '\r') {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n')
                ++i;
            record.push_back(std::move(field));
            records.push_back(std::move(record));
            field.clear();
            record.clear();
            field_started = false;
        } else {
            field += ch;
            field_started = true;
        }
    }
    if (quoted)
        throw Error("unterminated quoted CSV field");
    if (field_started || !record.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    if (records.empty())
        throw Error("CSV has no header");
    CsvTable table;
    table.header = std::move(records.front());
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != table.header.size())
            throw Error("CSV row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                        " fields, header has " + std::to_string(table.header.size()));
        table.rows.push_back(std::move(records[r]));
    }
    return table;
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, std::string_view content)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out)
        throw Error("write failed for " + path);
}

// ---------------------------------------------------------------- JSON

inline Json channel_to_json(const ChannelMatrix& h)
{
    Json re = Json::array();
    Json im = Json::array();
    for (Eigen::Index i = 0; i < h.entries().rows(); ++i) {
        Json rr = Json::array();
        Json ii = Json::array();
        for (Eigen::Index j = 0; j < h.entries().cols(); ++j) {
            rr.push_back(h.entries()(i, j).real());
            ii.push_back(h.entries()(i, j).imag());
        }
        re.push_back(std::move(rr));
        im.push_back(std::move(ii));
    }
    return Json{{"K", h.users()}, {"N", h.antennas()}, {"re", std::move(re)}, {"im", std::move(im)}};
}

inline ChannelMatrix channel_from_json(const Json& j)
{
    const std::size_t k = j.at("K").get<std::size_t>();
    const std::size_t n = j.at("N").get<std::size_t>();
    const Json& re = j.at("re");
    const Json& im = j.at("im");
    if (re.size() != k || im.size() != k)
        throw DimensionError("channel JSON row count differs from K");
    ComplexMatrix m(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < k; ++r) {
        if (re[r].size() != n || im[r].size() != n)
            throw DimensionError("channel JSON column count differs from N");
        for (std::size_t c = 0; c < n; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                Complex(re[r][c].get<double>(), im[r][c].get<double>());
    }
    return ChannelMatrix(std::move(m));
}

inline Json cut_to_json(const CakeCutPoint& p)
{
    return Json{{"c", p.c},
                {"sum_rate", p.sum_rate},
                {"fairness_l1", p.fairness},
                {"fairness_jain", p.jain},
                {"powers", p.alloc.powers}};
}

inline Json mixture_to_json(const TradeoffCurve& curve, const Mixture& m)
{
    Json atoms = Json::array();
    for (const MixAtom& a : m.atoms)
        atoms.push_back(Json{{"c", a.c},
                             {"weight", a.weight},
                             {"sum_rate", curve.grid()[a.grid_index].sum_rate},
                             {"fairness_l1", curve.grid()[a.grid_index].fairness}});
    return atoms;
}

struct TradeoffRecord {
    std::size_t users = 0;
    std::size_t antennas = 0;
    double power_db = 0.0;
    std::uint64_t seed = 0;
    std::size_t grid_size = 0;
    ChannelMatrix channel;
    std::vector<double> gains;
    TristageOutcome outcome;
};

/// Full tradeoff geometry of one channel draw: the raw uniform sweep, cuts added
/// off the grid, the envelope, the pf pair and the selected operating point.
inline Json tradeoff_to_json(const TradeoffRecord& rec)
{
    const TradeoffCurve& curve = rec.outcome.curve;
    Json raw = Json::array();
    Json refined = Json::array();
    for (const CakeCutPoint& p : curve.grid())
        (p.refinement ? refined : raw).push_back(cut_to_json(p));
    Json hull = Json::array();
    for (const HullVertex& v : curve.hull())
        hull.push_back(Json{{"c", curve.grid()[v.grid_index].c}, {"sum_rate", v.sum_rate}, {"fairness_l1", v.fairness}});
    const OperatingPoint& op = rec.outcome.op;
    return Json{
        {"schema_version", kSchemaVersion},
        {"kind", "tradeoff"},
        {"K", rec.users},
        {"N", rec.antennas},
        {"P_dB", rec.power_db},
        {"P_linear", db_to_linear(rec.power_db)},
        {"seed", rec.seed},
        {"c_grid", rec.grid_size},
        {"channel", channel_to_json(rec.channel)},
        {"gains", rec.gains},
        {"raw", std::move(raw)},
        {"refined", std::move(refined)},
        {"hull", std::move(hull)},
        {"pf", Json{{"sum_rate", rec.outcome.pf_point.sum_rate},
                    {"fairness_l1", rec.outcome.pf_point.fairness},
                    {"fairness_jain", jain_index_of_rates(rec.outcome.pf.rates)},
                    {"powers", rec.outcome.pf_point.powers}}},
        {"operating_point", Json{{"sum_rate", op.sum_rate},
                                 {"fairness_l1", op.fairness},
                                 {"fairness_jain", rec.outcome.jain},
                                 {"fallback_used", op.fallback_used},
                                 {"mixer", mixture_to_json(curve, op.mixer)}}},
    };
}

/// Raw sweep as CSV, one row per uniform grid point.
inline CsvTable tradeoff_curve_csv(const TradeoffCurve& curve)
{
    CsvTable t;
    t.header = {"c", "sum_rate", "fairness_l1", "fairness_jain"};
    const std::size_t k = curve.grid().empty() ? 0 : curve.grid().front().alloc.powers.size();
    for (std::size_t i = 0; i < k; ++i)
        t.header.push_back("p_" + std::to_string(i + 1));
    for (const CakeCutPoint& p : curve.grid()) {
        if (p.refinement)
            continue;
        std::vector<std::string> row{format_double(p.c), format_double(p.sum_rate), format_double(p.fairness),
                                     format_double(p.jain)};
        for (double x : p.alloc.powers)
            row.push_back(format_double(x));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline CsvTable hull_csv(const TradeoffCurve& curve)
{
    CsvTable t;
    t.header = {"c", "sum_rate", "fairness_l1"};
    for (const HullVertex& v : curve.hull())
        t.rows.push_back({format_double(curve.grid()[v.grid_index].c), format_double(v.sum_rate),
                          format_double(v.fairness)});
    return t;
}

inline Json ensemble_to_json(const EnsembleResult& r)
{
    return Json{{"criterion", std::string(to_string(r.criterion))},
                {"avg_sum_rate", r.avg_sum_rate},
                {"avg_fairness_l1", r.avg_fairness_l1},
                {"avg_fairness_jain", r.avg_fairness_jain},
                {"stderr_sum_rate", r.stderr_sum_rate},
                {"stderr_fairness_l1", r.stderr_fairness_l1},
                {"n_blocks", r.n_blocks},
                {"P_dB", r.power_db},
                {"K", r.users},
                {"N", r.antennas},
                {"seed", r.seed},
                {"resampled_blocks", r.resampled_blocks},
                {"fallback_blocks", r.fallback_blocks}};
}

inline const std::vector<std::string>& compare_columns()
{
    static const std::vector<std::string> cols{
        "criterion",         "K",                  "N",         "P_dB",  "n_blocks",         "seed",
        "avg_sum_rate",      "avg_fairness_l1",    "avg_fairness_jain",  "stderr_sum_rate",  "stderr_fairness_l1",
        "resampled_blocks",  "fallback_blocks"};
    return cols;
}

/// One row per criterion.
inline CsvTable compare_csv(std::span<const EnsembleResult> results)
{
    CsvTable t;
    t.header = compare_columns();
    for (const EnsembleResult& r : results)
        t.rows.push_back({std::string(to_string(r.criterion)), std::to_string(r.users), std::to_string(r.antennas),
                          format_double(r.power_db), std::to_string(r.n_blocks), std::to_string(r.seed),
                          format_double(r.avg_sum_rate), format_double(r.avg_fairness_l1),
                          format_double(r.avg_fairness_jain), format_double(r.stderr_sum_rate),
                          format_double(r.stderr_fairness_l1), std::to_string(r.resampled_blocks),
                          std::to_string(r.fallback_blocks)});
    return t;
}

inline CsvTable bound_csv(const UpperBoundCurve& curve)
{
    CsvTable t;
    t.header = {"avg_sum_rate", "bound_fairness_l1"};
    for (std::size_t i = 0; i < curve.sum_rate.size(); ++i)
        t.rows.push_back({format_double(curve.sum_rate[i]), format_double(curve.fairness[i])});
    return t;
}

inline Json bound_to_json(const UpperBoundCurve& curve)
{
    return Json{{"n_blocks", curve.n_blocks}, {"avg_sum_rate", curve.sum_rate}, {"fairness_l1", curve.fairness}};
}

inline Json dominance_to_json(const DominanceReport& d)
{
    return Json{{"tristage_sum_rate", d.tristage_sum_rate},
                {"tristage_fairness_l1", d.tristage_fairness},
                {"bound_at_tristage_rate", d.bound},
                {"gap", d.gap},
                {"holds", d.holds}};
}

/// Per-draw allocations with running means of sum rate and fairness.
inline CsvTable sample_csv(std::span<const AllocationDraw> draws, std::size_t users)
{
    CsvTable t;
    t.header = {"draw", "c"};
    for (std::size_t i = 0; i < users; ++i)
        t.header.push_back("p_" + std::to_string(i + 1));
    for (const char* h : {"sum_rate", "fairness_l1", "running_sum_rate", "running_fairness_l1"})
        t.header.emplace_back(h);
    CompensatedSum r, f;
    for (std::size_t d = 0; d < draws.size(); ++d) {
        const AllocationDraw& a = draws[d];
        r.add(a.sum_rate);
        f.add(a.fairness);
        const double n = static_cast<double>(d + 1);
        std::vector<std::string> row{std::to_string(d + 1), a.grid_index ? format_double(a.c) : std::string()};
        for (double p : a.alloc.powers)
            row.push_back(format_double(p));
        row.push_back(format_double(a.sum_rate));
        row.push_back(format_double(a.fairness));
        row.push_back(format_double(r.value() / n));
        row.push_back(format_double(f.value() / n));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- validation

/// Problems found in an emitted tradeoff document; empty when it is valid.
inline std::vector<std::string> validate_tradeoff(const Json& doc, double tol = 1e-9)
{
    std::vector<std::string> issues;
    try {
        if (doc.at("schema_version").get<int>() != kSchemaVersion)
            issues.push_back("unsupported schema_version");
        const std::size_t grid = doc.at("c_grid").get<std::size_t>();
        const double budget = doc.at("P_linear").get<double>();
        const std::size_t k = doc.at("K").get<std::size_t>();
        if (doc.at("raw").size() != grid)
            issues.push_back("raw curve has " + std::to_string(doc.at("raw").size()) + " points, expected " +
                             std::to_string(grid));
        auto check_powers = [&](const Json& powers, const std::string& what) {
            if (powers.size() != k) {
                issues.push_back(what + ": power vector length differs from K");
                return;
            }
            double total = 0.0;
            for (const Json& p : powers) {
                const double v = p.get<double>();
                if (!(v >= 0.0))
                    issues.push_back(what + ": negative power");
                total += v;
            }
            if (total > budget * (1.0 + tol) + tol)
                issues.push_back(what + ": power exceeds budget");
        };
        for (const char* series : {"raw", "refined"})
            for (const Json& p : doc.at(series))
                check_powers(p.at("powers"), std::string(series) + " c=" + format_double(p.at("c").get<double>()));
        check_powers(doc.at("pf").at("powers"), "pf");

        const Json& hull = doc.at("hull");
        for (std::size_t i = 1; i < hull.size(); ++i)
            if (!(hull[i].at("sum_rate").get<double>() > hull[i - 1].at("sum_rate").get<double>()))
                issues.push_back("hull rates not strictly increasing at vertex " + std::to_string(i));
        for (std::size_t i = 2; i < hull.size(); ++i) {
            const double r0 = hull[i - 2].at("sum_rate").get<double>(), f0 = hull[i - 2].at("fairness_l1").get<double>();
            const double r1 = hull[i - 1].at("sum_rate").get<double>(), f1 = hull[i - 1].at("fairness_l1").get<double>();
            const double r2 = hull[i].at("sum_rate").get<double>(), f2 = hull[i].at("fairness_l1").get<double>();
            const double s01 = (f1 - f0) / (r1 - r0);
            const double s12 = (f2 - f1) / (r2 - r1);
            if (s12 > s01 + tol * std::max(1.0, std::abs(s01)))
                issues.push_back("hull not concave at vertex " + std::to_string(i - 1));
        }
        double weight = 0.0;
        for (const Json& a : doc.at("operating_point").at("mixer")) {
            const double w = a.at("weight").get<double>();
            if (!(w >= 0.0 && w <= 1.0))
                issues.push_back("mixer weight outside [0, 1]");
            weight += w;
        }
        const bool fallback = doc.at("operating_point").at("fallback_used").get<bool>();
        if (!fallback && std::abs(weight - 1.0) > tol)
            issues.push_back("mixer weights do not sum to one");
    } catch (const std::exception& e) {
        issues.push_back(std::string("malformed tradeoff document: ") + e.what());
    }
    return issues;
}

/// Problems in a sample CSV: negative powers or totals over `budget`.
inline std::vector<std::string> validate_sample(const CsvTable& table, std::size_t users, double budget,
                                                double tol = 1e-9)
{
    std::vector<std::string> issues;
    try {
        std::vector<std::size_t> cols;
        for (std::size_t i = 0; i < users; ++i)
            cols.push_back(table.column("p_" + std::to_string(i + 1)));
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            double total = 0.0;
            for (std::size_t c : cols) {
                const double v = parse_double(table.rows[r][c]);
                if (!(v >= 0.0))
                    issues.push_back("row " + std::to_string(r + 1) + ": negative power");
                total += v;
            }
            if (total > budget * (1.0 + tol) + tol)
                issues.push_back("row " + std::to_string(r + 1) + ": power exceeds budget");
        }
    } catch (const std::exception& e) {
        issues.push_back(std::string("malformed sample table: ") + e.what());
    }
    return issues;
}

/// Problems in a bound CSV: rates not increasing or the polyline not concave.
inline std::vector<std::string> validate_bound(const CsvTable& table, double tol = 1e-9)
{
    std::vector<std::string> issues;
    try {
        const std::size_t rc = table.column("avg_sum_rate");
        const std::size_t fc = table.column("bound_fairness_l1");
        std::vector<double> r, f;
        for (const auto& row : table.rows) {
            r.push_back(parse_double(row[rc]));
            f.push_back(parse_double(row[fc]));
        }
        for (std::size_t i = 1; i < r.size(); ++i)
            if (!(r[i] >= r[i - 1]))
                issues.push_back("bound rates decrease at row " + std::to_string(i + 1));
        for (std::size_t i = 2; i < r.size(); ++i) {
            if (r[i] == r[i - 1] || r[i - 1] == r[i - 2])
                continue;
            const double s01 = (f[i - 1] - f[i - 2]) / (r[i - 1] - r[i - 2]);
            const double s12 = (f[i] - f[i - 1]) / (r[i] - r[i - 1]);
            if (s12 > s01 + tol * std::max(1.0, std::abs(s01)))
                issues.push_back("bound not concave at row " + std::to_string(i));
        }
    } catch (const std::exception& e) {
        issues.push_back(std::string("malformed bound table: ") + e.what());
    }
    return issues;
}

} // namespace fairshare::io
