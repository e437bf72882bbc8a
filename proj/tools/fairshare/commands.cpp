#include "commands.hpp"

#include <cmath>
#include <exception>
#include <ostream>
#include <system_error>
#include <unistd.h>

#include <CLI11.hpp>

#include "fairshare/io.hpp"

namespace fairshare::cli {

namespace fs = std::filesystem;
using io::Json;

namespace {

std::string power_tag(double power_db) { return "P" + io::format_double(power_db) + "dB"; }

std::string system_tag(const ExperimentConfig& c)
{
    return "K" + std::to_string(c.users) + "_N" + std::to_string(c.antennas);
}

/// Writes into a hidden staging directory that is renamed into place on commit.
class StagedRun {
public:
    StagedRun(const fs::path& root, const std::string& name) : final_(root / name)
    {
        fs::create_directories(root);
        staging_ = root / ("." + name + ".tmp-" + std::to_string(::getpid()));
        fs::remove_all(staging_);
        fs::create_directory(staging_);
    }

    StagedRun(const StagedRun&) = delete;
    StagedRun& operator=(const StagedRun&) = delete;

    ~StagedRun()
    {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    fs::path staged(const std::string& file) const { return staging_ / file; }

    void write(const std::string& file, std::string_view content)
    {
        io::write_file(staged(file).string(), content);
        files_.push_back(file);
    }

    RunOutput commit()
    {
        const fs::path old = final_.parent_path() / ("." + final_.filename().string() + ".old-" + std::to_string(::getpid()));
        const bool replace = fs::exists(final_);
        if (replace)
            fs::rename(final_, old);
        fs::rename(staging_, final_);
        committed_ = true;
        if (replace)
            fs::remove_all(old);
        return {final_, files_};
    }

private:
    fs::path final_;
    fs::path staging_;
    std::vector<std::string> files_;
    bool committed_ = false;
};

void require_clean(const std::vector<std::string>& issues, const std::string& what)
{
    if (issues.empty())
        return;
    std::string msg = "read-back validation of " + what + " failed:";
    for (const auto& i : issues)
        msg += "\n  " + i;
    throw Error(msg);
}

double single_power(const ExperimentConfig& config, const char* verb)
{
    if (config.power_db.size() != 1)
        throw ConfigError(std::string(verb) + " needs exactly one P_dB value");
    return config.power_db.front();
}

struct MixtureMoments {
    double sd_sum_rate = 0.0;
    double sd_fairness = 0.0;
};

MixtureMoments moments(const OperatingPoint& op, const TradeoffCurve& curve)
{
    MixtureMoments m;
    if (op.fallback_used)
        return m;
    double vr = 0.0, vf = 0.0;
    for (const MixAtom& a : op.mixer.atoms) {
        const CakeCutPoint& p = curve.grid()[a.grid_index];
        vr += a.weight * (p.sum_rate - op.sum_rate) * (p.sum_rate - op.sum_rate);
        vf += a.weight * (p.fairness - op.fairness) * (p.fairness - op.fairness);
    }
    m.sd_sum_rate = std::sqrt(vr);
    m.sd_fairness = std::sqrt(vf);
    return m;
}

} // namespace

RunOutput cmd_tradeoff(const ExperimentConfig& config)
{
    config.validate();
    const double power_db = single_power(config, "tradeoff");
    const EnsembleConfig ens = ensemble_config(config, power_db);
    const BlockDraw draw = draw_block(ens, 0);

    io::TradeoffRecord rec;
    rec.users = config.users;
    rec.antennas = config.antennas;
    rec.power_db = power_db;
    rec.seed = config.master_seed;
    rec.grid_size = config.c_grid;
    rec.channel = draw.channel;
    rec.gains = draw.decomposition.gains;
    rec.outcome = run_tristage(rec.gains, db_to_linear(power_db), ens.tristage);
    const Json doc = io::tradeoff_to_json(rec);

    const std::string stem = "tradeoff_" + system_tag(config) + "_" + power_tag(power_db) + "_seed" +
                             std::to_string(config.master_seed);
    StagedRun run(config.output_dir, stem);
    if (config.write_json) {
        run.write(stem + ".json", io::dump(doc));
        require_clean(io::validate_tradeoff(Json::parse(io::read_file(run.staged(stem + ".json").string()))),
                      stem + ".json");
    } else {
        require_clean(io::validate_tradeoff(doc), stem);
    }
    if (config.write_csv) {
        run.write(stem + "_curve.csv", io::to_csv(io::tradeoff_curve_csv(rec.outcome.curve)));
        run.write(stem + "_hull.csv", io::to_csv(io::hull_csv(rec.outcome.curve)));
        const io::CsvTable curve = io::parse_csv(io::read_file(run.staged(stem + "_curve.csv").string()));
        if (curve.rows.size() != config.c_grid)
            throw Error("read-back: curve CSV has " + std::to_string(curve.rows.size()) + " rows, expected " +
                        std::to_string(config.c_grid));
        require_clean(io::validate_sample(curve, config.users, db_to_linear(power_db)), stem + "_curve.csv");
    }
    return run.commit();
}

RunOutput cmd_compare(const ExperimentConfig& config)
{
    config.validate();
    const std::string run_name = "compare_" + system_tag(config) + "_n" + std::to_string(config.n_blocks) + "_seed" +
                                 std::to_string(config.master_seed);
    StagedRun run(config.output_dir, run_name);
    for (double power_db : config.power_db) {
        const EnsembleConfig ens = ensemble_config(config, power_db);
        const EnsembleBatch batch = run_ensembles(ens, config.criteria, true);
        const RateSplitFrontier frontier(batch.envelopes);
        const UpperBoundCurve bound = rate_split_curve(frontier, config.bound_points);
        std::optional<DominanceReport> dominance;
        for (const auto& r : batch.results)
            if (r.criterion == Criterion::Tristage)
                dominance = bound_dominance_report(r, frontier);

        const std::string stem = "compare_" + system_tag(config) + "_" + power_tag(power_db) + "_n" +
                                 std::to_string(config.n_blocks) + "_seed" + std::to_string(config.master_seed);
        if (config.write_csv) {
            run.write(stem + ".csv", io::to_csv(io::compare_csv(batch.results)));
            run.write(stem + "_bound.csv", io::to_csv(io::bound_csv(bound)));
            require_clean(io::validate_bound(io::parse_csv(io::read_file(run.staged(stem + "_bound.csv").string()))),
                          stem + "_bound.csv");
        }
        if (config.write_json) {
            Json results = Json::array();
            for (const auto& r : batch.results)
                results.push_back(io::ensemble_to_json(r));
            Json doc{{"schema_version", io::kSchemaVersion},
                     {"kind", "compare"},
                     {"K", config.users},
                     {"N", config.antennas},
                     {"P_dB", power_db},
                     {"n_blocks", config.n_blocks},
                     {"master_seed", config.master_seed},
                     {"ensemble_seed", ens.seed},
                     {"c_grid", config.c_grid},
                     {"results", std::move(results)},
                     {"bound", io::bound_to_json(bound)},
                     {"dominance", dominance ? io::dominance_to_json(*dominance) : Json(nullptr)}};
            run.write(stem + ".json", io::dump(doc));
        }
    }
    return run.commit();
}

RunOutput cmd_sample(const ExperimentConfig& config)
{
    config.validate();
    const double power_db = single_power(config, "sample");
    const EnsembleConfig ens = ensemble_config(config, power_db);
    const BlockDraw draw = draw_block(ens, 0);
    const double budget = db_to_linear(power_db);
    const TristageOutcome out = run_tristage(draw.decomposition.gains, budget, ens.tristage);
    const std::uint64_t sample_seed = derive_seed(ens.seed, {0x73616d706c65ULL});
    const std::vector<AllocationDraw> draws = sample_allocation(out.op, out.curve, budget, config.n_draws, sample_seed);

    const io::CsvTable table = io::sample_csv(draws, config.users);
    const double n = static_cast<double>(draws.size());
    const double final_r = io::parse_double(table.rows.back()[table.column("running_sum_rate")]);
    const double final_f = io::parse_double(table.rows.back()[table.column("running_fairness_l1")]);
    const MixtureMoments mom = moments(out.op, out.curve);
    const double tol_r = 3.0 * mom.sd_sum_rate / std::sqrt(n);
    const double tol_f = 3.0 * mom.sd_fairness / std::sqrt(n);
    const double slack = 1e-12;

    const std::string stem = "sample_" + system_tag(config) + "_" + power_tag(power_db) + "_draws" +
                             std::to_string(config.n_draws) + "_seed" + std::to_string(config.master_seed);
    StagedRun run(config.output_dir, stem);
    if (config.write_csv) {
        run.write(stem + ".csv", io::to_csv(table));
        require_clean(io::validate_sample(io::parse_csv(io::read_file(run.staged(stem + ".csv").string())),
                                          config.users, budget),
                      stem + ".csv");
    } else {
        require_clean(io::validate_sample(table, config.users, budget), stem);
    }
    if (config.write_json) {
        Json doc{{"schema_version", io::kSchemaVersion},
                 {"kind", "sample"},
                 {"K", config.users},
                 {"N", config.antennas},
                 {"P_dB", power_db},
                 {"master_seed", config.master_seed},
                 {"sample_seed", sample_seed},
                 {"n_draws", config.n_draws},
                 {"fallback_used", out.op.fallback_used},
                 {"mixer", io::mixture_to_json(out.curve, out.op.mixer)},
                 {"target", Json{{"sum_rate", out.op.sum_rate}, {"fairness_l1", out.op.fairness}}},
                 {"empirical", Json{{"sum_rate", final_r}, {"fairness_l1", final_f}}},
                 {"three_sigma", Json{{"sum_rate", tol_r}, {"fairness_l1", tol_f}}},
                 {"within_three_sigma",
                  std::abs(final_r - out.op.sum_rate) <= tol_r + slack * std::max(1.0, std::abs(out.op.sum_rate)) &&
                      std::abs(final_f - out.op.fairness) <= tol_f + slack}};
        run.write(stem + ".json", io::dump(doc));
    }
    return run.commit();
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Sum-rate / fairness tradeoff experiments for the ZFDPC MISO broadcast channel", "fairshare"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides ov;
    std::uint64_t seed = 0;
    std::size_t grid = 0, blocks = 0, users = 0, antennas = 0, draws = 0;
    std::string out_dir;
    std::vector<double> powers;
    std::vector<std::string> criteria, formats;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "YAML experiment configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "master seed (u64)");
        sub->add_option("--out", out_dir, "output root directory");
        sub->add_option("--grid", grid, "number of cake-cut grid points")->check(CLI::PositiveNumber);
        sub->add_option("--power-db", powers, "comma-separated transmit powers in dB")->delimiter(',');
        sub->add_option("--users", users, "number of users K")->check(CLI::PositiveNumber);
        sub->add_option("--antennas", antennas, "number of transmit antennas N")->check(CLI::PositiveNumber);
        sub->add_option("--formats", formats, "output formats: csv, json")->delimiter(',');
        sub->add_flag("--normalize-distance", ov.normalize_distance, "divide rates by the envelope maximum when selecting");
    };

    CLI::App* tradeoff = app.add_subcommand("tradeoff", "tradeoff geometry of one channel draw");
    CLI::App* compare = app.add_subcommand("compare", "ensemble comparison of criteria with the rate-split bound");
    CLI::App* sample = app.add_subcommand("sample", "draws of the statistical power allocation");
    for (CLI::App* sub : {tradeoff, compare, sample})
        add_common(sub);
    compare->add_option("--blocks", blocks, "channel blocks per ensemble")->check(CLI::PositiveNumber);
    compare->add_option("--criteria", criteria, "comma-separated criteria")->delimiter(',');
    sample->add_option("--draws", draws, "number of sampled allocations")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigError;
    }

    CLI::App* chosen = app.get_subcommands().front();
    auto given = [&](const char* name) { return chosen->count(name) > 0; };
    if (given("--seed"))
        ov.master_seed = seed;
    if (given("--out"))
        ov.output_dir = out_dir;
    if (given("--grid"))
        ov.c_grid = grid;
    if (given("--power-db"))
        ov.power_db = powers;
    if (given("--users"))
        ov.users = users;
    if (given("--antennas"))
        ov.antennas = antennas;
    if (given("--formats"))
        ov.formats = formats;
    if (chosen == compare && given("--blocks"))
        ov.n_blocks = blocks;
    if (chosen == compare && given("--criteria"))
        ov.criteria = criteria;
    if (chosen == sample && given("--draws"))
        ov.n_draws = draws;

    try {
        ExperimentConfig config = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
        apply_overrides(config, ov);
        RunOutput result;
        if (chosen == tradeoff)
            result = cmd_tradeoff(config);
        else if (chosen == compare)
            result = cmd_compare(config);
        else
            result = cmd_sample(config);
        for (const auto& f : result.files)
            out << (result.directory / f).string() << "\n";
        return kOk;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const InfeasibleFairness& e) {
        err << "infeasible: " << e.what() << "\n";
        return kInfeasible;
    } catch (const InfeasibleTarget& e) {
        err << "infeasible: " << e.what() << "\n";
        return kInfeasible;
    } catch (const DimensionError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
}

} // namespace fairshare::cli
