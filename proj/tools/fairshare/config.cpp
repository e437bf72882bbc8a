#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace fairshare::cli {

namespace {

std::string where(const std::string& source, const YAML::Mark& mark)
{
    if (mark.is_null())
        return source;
    return source + ":" + std::to_string(mark.line + 1) + ":" + std::to_string(mark.column + 1);
}

template <class T>
T scalar(const YAML::Node& node, const std::string& key, const std::string& source)
{
    if (!node.IsScalar())
        throw ConfigError(where(source, node.Mark()) + ": '" + key + "' must be a scalar");
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError(where(source, node.Mark()) + ": invalid value '" + node.Scalar() + "' for '" + key + "'");
    }
}

std::size_t count(const YAML::Node& node, const std::string& key, const std::string& source)
{
    const std::string text = node.IsScalar() ? node.Scalar() : std::string();
    if (!text.empty() && text.front() == '-')
        throw ConfigError(where(source, node.Mark()) + ": '" + key + "' must be nonnegative");
    return scalar<std::size_t>(node, key, source);
}

std::vector<std::string> string_list(const YAML::Node& node, const std::string& key, const std::string& source)
{
    std::vector<std::string> out;
    if (node.IsScalar()) {
        out.push_back(node.Scalar());
    } else if (node.IsSequence()) {
        for (const auto& item : node)
            out.push_back(scalar<std::string>(item, key, source));
    } else {
        throw ConfigError(where(source, node.Mark()) + ": '" + key + "' must be a value or a list");
    }
    return out;
}

void set_formats(ExperimentConfig& config, const std::vector<std::string>& formats, const std::string& context)
{
    config.write_csv = false;
    config.write_json = false;
    for (const auto& f : formats) {
        if (f == "csv")
            config.write_csv = true;
        else if (f == "json")
            config.write_json = true;
        else
            throw ConfigError(context + ": unknown output format '" + f + "' (expected csv or json)");
    }
}

} // namespace

void ExperimentConfig::validate() const
{
    if (users < 1 || antennas < 1)
        throw ConfigError("K and N must be at least 1");
    if (users > antennas)
        throw ConfigError("K must not exceed N (got K=" + std::to_string(users) + ", N=" + std::to_string(antennas) + ")");
    if (power_db.empty())
        throw ConfigError("P_dB needs at least one value");
    for (double p : power_db)
        if (!std::isfinite(p))
            throw ConfigError("P_dB values must be finite");
    if (criteria.empty())
        throw ConfigError("criteria must not be empty");
    if (n_blocks < 1)
        throw ConfigError("n_blocks must be at least 1");
    if (c_grid < 2)
        throw ConfigError("c_grid must be at least 2");
    if (!write_csv && !write_json)
        throw ConfigError("output_formats must include csv or json");
    if (n_draws < 1)
        throw ConfigError("n_draws must be at least 1");
    if (bound_points < 2)
        throw ConfigError("bound_points must be at least 2");
    if (output_dir.empty())
        throw ConfigError("output_dir must not be empty");
}

std::vector<Criterion> parse_criteria(const std::vector<std::string>& names)
{
    std::vector<Criterion> out;
    std::set<Criterion> seen;
    for (const auto& n : names) {
        const auto c = parse_criterion(n);
        if (!c)
            throw ConfigError("unknown criterion '" + n + "' (expected max_sum, pf, hm, max_min or tristage)");
        if (seen.insert(*c).second)
            out.push_back(*c);
    }
    return out;
}

ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source)
{
    YAML::Node root;
    try {
        root = YAML::Load(yaml_text);
    } catch (const YAML::ParserException& e) {
        throw ConfigError(where(source, e.mark) + ": " + e.msg);
    }
    ExperimentConfig config;
    if (root.IsNull())
        return config;
    if (!root.IsMap())
        throw ConfigError(where(source, root.Mark()) + ": configuration must be a mapping");

    for (const auto& entry : root) {
        const std::string key = entry.first.as<std::string>();
        const YAML::Node& value = entry.second;
        const std::string at = where(source, value.Mark());
        if (key == "K") {
            config.users = count(value, key, source);
        } else if (key == "N") {
            config.antennas = count(value, key, source);
        } else if (key == "P_dB") {
            config.power_db.clear();
            if (value.IsSequence()) {
                for (const auto& item : value)
                    config.power_db.push_back(scalar<double>(item, key, source));
            } else {
                config.power_db.push_back(scalar<double>(value, key, source));
            }
        } else if (key == "criteria") {
            try {
                config.criteria = parse_criteria(string_list(value, key, source));
            } catch (const ConfigError& e) {
                throw ConfigError(at + ": " + e.what());
            }
        } else if (key == "n_blocks") {
            config.n_blocks = count(value, key, source);
        } else if (key == "c_grid") {
            config.c_grid = count(value, key, source);
        } else if (key == "master_seed") {
            config.master_seed = scalar<std::uint64_t>(value, key, source);
        } else if (key == "output_dir") {
            config.output_dir = scalar<std::string>(value, key, source);
        } else if (key == "output_formats") {
            set_formats(config, string_list(value, key, source), at);
        } else if (key == "n_draws") {
            config.n_draws = count(value, key, source);
        } else if (key == "bound_points") {
            config.bound_points = count(value, key, source);
        } else if (key == "normalize_distance") {
            config.normalize_distance = scalar<bool>(value, key, source);
        } else {
            throw ConfigError(where(source, entry.first.Mark()) + ": unknown key '" + key + "'");
        }
    }
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
    return config;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

void apply_overrides(ExperimentConfig& config, const Overrides& o)
{
    if (o.users)
        config.users = *o.users;
    if (o.antennas)
        config.antennas = *o.antennas;
    if (o.power_db)
        config.power_db = *o.power_db;
    if (o.criteria)
        config.criteria = parse_criteria(*o.criteria);
    if (o.n_blocks)
        config.n_blocks = *o.n_blocks;
    if (o.c_grid)
        config.c_grid = *o.c_grid;
    if (o.master_seed)
        config.master_seed = *o.master_seed;
    if (o.output_dir)
        config.output_dir = *o.output_dir;
    if (o.formats)
        set_formats(config, *o.formats, "--formats");
    if (o.n_draws)
        config.n_draws = *o.n_draws;
    if (o.normalize_distance)
        config.normalize_distance = true;
    config.validate();
}

EnsembleConfig ensemble_config(const ExperimentConfig& config, double power_db)
{
    EnsembleConfig e;
    e.users = config.users;
    e.antennas = config.antennas;
    e.power_db = power_db;
    e.n_blocks = config.n_blocks;
    e.seed = power_seed(config.master_seed, power_db);
    e.tristage.grid_size = config.c_grid;
    e.tristage.normalize_distance = config.normalize_distance;
    e.tristage.single_user = SingleUser::ReportFair;
    return e;
}

} // namespace fairshare::cli
