#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairshare/benchmark.hpp"

namespace fairshare::cli {

/// Invalid configuration or command line; maps to its own exit code.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    std::size_t users = 2;
    std::size_t antennas = 2;
    std::vector<double> power_db{0.0};
    std::vector<Criterion> criteria{kAllCriteria.begin(), kAllCriteria.end()};
    std::size_t n_blocks = 4000; // about 1% standard error on every criterion's sum rate, K = 2..8 at 0 dB
    std::size_t c_grid = 201;
    std::uint64_t master_seed = 1;
    std::string output_dir = "results";
    bool write_csv = true;
    bool write_json = true;
    std::size_t n_draws = 10000;
    std::size_t bound_points = 101;
    bool normalize_distance = false;

    void validate() const;
};

/// Values given on the command line; each set field replaces the file's.
struct Overrides {
    std::optional<std::size_t> users;
    std::optional<std::size_t> antennas;
    std::optional<std::vector<double>> power_db;
    std::optional<std::vector<std::string>> criteria;
    std::optional<std::size_t> n_blocks;
    std::optional<std::size_t> c_grid;
    std::optional<std::uint64_t> master_seed;
    std::optional<std::string> output_dir;
    std::optional<std::vector<std::string>> formats;
    std::optional<std::size_t> n_draws;
    bool normalize_distance = false;
};

/// Parses YAML text; errors name the offending line and column.
ExperimentConfig parse_config(const std::string& yaml_text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);

void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

std::vector<Criterion> parse_criteria(const std::vector<std::string>& names);

/// Ensemble settings for one power level; the seed depends on the power value only.
EnsembleConfig ensemble_config(const ExperimentConfig& config, double power_db);

} // namespace fairshare::cli
