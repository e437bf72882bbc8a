#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "config.hpp"

namespace fairshare::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kConfigError = 2,
    kInfeasible = 3,
};

/// Files written by a command, relative to the run directory.
struct RunOutput {
    std::filesystem::path directory;
    std::vector<std::string> files;
};

/// One seeded channel draw: raw sweep, envelope, pf pair and selected point.
RunOutput cmd_tradeoff(const ExperimentConfig& config);

/// Ensemble means of every criterion plus the rate-split bound, per power level.
RunOutput cmd_compare(const ExperimentConfig& config);

/// Per-draw allocations of the statistical strategy with running means.
RunOutput cmd_sample(const ExperimentConfig& config);

/// Full command line entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace fairshare::cli
