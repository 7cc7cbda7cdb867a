#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "regmpc/config.h"

namespace regmpc {

enum ExitCode { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2 };

/// Key = value report of the linear certificates and horizon bounds. For a
/// nonlinear model the linearization at the regulator point is analyzed.
std::string AnalyzeReport(const ScenarioConfig& config,
                          const std::string& base_dir = ".");

/// Solves one problem at the configured initial state.
std::string SolveReport(const ScenarioConfig& config,
                        const std::string& base_dir = ".");

/// Parses "7", "0-9" or "1,4,5" into a seed list.
std::vector<std::uint64_t> ParseSeedList(const std::string& text);

/// Writes `contents` to a temporary file next to `path` and renames it.
void WriteFileAtomically(const std::string& path, const std::string& contents);

/// Subcommands analyze, solve and simulate with --config, --out, --seed,
/// --jobs and --verbose. REGFREE_MPC_SEED is the seed fallback. Returns
/// 0 on success, 1 on config or path errors and 2 on numerical failure.
int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err);

}  // namespace regmpc
