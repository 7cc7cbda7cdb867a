#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "regmpc/mpc.h"
#include "regmpc/simulation.h"

namespace regmpc {

struct ModelSection {
  /// "academic", "cement_mill" or "lti:<path>".
  std::string name;
  int substeps = 1;
  /// Cement mill regulator coefficients: "exact" or "published".
  std::string regulator = "exact";
  bool operator==(const ModelSection&) const = default;
};

struct MpcSection {
  std::string variant;
  int N = 0;
  /// Diagonals of Q and R; empty means Q = I and R = 0.
  std::vector<double> Q;
  std::vector<double> R;
  int d = 0;
  int T = 1;
  SolverSettings solver;
  bool operator==(const MpcSection&) const = default;
};

struct ObserverSection {
  /// "none", "luenberger" or "ekf".
  std::string kind = "none";
  /// Row-major (n_p + q) × p gain for "luenberger".
  std::vector<double> L;
  double sigma0 = 100.0;
  double qproc = 1.0;
  double rmeas = 1.0;
  std::vector<double> xhat0;
  bool operator==(const ObserverSection&) const = default;
};

struct SimSection {
  int steps = 60;
  std::vector<double> x0;
  std::vector<double> w0;
  /// "none" or "uniform".
  std::string noise = "none";
  std::vector<double> noise_lo;
  std::vector<double> noise_hi;
  std::uint64_t seed = 0;
  /// Flattened input history, newest first; empty means constant seeding.
  std::vector<double> history;
  bool operator==(const SimSection&) const = default;
};

struct AnalysisSection {
  double gamma_s = 1.0;
  double gamma_o = 0.0;
  double Ybar = std::numeric_limits<double>::infinity();
  double delta_s = std::numeric_limits<double>::infinity();
  int nu_max = 10;
  bool operator==(const AnalysisSection&) const = default;
};

/// Sectioned key = value scenario description.
struct ScenarioConfig {
  ModelSection model;
  MpcSection mpc;
  ObserverSection observer;
  SimSection sim;
  AnalysisSection analysis;

  /// Throws ConfigError with the offending line on unknown sections or
  /// keys, malformed values, duplicates and missing required keys
  /// ([model] name, [mpc] variant and N).
  static ScenarioConfig Parse(const std::string& text);
  static ScenarioConfig Load(const std::string& path);
  /// Canonical text with every key; Parse(Render()) reproduces the config.
  std::string Render() const;

  bool operator==(const ScenarioConfig&) const = default;
};

/// Resolves the model name. Relative LTI paths are taken from base_dir.
SystemModel BuildModel(const ModelSection& section,
                       const std::string& base_dir = ".");
/// Regulator map for the scenario, if one is known in closed form or
/// solvable.
std::optional<RegulatorMap> BuildRegulator(const ModelSection& section,
                                           const SystemModel& model);
MpcConfig BuildMpcConfig(const MpcSection& section, const SystemModel& model);
ScenarioSpec BuildScenario(const ScenarioConfig& config,
                           const std::string& base_dir = ".");

}  // namespace regmpc
