#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "regmpc/estimation.h"
#include "regmpc/mpc.h"

namespace regmpc {

/// Additive measurement noise η on the error output.
struct SimNoiseSpec {
  enum class Kind { kNone, kUniform };

  Kind kind = Kind::kNone;
  VectorXd lo;
  VectorXd hi;
  std::uint64_t seed = 0;

  static SimNoiseSpec None() { return {}; }
  static SimNoiseSpec Uniform(VectorXd lo, VectorXd hi, std::uint64_t seed);
  /// Throws ConfigError on size mismatch or lo > hi.
  void Validate(int p) const;
};

struct ScenarioSpec {
  explicit ScenarioSpec(SystemModel m) : model(std::move(m)) {}

  SystemModel model;
  MpcConfig mpc;
  /// Used by the input-regularized cost and by σ. Linear models fall back
  /// to the solved regulator equations when absent.
  std::optional<RegulatorMap> regulator;
  /// Absent means exact state feedback.
  std::optional<ObserverConfig> observer;
  SimNoiseSpec noise;
  VectorXd x0;
  VectorXd w0;
  int steps = 1;
  /// Optional initial input history for the memory, newest first.
  std::vector<VectorXd> history;
};

struct StepRecord {
  int t = 0;
  VectorXd x, w, u, y, ytilde;
  /// Joint state (x^p, w) handed to the controller.
  VectorXd xhat;
  /// Memory before the step; empty unless the variant is incremental.
  VectorXd memory;
  double V = 0.0;
  double sigma = 0.0;
  double stage_cost = 0.0;
  int iters = 0;
  bool converged = false;
  bool solver_failed = false;
};

struct SimTrace {
  int n_p = 0, m = 0, q = 0, p = 0;
  bool observed = false;
  std::vector<StepRecord> steps;
  bool completed = true;
  std::string failure;
};

/// Closed-loop run. The truth evolves with the model; the controller sees
/// the exact state or the observer estimate. Noise enters the measured
/// output only. A solver or model NumericalError truncates the trace.
SimTrace Run(const ScenarioSpec& spec);

/// Writes `t,x...,w...,u...,y...,xhat...,V,sigma,iters,converged` with 17
/// significant digits.
void WriteTraceCsv(const SimTrace& trace, std::ostream& out);
std::string TraceCsv(const SimTrace& trace);

struct MetricsReport {
  std::vector<double> sigma;
  std::vector<double> stage_cost_partial_sums;
  /// Σ(‖ê‖² + σ) / (σ(x₀) + ‖ê₀‖² + Σ‖η‖²).
  double l2_ratio = 0.0;
  double max_violation = 0.0;
  /// Per-step factor exp(slope) of a least-squares fit to log σ.
  double decay_rate = 0.0;
  double final_output_norm = 0.0;
  /// sup ‖y_t‖ over the second half of the run.
  double second_half_sup_output = 0.0;
};

MetricsReport ComputeMetrics(const SimTrace& trace, const InputBox& box);

/// Value V_N at a recorded state, re-solved from a cold start.
using ValueEvaluator = std::function<double(const StepRecord&)>;

ValueEvaluator MakeValueEvaluator(const SystemModel& model,
                                  const MpcConfig& config,
                                  std::optional<RegulatorMap> regulator =
                                      std::nullopt);

struct DecreaseReport {
  /// V(x_{t+1}) − V(x_t) + alpha_eps·σ(x_t) for t = 0..len−2.
  std::vector<double> margins;
  double max_margin = 0.0;
  std::vector<int> positive_steps;
};

DecreaseReport DecreaseCheck(const SimTrace& trace,
                             const ValueEvaluator& value,
                             const std::vector<double>& sigma,
                             double alpha_eps);

}  // namespace regmpc
