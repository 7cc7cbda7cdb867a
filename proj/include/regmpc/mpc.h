#pragma once

#include <optional>
#include <string>
#include <vector>

#include "regmpc/augmentation.h"
#include "regmpc/models.h"

namespace regmpc {

enum class CostVariant {
  /// ‖y‖²_Q + ‖u − π_u(w)‖²_R, needs a regulator map.
  kInputRegularized,
  /// ‖y‖²_Q only.
  kOutputOnly,
  /// ‖y_k‖²_Q + ‖y_{k+d+1}‖²_Q, prediction extended by d + 1 steps.
  kLookAhead,
  /// ‖y‖²_Q + ‖u_k − u_{k−T}‖²_R with the input memory.
  kIncrementalInput,
};

const char* ToString(CostVariant v);
/// Accepts "input_regularized", "output_only", "look_ahead", "incremental".
CostVariant ParseCostVariant(const std::string& s);

struct SolverSettings {
  int max_iterations = 2000;
  double gradient_tolerance = 1e-8;
  double initial_step = 1.0;
  double shrink = 0.5;
  double sufficient_decrease = 1e-4;
  bool warm_start = true;

  /// Throws ConfigError on invalid values.
  void Validate() const;
  bool operator==(const SolverSettings&) const = default;
};

struct MpcConfig {
  CostVariant variant = CostVariant::kOutputOnly;
  int horizon = 1;
  MatrixXd Q;
  MatrixXd R;
  int look_ahead = 0;  // d, for kLookAhead
  int period = 1;      // T, for kIncrementalInput
  SolverSettings solver;

  /// Throws ConfigError unless the config fits the model.
  void Validate(const SystemModel& model) const;
};

struct OcpSolution {
  /// Applied inputs u_{0..N−1}, one row per step.
  MatrixXd u_opt;
  /// Increments u_k − u_{k−T}; only for kIncrementalInput.
  MatrixXd increments;
  /// Predicted states, one row per step. For kIncrementalInput each row is
  /// (x^p, ξ). For kLookAhead the extended prediction is included.
  MatrixXd x_pred;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  double kkt_residual = 0.0;
};

/// Predicted trajectory under a flattened input sequence.
struct Rollout {
  std::vector<VectorXd> x;       // plant states x_0..x_K
  std::vector<VectorXd> v;       // inputs applied at 0..K−1
  std::vector<VectorXd> w;       // exosystem w_0..w_K
  std::vector<VectorXd> memory;  // ξ_0..ξ_N for kIncrementalInput
};

/// Finite-horizon problem in the flattened input sequence
/// u = (u_0, …, u_{N−1}). Holds a reference to the model, which must
/// outlive the instance.
class Ocp {
 public:
  /// Throws ConfigError if a regulator map is required but absent, or if
  /// the memory is missing for kIncrementalInput.
  Ocp(const SystemModel& model, const MpcConfig& config, VectorXd x0,
      VectorXd w0, VectorXd memory = VectorXd(),
      std::optional<RegulatorMap> regulator = std::nullopt);

  int num_decisions() const { return N_ * m_; }
  int horizon() const { return N_; }
  const SystemModel& model() const { return model_; }
  const MpcConfig& config() const { return config_; }
  const InputBox& box() const { return model_.input_box(); }
  const VectorXd& x0() const { return x0_; }
  const VectorXd& memory() const { return memory_; }

  VectorXd Project(const VectorXd& u) const;
  Rollout Simulate(const VectorXd& u) const;
  /// Stacked residual r(u) with J(u) = ‖r(u)‖².
  VectorXd Residual(const VectorXd& u) const;
  double Cost(const VectorXd& u) const;
  /// Cost and exact gradient via forward rollout and backward adjoint sweep.
  std::pair<double, VectorXd> CostAndGradient(const VectorXd& u) const;
  VectorXd Gradient(const VectorXd& u) const { return CostAndGradient(u).second; }
  /// Box-projected constant sequence at `previous` or the box midpoint.
  VectorXd ColdStart(const std::optional<VectorXd>& previous) const;

  OcpSolution MakeSolution(const VectorXd& u, int iterations,
                           bool converged) const;

 private:
  // Rollout length K and per-step output weights c_k.
  int RolloutLength() const;
  double OutputWeight(int k) const;
  // Reference the input term compares u_k against, and whether that
  // reference is itself a decision variable (index k − T).
  VectorXd InputReference(const VectorXd& u, int k, const Rollout& r) const;

  const SystemModel& model_;
  MpcConfig config_;
  int N_, m_;
  VectorXd x0_, w0_, memory_;
  std::optional<RegulatorMap> regulator_;
  MatrixXd Q_sqrt_, R_sqrt_;
  std::vector<VectorXd> w_traj_;
};

/// Solves the problem. Linear models use a dense least-squares solve,
/// refined by projected gradient when the box is active. Other models use
/// projected gradient with Barzilai–Borwein steps and Armijo backtracking.
/// Throws NumericalError if the cost or gradient becomes non-finite.
OcpSolution Solve(const Ocp& ocp,
                  const std::optional<VectorXd>& warm_start = std::nullopt,
                  const std::optional<VectorXd>& previous_input = std::nullopt);

/// Projected gradient from `u0`, exposed for testing.
OcpSolution SolveProjectedGradient(const Ocp& ocp, const VectorXd& u0);

/// Dense unconstrained least-squares minimizer for linear models.
VectorXd SolveDenseLeastSquares(const Ocp& ocp);

struct StepDiagnostics {
  OcpSolution solution;
  bool solver_failed = false;
  std::string message;
};

/// Receding-horizon controller: applies the first optimal input, keeps the
/// shifted sequence as warm start and the input memory for kIncrementalInput.
/// Single-threaded; each instance owns its model.
class MpcController {
 public:
  MpcController(SystemModel model, MpcConfig config,
                std::optional<RegulatorMap> regulator = std::nullopt);

  MpcController(const MpcController&) = delete;
  MpcController& operator=(const MpcController&) = delete;

  /// Seeds the memory with an explicit input history (newest first).
  void SetHistory(const std::vector<VectorXd>& history);
  void SetMemory(const VectorXd& xi);
  /// Seeds an empty memory with the constant cold-start input (box-projected
  /// last input, else the box midpoint) and returns it. Empty for variants
  /// without memory.
  const VectorXd& EnsureMemory();
  /// Current memory, empty until seeded or until the first step.
  const VectorXd& memory() const { return memory_; }
  const SystemModel& model() const { return model_; }
  const MpcConfig& config() const { return config_; }

  /// Solves at (x, w) and returns the applied input. On solver failure the
  /// last applied input is repeated.
  VectorXd Step(const VectorXd& x, const VectorXd& w,
                StepDiagnostics* diagnostics = nullptr);

  /// Builds the problem at (x, w) with an explicit memory.
  Ocp MakeOcp(const VectorXd& x, const VectorXd& w,
              const VectorXd& memory) const;

 private:
  SystemModel model_;
  MpcConfig config_;
  std::optional<RegulatorMap> regulator_;
  std::optional<AugmentedPlant> augmented_;
  VectorXd memory_;
  std::optional<VectorXd> last_u_;
  std::optional<VectorXd> warm_;
};

}  // namespace regmpc
