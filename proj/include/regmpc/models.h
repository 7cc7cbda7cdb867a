#pragma once

#include <functional>
#include <optional>
#include <string>
#include <tuple>
#include <utility>

#include <Eigen/Dense>

#include "regmpc/errors.h"

namespace regmpc {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-coordinate bounds lower ≤ u ≤ upper. Entries may be ±infinity.
struct InputBox {
  VectorXd lower;
  VectorXd upper;

  static InputBox Unbounded(int m);
  static InputBox Bounded(const VectorXd& lower, const VectorXd& upper);

  int size() const { return static_cast<int>(lower.size()); }
  /// True when at least one bound is finite.
  bool IsConstrained() const;
  bool Contains(const VectorXd& u, double slack = 0.0) const;
  VectorXd Project(const VectorXd& u) const;
  /// Center of the box; coordinates with an infinite bound use zero, or the
  /// finite bound when only one side is finite.
  VectorXd Midpoint() const;
  /// Throws DomainError when lower > upper somewhere.
  void Validate() const;
};

/// Partial derivatives of the discrete-time model at one point.
struct ModelJacobians {
  MatrixXd fx, fu, fw;  // f_p
  MatrixXd sw;          // s
  MatrixXd hx, hu, hw;  // h
};

/// x⁺ = A x + B u + Px w,  w⁺ = S w,  y = C x + D u − Py w.
struct LinearSystem {
  MatrixXd A, B, C, D, Px, Py, S;

  int n_p() const { return static_cast<int>(A.rows()); }
  int m() const { return static_cast<int>(B.cols()); }
  int q() const { return static_cast<int>(S.rows()); }
  int p() const { return static_cast<int>(C.rows()); }

  /// Throws ShapeError if the matrix dimensions disagree.
  void Validate() const;
  /// Zero-filled Px, Py, S with q = 0.
  static LinearSystem WithoutExosystem(const MatrixXd& A, const MatrixXd& B,
                                       const MatrixXd& C, const MatrixXd& D);
};

/// Discrete-time plant x⁺ = f_p(x, u, w), exosystem w⁺ = s(w) and error
/// output y = h(x, u, w), with an input box. Immutable after construction.
class SystemModel {
 public:
  using Dynamics = std::function<VectorXd(const VectorXd&, const VectorXd&,
                                          const VectorXd&)>;
  using Exosystem = std::function<VectorXd(const VectorXd&)>;
  using JacobianFn = std::function<ModelJacobians(
      const VectorXd&, const VectorXd&, const VectorXd&)>;

  SystemModel(std::string name, int n_p, int m, int q, int p, Dynamics f,
              Exosystem s, Dynamics h, InputBox box,
              JacobianFn jacobians = nullptr);

  static SystemModel FromLinear(const LinearSystem& sys,
                                std::optional<InputBox> box = std::nullopt,
                                std::string name = "lti");

  const std::string& name() const { return name_; }
  int n_p() const { return n_p_; }
  int m() const { return m_; }
  int q() const { return q_; }
  int p() const { return p_; }
  const InputBox& input_box() const { return box_; }

  VectorXd Step(const VectorXd& x, const VectorXd& u, const VectorXd& w) const;
  VectorXd Exo(const VectorXd& w) const;
  VectorXd Output(const VectorXd& x, const VectorXd& u,
                  const VectorXd& w) const;

  /// Analytic Jacobians when available, central differences otherwise.
  ModelJacobians Jacobians(const VectorXd& x, const VectorXd& u,
                           const VectorXd& w) const;
  bool has_analytic_jacobians() const { return static_cast<bool>(jac_); }

  /// The matrices this model was built from, if it is linear.
  const std::optional<LinearSystem>& linear() const { return linear_; }

  /// Central-difference Jacobians with step 1e-6 (1 + |z_i|).
  ModelJacobians FiniteDifferenceJacobians(const VectorXd& x,
                                           const VectorXd& u,
                                           const VectorXd& w) const;

 private:
  void CheckShape(const VectorXd& x, const VectorXd& u,
                  const VectorXd& w) const;

  std::string name_;
  int n_p_, m_, q_, p_;
  Dynamics f_;
  Exosystem s_;
  Dynamics h_;
  InputBox box_;
  JacobianFn jac_;
  std::optional<LinearSystem> linear_;
};

/// Continuous-time plant written as scale ⊙ ẋ = rhs(x, u, w).
struct ContinuousOde {
  using Rhs = SystemModel::Dynamics;
  /// Returns (d rhs/dx, d rhs/du, d rhs/dw).
  using RhsJacobian = std::function<std::tuple<MatrixXd, MatrixXd, MatrixXd>(
      const VectorXd&, const VectorXd&, const VectorXd&)>;

  int n = 0, m = 0, q = 0;
  Rhs rhs;
  VectorXd scale;  // empty means all ones
  RhsJacobian jacobian;  // optional

  /// ẋ = rhs / scale. Throws NumericalError on non-finite values.
  VectorXd Derivative(const VectorXd& x, const VectorXd& u,
                      const VectorXd& w) const;
};

/// One classical RK4 step of size dt with zero-order-hold input.
VectorXd Rk4Step(const ContinuousOde& ode, const VectorXd& x,
                 const VectorXd& u, const VectorXd& w, double dt);

/// Discretizes `ode` with `substeps` RK4 steps per sample of length dt.
/// When the ODE provides a Jacobian, the returned model propagates exact
/// RK4 sensitivities.
SystemModel Rk4Discretize(const ContinuousOde& ode, double dt,
                          SystemModel::Exosystem s, SystemModel::Dynamics h,
                          int p, InputBox box, std::string name = "rk4",
                          int substeps = 1,
                          std::function<MatrixXd(const VectorXd&)> s_jac =
                              nullptr,
                          SystemModel::JacobianFn h_jac = nullptr);

/// x⁺ = 0.5 x + u, y = x − u, no exosystem, no constraints.
SystemModel AcademicExample();
LinearSystem AcademicLinearSystem();

/// Grinding flow φ(x₂) = max{0, −0.1116 x₂² + 16.50 x₂}.
double CementPhi(double x2);
/// Classifier split α(x₂, u₂).
double CementAlpha(double x2, double u2);
ContinuousOde CementMillOde();

constexpr double kCementMillDt = 1.0 / 60.0;

/// Cement milling circuit sampled at one minute, y = (x₁ − w₁, x₃ − w₂),
/// constant reference w⁺ = w, U = [80,150]×[165,180].
SystemModel CementMill(int substeps = 1);

struct RegulatorPoint {
  VectorXd x_ref;
  VectorXd u_ref;
};

enum class RegulatorCoefficients {
  /// Steady state of the model evaluated without rounding.
  kExact,
  /// The same closed form with coefficients rounded to three digits.
  kPublished,
};

/// Closed-form regulator map of the cement mill for constant w.
/// Throws DomainError if the square-root radicand is not positive.
RegulatorPoint CementMillRegulator(
    const VectorXd& w,
    RegulatorCoefficients coefficients = RegulatorCoefficients::kExact);

/// Regulator maps (π_x, π_u). Linear systems carry matrices (Π, Γ).
struct RegulatorMap {
  std::function<VectorXd(const VectorXd&)> pi_x;
  std::function<VectorXd(const VectorXd&)> pi_u;

  static RegulatorMap FromMatrices(const MatrixXd& Pi, const MatrixXd& Gamma);
  static RegulatorMap CementMill(
      RegulatorCoefficients c = RegulatorCoefficients::kExact);
};

/// Residuals of the regulator equations at w:
/// ‖π_x(s(w)) − f_p(π_x(w), π_u(w), w)‖ and ‖h(π_x(w), π_u(w), w)‖.
std::pair<double, double> RegulatorResidual(const SystemModel& model,
                                            const RegulatorMap& reg,
                                            const VectorXd& w);

/// Parses "n_p m q p" followed by A, B, C, D, Px, Py, S in row-major order.
LinearSystem ParseLinearSystem(const std::string& text);
LinearSystem LoadLinearSystem(const std::string& path);

}  // namespace regmpc
