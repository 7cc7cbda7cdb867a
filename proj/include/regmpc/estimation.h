#pragma once

#include <variant>

#include "regmpc/models.h"

namespace regmpc {

/// Constant-gain observer on the joint state (x^p, w).
struct LuenbergerGain {
  MatrixXd L;  // (n_p + q) × p
};

/// Extended Kalman filter design matrices on the joint state.
struct EkfSettings {
  MatrixXd Sigma0;
  MatrixXd Qproc;
  MatrixXd Rmeas;

  /// Σ₀ = sigma0·I, Q = q·I, R = r·I.
  static EkfSettings Scaled(int n, int p, double sigma0, double q, double r);
};

struct ObserverConfig {
  std::variant<LuenbergerGain, EkfSettings> kind;
  VectorXd xhat0;

  bool is_ekf() const { return std::holds_alternative<EkfSettings>(kind); }
  /// Throws ConfigError on wrong sizes, Σ₀ or Q not PSD, or R not PD.
  void Validate(int n, int p) const;
};

struct ObserverState {
  VectorXd xhat;
  MatrixXd Sigma;  // empty for the Luenberger observer
};

/// Linearization of the joint model z⁺ = (f_p(x, u, w), s(w)),
/// y = h(x, u, w) with respect to z = (x, w).
struct JointJacobians {
  MatrixXd F;
  MatrixXd H;
};

JointJacobians EkfJacobians(const SystemModel& model, const VectorXd& z,
                            const VectorXd& u);

/// Joint transition and output on z = (x^p, w).
VectorXd JointStep(const SystemModel& model, const VectorXd& z,
                   const VectorXd& u);
VectorXd JointOutput(const SystemModel& model, const VectorXd& z,
                     const VectorXd& u);

/// One step of the predictor-form observer
///   ẑ⁺ = f(ẑ, u) + L_t (ỹ − h(ẑ, u)).
/// The EKF uses L_t = F Σ Hᵀ (H Σ Hᵀ + R)⁻¹, a Joseph-form measurement
/// update and Σ⁺ = F Σ_upd Fᵀ + Q. Throws NumericalError if the innovation
/// covariance is singular or y is not finite.
ObserverState ObserverStep(const SystemModel& model,
                           const ObserverConfig& config,
                           const ObserverState& state, const VectorXd& u,
                           const VectorXd& y_measured);

ObserverState InitialObserverState(const ObserverConfig& config);

/// PBH detectability of ([[A, Px], [0, S]], [C, −Py]).
bool JointDetectable(const LinearSystem& sys);

}  // namespace regmpc
