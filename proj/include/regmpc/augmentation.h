#pragma once

#include <vector>

#include "regmpc/models.h"

namespace regmpc {

/// Block matrices of the T-step input memory ξ = (u_{t−1}, …, u_{t−T}).
///   E0: block cyclic permutation (mT × mT), E0^T = I.
///   E1: selects the newest slot, E2: selects the oldest slot (mT × m).
struct MemoryMatrices {
  MatrixXd E0, E1, E2;
};

MemoryMatrices BuildMemoryMatrices(int m, int T);

/// Plant extended with the input memory. The new input is the increment
/// u^a = u − u_{t−T}; the applied input is E2ᵀξ + u^a.
class AugmentedPlant {
 public:
  /// Throws DomainError if T < 1.
  static AugmentedPlant Build(const SystemModel& base, int T);

  const SystemModel& base() const { return base_; }
  /// The augmented model on (x^p, ξ) with unconstrained input u^a.
  const SystemModel& model() const { return model_; }
  int period() const { return T_; }
  int m() const { return base_.m(); }
  int memory_size() const { return base_.m() * T_; }
  const MatrixXd& E0() const { return mats_.E0; }
  const MatrixXd& E1() const { return mats_.E1; }
  const MatrixXd& E2() const { return mats_.E2; }

  /// Stacks the last T applied inputs, newest first. Throws ShapeError on a
  /// wrong history length or input size.
  VectorXd WrapMemory(const std::vector<VectorXd>& history) const;
  /// Memory holding the same input in every slot.
  VectorXd ConstantMemory(const VectorXd& u) const;
  /// Shifts the window: u enters the newest slot, the oldest drops out.
  VectorXd StepMemory(const VectorXd& xi, const VectorXd& u_applied) const;
  /// u_{t−T}, the oldest stored input.
  VectorXd Oldest(const VectorXd& xi) const;
  VectorXd Increment(const VectorXd& xi, const VectorXd& u_applied) const;
  VectorXd AppliedInput(const VectorXd& xi, const VectorXd& u_a) const;

  /// Lifted constraint: the applied input E2ᵀξ + u^a lies in the base box.
  bool SatisfiesConstraints(const VectorXd& xi, const VectorXd& u_a,
                            double slack = 0.0) const;

  VectorXd Join(const VectorXd& x_p, const VectorXd& xi) const;
  VectorXd PlantPart(const VectorXd& x_ap) const;
  VectorXd MemoryPart(const VectorXd& x_ap) const;

 private:
  AugmentedPlant(SystemModel base, int T, MemoryMatrices mats,
                 SystemModel model);

  SystemModel base_;
  int T_;
  MemoryMatrices mats_;
  SystemModel model_;
};

/// A_a = [[A, B E2ᵀ], [0, E0]], B_a = [B; E1], C_a = [C, D E2ᵀ], D_a = D.
LinearSystem AugmentLinear(const LinearSystem& sys, int T);

/// Π_a with π^a_x(w) = (Πw, Γ S^{T−1} w, …, Γ w); π^a_u = 0.
MatrixXd AugmentedRegulatorPi(const LinearSystem& sys, const MatrixXd& Pi,
                              const MatrixXd& Gamma, int T);

}  // namespace regmpc
