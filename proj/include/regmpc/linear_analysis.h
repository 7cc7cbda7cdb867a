#pragma once

#include <complex>
#include <limits>
#include <optional>
#include <vector>

#include "regmpc/models.h"

namespace regmpc {

/// Linear regulator maps π_x(w) = Πw, π_u(w) = Γw.
struct RegulatorSolution {
  MatrixXd Pi;
  MatrixXd Gamma;

  RegulatorMap Map() const { return RegulatorMap::FromMatrices(Pi, Gamma); }
};

/// Solves ΠS = AΠ + BΓ + Px, CΠ + DΓ = Py as one Kronecker-lifted system.
/// Throws ResonanceError if the lifted map is rank deficient or the
/// equations are inconsistent.
RegulatorSolution SolveRegulator(const LinearSystem& sys);

/// Residual of the regulator equations, max of both parts (Frobenius).
double RegulatorEquationResidual(const LinearSystem& sys,
                                 const RegulatorSolution& sol);

/// Rank threshold max(rows, cols) · eps · σ_max · 1e3.
double RankTolerance(Eigen::Index rows, Eigen::Index cols, double sigma_max);

/// Smallest singular value of a complex matrix, computed on its real
/// embedding [[Re, −Im], [Im, Re]], together with the rank tolerance.
std::pair<double, double> SmallestSingularValue(const Eigen::MatrixXcd& M);

/// G(λ) = [[A − λI, B], [C, D]].
Eigen::MatrixXcd RosenbrockMatrix(const LinearSystem& sys,
                                  std::complex<double> lambda);

struct NonresonanceEntry {
  int k;
  std::complex<double> lambda;
  double sigma_min;
  bool pass;
};

struct NonresonanceReport {
  int period;
  std::vector<NonresonanceEntry> entries;
  bool pass;
};

/// Rank test of G(λ_k) at λ_k = e^{2πik/T}, k = 0..T−1.
/// Throws ShapeError for non-square systems and DomainError for T < 1.
NonresonanceReport Nonresonance(const LinearSystem& sys, int T);

/// PBH test at every eigenvalue with |λ| ≥ 1.
bool PbhDetectable(const MatrixXd& A, const MatrixXd& C);
bool PbhStabilizable(const MatrixXd& A, const MatrixXd& B);

struct AugmentedPair {
  MatrixXd A_a;
  MatrixXd C_a;
  bool detectable;
};

/// Detectability of the memory-augmented pair for period T.
AugmentedPair BuildAugmentedPair(const LinearSystem& sys, int T);

enum class CertificateRole { kDetectabilityW, kStabilizabilityMetric, kIoss };

struct QuadraticCertificate {
  MatrixXd P;
  CertificateRole role;
};

/// Quadratic stage cost ℓ(x, u) = xᵀQxx x + 2 xᵀQxu u + uᵀQuu u.
struct QuadraticStageCost {
  MatrixXd Qxx, Qxu, Quu;

  /// ℓ = ‖Cx + Du‖²_Q + ‖u‖²_R.
  static QuadraticStageCost FromOutputCost(const LinearSystem& sys,
                                           const MatrixXd& Q,
                                           const MatrixXd& R);
  double Evaluate(const VectorXd& x, const VectorXd& u) const;
  QuadraticStageCost Scaled(double c) const { return {c * Qxx, c * Qxu, c * Quu}; }
};

/// Discrete algebraic Riccati equation by fixed-point iteration from P = Q
/// (tolerance 1e-12, at most 1e5 iterations). Throws NumericalError on
/// non-convergence.
QuadraticCertificate Dare(const MatrixXd& A, const MatrixXd& B,
                          const MatrixXd& Q, const MatrixXd& R);
/// Riccati equation for a stage cost with input cross term.
QuadraticCertificate Dare(const MatrixXd& A, const MatrixXd& B,
                          const QuadraticStageCost& cost);

/// u = K x minimizing ℓ(x, u) + (Ax + Bu)ᵀP(Ax + Bu).
MatrixXd LqrGain(const MatrixXd& A, const MatrixXd& B,
                 const QuadraticStageCost& cost, const MatrixXd& P);

/// ε_o = min over x ≠ 0 of min_u ℓ(x, u) / xᵀPx. Throws NumericalError if
/// the input block of ℓ is not positive definite and DomainError if P is
/// not positive definite.
double EpsilonO(const QuadraticStageCost& cost,
                const QuadraticCertificate& sigma_metric);

/// Smallest generalized eigenvalue of (M, P), P ≻ 0.
double MinGeneralizedEigenvalue(const MatrixXd& M, const MatrixXd& P);
double MaxGeneralizedEigenvalue(const MatrixXd& M, const MatrixXd& P);

struct BoundsInput {
  double gamma_s = 1.0;
  double gamma_o = 0.0;
  double epsilon_o = 1.0;
  double Ybar = std::numeric_limits<double>::infinity();
  double delta_s = std::numeric_limits<double>::infinity();
  std::optional<int> nu;
  std::optional<double> c_o;
  int N = 2;
};

struct BoundsReport {
  double gamma_s = 0, gamma_o = 0, epsilon_o = 0, gamma_Ybar = 0, Ybar = 0;
  double alpha_N = 0;
  double N_1 = 0;
  std::optional<int> nu;
  std::optional<double> c_o;
  std::optional<double> alpha_Ns;
  std::optional<double> N_Ybar_s;
};

/// Suboptimality index and sufficient horizons. With δ_s = ∞ the constant
/// γ_Ȳ equals γ_s + γ_o. ε_o = 0 yields α_N = −∞ and infinite horizons.
/// Throws DomainError for N ≤ 1 or negative constants.
BoundsReport HorizonBounds(const BoundsInput& in);

/// c_o = max σ(x_ν) / Σ_{k<ν} ℓ(x_k, u_k) over the lifted (x₀, u₀..u_{ν−1}).
/// Throws ObservabilityError if the lifted cost is not positive definite.
double ObservabilityConstant(const LinearSystem& sys,
                             const QuadraticStageCost& cost,
                             const QuadraticCertificate& sigma_metric, int nu);

/// Smallest ν ≤ nu_max with a finite c_o. Throws ObservabilityError if
/// none exists.
std::pair<int, double> SmallestObservabilityHorizon(
    const LinearSystem& sys, const QuadraticStageCost& cost,
    const QuadraticCertificate& sigma_metric, int nu_max = 10);

struct ZeroReport {
  /// Smallest k with CA^kB ≠ 0, or −1 for direct feedthrough.
  int relative_degree;
  std::vector<std::complex<double>> zeros;
  bool minimum_phase;
};

/// SISO relative degree and transmission zeros. Throws ShapeError for
/// non-SISO systems and DegenerateSystemError for a zero transfer map.
ZeroReport RelativeDegreeAndZeros(const LinearSystem& sys);

struct IossCertificate {
  QuadraticCertificate certificate;
  MatrixXd L;
  double rho_o;
  double c_o1;
  double c_o2;
};

/// Quadratic i-IOSS certificate V(e) = eᵀPe with
///   V(e⁺) − ρ_o V(e) ≤ c_o1 ‖Δu‖² + c_o2 ‖Δy‖²
/// for e⁺ = Ae + BΔu, Δy = Ce + DΔu. B and D may be empty.
/// Throws DetectabilityError if (A, C) is not detectable.
IossCertificate LinearIossCertificate(const MatrixXd& A, const MatrixXd& C,
                                      const MatrixXd& B = MatrixXd(),
                                      const MatrixXd& D = MatrixXd());

/// Solves AᵀPA − P + Q = 0 for Schur A.
MatrixXd SolveDiscreteLyapunov(const MatrixXd& A, const MatrixXd& Q);

double SpectralRadius(const MatrixXd& A);

/// u(x, w) = Γw + K(x − Πw). Throws StabilityError unless A + BK is Schur.
class RegulatorFeedback {
 public:
  RegulatorFeedback(const LinearSystem& sys, RegulatorSolution reg,
                    MatrixXd K);

  VectorXd operator()(const VectorXd& x, const VectorXd& w) const;
  const MatrixXd& K() const { return K_; }

 private:
  RegulatorSolution reg_;
  MatrixXd K_;
};

}  // namespace regmpc
