#include "regmpc/linear_analysis.h"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "regmpc/augmentation.h"

namespace regmpc {
namespace {

using Eigen::MatrixXcd;
using cd = std::complex<double>;

constexpr double kUnitCircleSlack = 1e-9;

MatrixXd RealEmbedding(const MatrixXcd& M) {
  const auto r = M.rows(), c = M.cols();
  MatrixXd E(2 * r, 2 * c);
  E << M.real(), -M.imag(), M.imag(), M.real();
  return E;
}

// Smallest singular value counting only min(rows, cols) values of the
// complex matrix, so that a wide or tall matrix reports its rank gap.
std::pair<double, double> SigmaMinAndTol(const MatrixXcd& M) {
  if (M.size() == 0) return {0.0, 0.0};
  const VectorXd sv = Eigen::BDCSVD<MatrixXd>(RealEmbedding(M)).singularValues();
  // Each complex singular value appears twice in the embedding.
  const Eigen::Index k = std::min(M.rows(), M.cols());
  const double smin = sv(2 * k - 1);
  return {smin, RankTolerance(M.rows(), M.cols(), sv(0))};
}

bool PbhFullRank(const MatrixXd& A, const MatrixXd& X, bool stack_rows) {
  const auto n = A.rows();
  if (A.cols() != n) throw ShapeError("PBH test requires a square A");
  if (n == 0) return true;
  const Eigen::VectorXcd eig = Eigen::EigenSolver<MatrixXd>(A, false).eigenvalues();
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    const cd lambda = eig(i);
    if (std::abs(lambda) < 1.0 - kUnitCircleSlack) continue;
    const MatrixXcd shifted =
        A.cast<cd>() - lambda * MatrixXcd::Identity(n, n);
    MatrixXcd M;
    if (stack_rows) {
      M.resize(n + X.rows(), n);
      M << shifted, X.cast<cd>();
    } else {
      M.resize(n, n + X.cols());
      M << shifted, X.cast<cd>();
    }
    const auto [smin, tol] = SigmaMinAndTol(M);
    if (!(smin > tol)) return false;
  }
  return true;
}

MatrixXd Symmetrize(const MatrixXd& P) { return 0.5 * (P + P.transpose()); }

}  // namespace

double RankTolerance(Eigen::Index rows, Eigen::Index cols, double sigma_max) {
  return static_cast<double>(std::max(rows, cols)) *
         std::numeric_limits<double>::epsilon() * sigma_max * 1e3;
}

std::pair<double, double> SmallestSingularValue(const MatrixXcd& M) {
  return SigmaMinAndTol(M);
}

MatrixXcd RosenbrockMatrix(const LinearSystem& sys, cd lambda) {
  sys.Validate();
  const int n = sys.n_p(), m = sys.m(), p = sys.p();
  MatrixXcd G(n + p, n + m);
  G.topLeftCorner(n, n) = sys.A.cast<cd>() - lambda * MatrixXcd::Identity(n, n);
  G.topRightCorner(n, m) = sys.B.cast<cd>();
  G.bottomLeftCorner(p, n) = sys.C.cast<cd>();
  G.bottomRightCorner(p, m) = sys.D.cast<cd>();
  return G;
}

RegulatorSolution SolveRegulator(const LinearSystem& sys) {
  sys.Validate();
  const int n = sys.n_p(), m = sys.m(), p = sys.p(), q = sys.q();
  if (q == 0) return {MatrixXd::Zero(n, 0), MatrixXd::Zero(m, 0)};
  const MatrixXd In = MatrixXd::Identity(n, n);
  const MatrixXd Iq = MatrixXd::Identity(q, q);
  auto kron = [](const MatrixXd& X, const MatrixXd& Y) {
    MatrixXd K(X.rows() * Y.rows(), X.cols() * Y.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.cols(); ++j)
        K.block(i * Y.rows(), j * Y.cols(), Y.rows(), Y.cols()) = X(i, j) * Y;
    return K;
  };
  MatrixXd M(n * q + p * q, n * q + m * q);
  M.topLeftCorner(n * q, n * q) = kron(sys.S.transpose(), In) - kron(Iq, sys.A);
  M.topRightCorner(n * q, m * q) = -kron(Iq, sys.B);
  M.bottomLeftCorner(p * q, n * q) = kron(Iq, sys.C);
  M.bottomRightCorner(p * q, m * q) = kron(Iq, sys.D);
  VectorXd rhs(n * q + p * q);
  rhs << sys.Px.reshaped(), sys.Py.reshaped();

  auto closest_eigenvalue = [&]() {
    const Eigen::VectorXcd eig =
        Eigen::EigenSolver<MatrixXd>(sys.S, false).eigenvalues();
    cd best = eig(0);
    double best_sigma = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < eig.size(); ++i) {
      const double s = SigmaMinAndTol(RosenbrockMatrix(sys, eig(i))).first;
      if (s < best_sigma) {
        best_sigma = s;
        best = eig(i);
      }
    }
    return best;
  };

  Eigen::BDCSVD<MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double tol = RankTolerance(M.rows(), M.cols(), sv(0));
  if (M.rows() < M.cols() || !(sv(sv.size() - 1) > tol)) {
    throw ResonanceError(
        "regulator equations are not uniquely solvable (resonance)",
        closest_eigenvalue());
  }
  const VectorXd sol = svd.solve(rhs);
  const double res = (M * sol - rhs).norm();
  if (res > 1e-8 * std::max({1.0, rhs.norm(), sv(0) * sol.norm()})) {
    throw ResonanceError("regulator equations are inconsistent",
                         closest_eigenvalue());
  }
  RegulatorSolution out;
  out.Pi = sol.head(n * q).reshaped(n, q);
  out.Gamma = sol.tail(m * q).reshaped(m, q);
  return out;
}

double RegulatorEquationResidual(const LinearSystem& sys,
                                 const RegulatorSolution& sol) {
  if (sys.q() == 0) return 0.0;
  const double r1 = (sol.Pi * sys.S - sys.A * sol.Pi - sys.B * sol.Gamma -
                     sys.Px).norm();
  const double r2 = (sys.C * sol.Pi + sys.D * sol.Gamma - sys.Py).norm();
  return std::max(r1, r2);
}

NonresonanceReport Nonresonance(const LinearSystem& sys, int T) {
  sys.Validate();
  if (sys.m() != sys.p()) {
    throw ShapeError("nonresonance test requires a square system (m = p)");
  }
  if (T < 1) throw DomainError("period T must be at least 1");
  NonresonanceReport report{T, {}, true};
  for (int k = 0; k < T; ++k) {
    const cd lambda = std::polar(1.0, 2.0 * M_PI * k / T);
    const auto [smin, tol] = SigmaMinAndTol(RosenbrockMatrix(sys, lambda));
    const bool pass = smin > tol;
    report.entries.push_back({k, lambda, smin, pass});
    report.pass = report.pass && pass;
  }
  return report;
}

bool PbhDetectable(const MatrixXd& A, const MatrixXd& C) {
  if (C.cols() != A.rows()) throw ShapeError("C must have as many columns as A");
  return PbhFullRank(A, C, true);
}

bool PbhStabilizable(const MatrixXd& A, const MatrixXd& B) {
  if (B.rows() != A.rows()) throw ShapeError("B must have as many rows as A");
  return PbhFullRank(A, B, false);
}

AugmentedPair BuildAugmentedPair(const LinearSystem& sys, int T) {
  if (sys.m() != sys.p()) {
    throw ShapeError("augmented pair requires a square system (m = p)");
  }
  const LinearSystem a = AugmentLinear(sys, T);
  return {a.A, a.C, PbhDetectable(a.A, a.C)};
}

QuadraticStageCost QuadraticStageCost::FromOutputCost(const LinearSystem& sys,
                                                      const MatrixXd& Q,
                                                      const MatrixXd& R) {
  sys.Validate();
  if (Q.rows() != sys.p() || Q.cols() != sys.p()) throw ShapeError("Q must be p x p");
  if (R.rows() != sys.m() || R.cols() != sys.m()) throw ShapeError("R must be m x m");
  return {sys.C.transpose() * Q * sys.C, sys.C.transpose() * Q * sys.D,
          sys.D.transpose() * Q * sys.D + R};
}

double QuadraticStageCost::Evaluate(const VectorXd& x,
                                    const VectorXd& u) const {
  return x.dot(Qxx * x) + 2.0 * x.dot(Qxu * u) + u.dot(Quu * u);
}

QuadraticCertificate Dare(const MatrixXd& A, const MatrixXd& B,
                          const MatrixXd& Q, const MatrixXd& R) {
  return Dare(A, B, QuadraticStageCost{Q, MatrixXd::Zero(A.rows(), B.cols()), R});
}

QuadraticCertificate Dare(const MatrixXd& A, const MatrixXd& B,
                          const QuadraticStageCost& cost) {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || cost.Qxx.rows() != n ||
      cost.Qxu.rows() != n || cost.Qxu.cols() != B.cols() ||
      cost.Quu.rows() != B.cols()) {
    throw ShapeError("inconsistent Riccati dimensions");
  }
  constexpr int kMaxIterations = 100000;
  constexpr double kTol = 1e-12;
  MatrixXd P = Symmetrize(cost.Qxx);
  for (int it = 0; it < kMaxIterations; ++it) {
    MatrixXd next = cost.Qxx + A.transpose() * P * A;
    if (B.cols() > 0) {
      const MatrixXd G = A.transpose() * P * B + cost.Qxu;
      const MatrixXd H = cost.Quu + B.transpose() * P * B;
      Eigen::LDLT<MatrixXd> ldlt(H);
      if (ldlt.info() != Eigen::Success) {
        throw NumericalError("Riccati iteration: singular input weight");
      }
      next -= G * ldlt.solve(G.transpose());
    }
    next = Symmetrize(next);
    if (!next.allFinite()) {
      throw NumericalError("Riccati iteration diverged");
    }
    // Max-norm: the Frobenius norm overflows long before the entries do.
    const double delta = (next - P).cwiseAbs().maxCoeff();
    P = std::move(next);
    const double size = P.cwiseAbs().maxCoeff();
    if (!std::isfinite(delta) || !std::isfinite(size)) {
      throw NumericalError("Riccati iteration diverged");
    }
    if (delta <= kTol * std::max(1.0, size)) {
      return {P, CertificateRole::kStabilizabilityMetric};
    }
  }
  throw NumericalError("Riccati iteration did not converge");
}

MatrixXd LqrGain(const MatrixXd& A, const MatrixXd& B,
                 const QuadraticStageCost& cost, const MatrixXd& P) {
  const MatrixXd H = cost.Quu + B.transpose() * P * B;
  const MatrixXd G = B.transpose() * P * A + cost.Qxu.transpose();
  return -H.ldlt().solve(G);
}

namespace {

VectorXd GeneralizedEigenvalues(const MatrixXd& M, const MatrixXd& P) {
  if (M.rows() != P.rows() || M.cols() != P.cols() || P.rows() != P.cols()) {
    throw ShapeError("generalized eigenvalue forms differ in size");
  }
  Eigen::LLT<MatrixXd> llt(Symmetrize(P));
  const double scale = std::max(1.0, P.norm());
  if (llt.info() != Eigen::Success ||
      llt.matrixL().toDenseMatrix().diagonal().minCoeff() <=
          1e-12 * std::sqrt(scale)) {
    throw DomainError("metric is not positive definite");
  }
  const MatrixXd Linv = llt.matrixL().solve(MatrixXd::Identity(P.rows(), P.rows()));
  const MatrixXd W = Symmetrize(Linv * Symmetrize(M) * Linv.transpose());
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(W, Eigen::EigenvaluesOnly)
      .eigenvalues();
}

}  // namespace

double MinGeneralizedEigenvalue(const MatrixXd& M, const MatrixXd& P) {
  const VectorXd ev = GeneralizedEigenvalues(M, P);
  return ev.size() ? ev.minCoeff() : 0.0;
}

double MaxGeneralizedEigenvalue(const MatrixXd& M, const MatrixXd& P) {
  const VectorXd ev = GeneralizedEigenvalues(M, P);
  return ev.size() ? ev.maxCoeff() : 0.0;
}

double EpsilonO(const QuadraticStageCost& cost,
                const QuadraticCertificate& sigma_metric) {
  MatrixXd schur = cost.Qxx;
  if (cost.Quu.size() > 0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(Symmetrize(cost.Quu));
    const VectorXd ev = es.eigenvalues();
    if (ev.minCoeff() <= 1e-12 * std::max(1.0, ev.maxCoeff())) {
      throw NumericalError("stage cost input block is not positive definite");
    }
    schur -= cost.Qxu * es.operatorInverseSqrt() * es.operatorInverseSqrt() *
             cost.Qxu.transpose();
  }
  // Rounding can leave an exactly singular Schur complement slightly
  // negative; the minimum of a nonnegative cost is clipped at zero.
  return std::max(0.0, MinGeneralizedEigenvalue(schur, sigma_metric.P));
}

BoundsReport HorizonBounds(const BoundsInput& in) {
  if (in.N <= 1) throw DomainError("horizon N must be at least 2");
  if (in.gamma_s < 0 || in.gamma_o < 0 || in.epsilon_o < 0 || in.Ybar < 0 ||
      in.delta_s < 0) {
    throw DomainError("bound constants must be nonnegative");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  BoundsReport r;
  r.gamma_s = in.gamma_s;
  r.gamma_o = in.gamma_o;
  r.epsilon_o = in.epsilon_o;
  r.Ybar = in.Ybar;
  const double ratio = std::isinf(in.delta_s) ? 0.0 : in.Ybar / in.delta_s;
  r.gamma_Ybar = std::max(in.gamma_s + in.gamma_o, ratio);
  const double num = in.gamma_s * r.gamma_Ybar;
  const double eps2 = in.epsilon_o * in.epsilon_o;
  if (eps2 > 0.0) {
    r.alpha_N = 1.0 - num / (eps2 * (in.N - 1));
    r.N_1 = 1.0 + num / eps2;
  } else {
    r.alpha_N = num > 0.0 ? -kInf : 1.0;
    r.N_1 = num > 0.0 ? kInf : 1.0;
  }
  if (in.nu && in.c_o) {
    const int nu = *in.nu;
    const double c_o = *in.c_o;
    if (nu < 1 || !(c_o > 0.0)) {
      throw DomainError("observability constants need nu >= 1 and c_o > 0");
    }
    r.nu = nu;
    r.c_o = c_o;
    const double g = std::max(in.gamma_s, ratio);
    const double gc = g * c_o;
    const double base = gc / (gc + 1.0);
    const int N_nu = static_cast<int>(std::floor(
        static_cast<double>(in.N - nu) / static_cast<double>(nu)));
    const double lead = in.epsilon_o > 0.0 ? g * in.gamma_s * c_o / in.epsilon_o
                                           : kInf;
    r.alpha_Ns = 1.0 - lead * std::pow(base, N_nu);
    double log_term = std::log(lead);
    if (!std::isinf(in.delta_s) && in.Ybar > 0.0) {
      log_term = std::max(log_term, std::log(c_o * in.Ybar / in.delta_s));
    }
    const double denom = std::log(gc + 1.0) - std::log(gc);
    r.N_Ybar_s = nu * log_term / denom + nu;
  }
  return r;
}

double ObservabilityConstant(const LinearSystem& sys,
                             const QuadraticStageCost& cost,
                             const QuadraticCertificate& sigma_metric,
                             int nu) {
  if (nu < 1) throw DomainError("observability horizon must be at least 1");
  const int n = sys.n_p(), m = sys.m();
  const int dim = n + nu * m;
  MatrixXd H(n + m, n + m);
  H << cost.Qxx, cost.Qxu, cost.Qxu.transpose(), cost.Quu;
  MatrixXd Phi = MatrixXd::Zero(n, dim);
  Phi.leftCols(n).setIdentity();
  MatrixXd lifted = MatrixXd::Zero(dim, dim);
  for (int k = 0; k < nu; ++k) {
    MatrixXd Z(n + m, dim);
    Z.topRows(n) = Phi;
    Z.bottomRows(m).setZero();
    Z.block(n, n + k * m, m, m).setIdentity();
    lifted += Z.transpose() * H * Z;
    Phi = sys.A * Phi + sys.B * Z.bottomRows(m);
  }
  lifted = Symmetrize(lifted);
  const VectorXd ev =
      Eigen::SelfAdjointEigenSolver<MatrixXd>(lifted, Eigen::EigenvaluesOnly)
          .eigenvalues();
  if (ev.minCoeff() <= 1e-10 * std::max(1.0, ev.maxCoeff())) {
    throw ObservabilityError("lifted stage cost is not positive definite for nu = " +
                             std::to_string(nu));
  }
  const MatrixXd num = Phi.transpose() * sigma_metric.P * Phi;
  return MaxGeneralizedEigenvalue(num, lifted);
}

std::pair<int, double> SmallestObservabilityHorizon(
    const LinearSystem& sys, const QuadraticStageCost& cost,
    const QuadraticCertificate& sigma_metric, int nu_max) {
  for (int nu = 1; nu <= nu_max; ++nu) {
    try {
      return {nu, ObservabilityConstant(sys, cost, sigma_metric, nu)};
    } catch (const ObservabilityError&) {
    }
  }
  throw ObservabilityError("no observability horizon up to " +
                           std::to_string(nu_max));
}

ZeroReport RelativeDegreeAndZeros(const LinearSystem& sys) {
  sys.Validate();
  if (sys.m() != 1 || sys.p() != 1) {
    throw ShapeError("relative degree requires a SISO system");
  }
  const int n = sys.n_p();
  ZeroReport out{0, {}, true};
  const double scale = 1.0 + sys.C.norm() * sys.B.norm();
  if (std::abs(sys.D(0, 0)) > 1e-12 * (1.0 + std::abs(sys.D(0, 0)))) {
    out.relative_degree = -1;
  } else {
    int d = -2;
    MatrixXd AkB = sys.B;
    double growth = 1.0;
    for (int k = 0; k < n; ++k) {
      if (std::abs((sys.C * AkB)(0, 0)) > 1e-12 * scale * growth) {
        d = k;
        break;
      }
      AkB = sys.A * AkB;
      growth *= std::max(1.0, sys.A.norm());
    }
    if (d < 0) throw DegenerateSystemError("transfer function is identically zero");
    out.relative_degree = d;
  }
  MatrixXd M(n + 1, n + 1), E = MatrixXd::Zero(n + 1, n + 1);
  M << sys.A, sys.B, sys.C, sys.D;
  E.topLeftCorner(n, n).setIdentity();
  Eigen::GeneralizedEigenSolver<MatrixXd> ges(M, E, false);
  const Eigen::VectorXcd alphas = ges.alphas();
  const VectorXd betas = ges.betas();
  for (Eigen::Index i = 0; i < alphas.size(); ++i) {
    if (std::abs(betas(i)) <= 1e-9 * std::max(1.0, std::abs(alphas(i)))) continue;
    const cd z = alphas(i) / betas(i);
    out.zeros.push_back(z);
    if (std::abs(z) >= 1.0) out.minimum_phase = false;
  }
  std::sort(out.zeros.begin(), out.zeros.end(), [](cd a, cd b) {
    return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag();
  });
  return out;
}

MatrixXd SolveDiscreteLyapunov(const MatrixXd& A, const MatrixXd& Q) {
  const auto n = A.rows();
  if (A.cols() != n || Q.rows() != n || Q.cols() != n) {
    throw ShapeError("Lyapunov equation dimensions disagree");
  }
  const MatrixXd At = A.transpose();
  MatrixXd K(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      K.block(i * n, j * n, n, n) = At(i, j) * At;
  K -= MatrixXd::Identity(n * n, n * n);
  const VectorXd vecQ = Q.reshaped();
  const VectorXd vecP = K.fullPivLu().solve(-vecQ);
  if (!vecP.allFinite()) throw NumericalError("Lyapunov equation is singular");
  return Symmetrize(vecP.reshaped(n, n));
}

double SpectralRadius(const MatrixXd& A) {
  if (A.size() == 0) return 0.0;
  return Eigen::EigenSolver<MatrixXd>(A, false).eigenvalues().cwiseAbs().maxCoeff();
}

IossCertificate LinearIossCertificate(const MatrixXd& A, const MatrixXd& C,
                                      const MatrixXd& B_in,
                                      const MatrixXd& D_in) {
  const auto n = A.rows(), p = C.rows();
  if (A.cols() != n || C.cols() != n) throw ShapeError("A, C dimensions disagree");
  if (!PbhDetectable(A, C)) {
    throw DetectabilityError("(A, C) is not detectable");
  }
  const MatrixXd B = B_in.size() ? B_in : MatrixXd::Zero(n, 0);
  const MatrixXd D = D_in.size() ? D_in : MatrixXd::Zero(p, B.cols());
  MatrixXd L = MatrixXd::Zero(n, p);
  if (p > 0) {
    const MatrixXd Sigma = Dare(A.transpose(), C.transpose(),
                                MatrixXd::Identity(n, n),
                                MatrixXd::Identity(p, p))
                               .P;
    const MatrixXd innov = C * Sigma * C.transpose() + MatrixXd::Identity(p, p);
    L = A * Sigma * C.transpose() * innov.inverse();
  }
  const MatrixXd AL = A - L * C;
  const MatrixXd P = SolveDiscreteLyapunov(AL, MatrixXd::Identity(n, n));
  const double rho0 =
      std::max(0.0, MaxGeneralizedEigenvalue(AL.transpose() * P * AL, P));
  IossCertificate out;
  out.certificate = {P, CertificateRole::kIoss};
  out.L = L;
  out.rho_o = std::sqrt(rho0);
  const double factor = 2.0 / (1.0 - out.rho_o);
  auto lambda_max = [](const MatrixXd& X) {
    if (X.size() == 0) return 0.0;
    return Eigen::SelfAdjointEigenSolver<MatrixXd>(Symmetrize(X),
                                                   Eigen::EigenvaluesOnly)
        .eigenvalues()
        .maxCoeff();
  };
  const MatrixXd BL = B - L * D;
  out.c_o1 = factor * std::max(0.0, lambda_max(BL.transpose() * P * BL));
  out.c_o2 = factor * std::max(0.0, lambda_max(L.transpose() * P * L));
  return out;
}

RegulatorFeedback::RegulatorFeedback(const LinearSystem& sys,
                                     RegulatorSolution reg, MatrixXd K)
    : reg_(std::move(reg)), K_(std::move(K)) {
  sys.Validate();
  if (K_.rows() != sys.m() || K_.cols() != sys.n_p()) {
    throw ShapeError("feedback gain must be m x n_p");
  }
  const double rho = SpectralRadius(sys.A + sys.B * K_);
  if (!(rho < 1.0)) {
    throw StabilityError("A + BK has spectral radius " + std::to_string(rho));
  }
}

VectorXd RegulatorFeedback::operator()(const VectorXd& x,
                                       const VectorXd& w) const {
  if (reg_.Pi.cols() == 0) return K_ * x;
  return reg_.Gamma * w + K_ * (x - reg_.Pi * w);
}

}  // namespace regmpc
