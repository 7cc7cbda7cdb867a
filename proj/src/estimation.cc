#include "regmpc/estimation.h"

#include <Eigen/Eigenvalues>

#include "regmpc/linear_analysis.h"

namespace regmpc {
namespace {

double MinEigenvalue(const MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(0.5 * (M + M.transpose()),
                                                 Eigen::EigenvaluesOnly)
      .eigenvalues()
      .minCoeff();
}

void ExpectSquare(const MatrixXd& M, int n, const char* name) {
  if (M.rows() != n || M.cols() != n) {
    throw ConfigError(std::string(name) + " must be " + std::to_string(n) +
                      "x" + std::to_string(n));
  }
}

}  // namespace

EkfSettings EkfSettings::Scaled(int n, int p, double sigma0, double q,
                                double r) {
  return {sigma0 * MatrixXd::Identity(n, n), q * MatrixXd::Identity(n, n),
          r * MatrixXd::Identity(p, p)};
}

void ObserverConfig::Validate(int n, int p) const {
  if (xhat0.size() != n) {
    throw ConfigError("initial estimate must have size " + std::to_string(n));
  }
  if (const auto* g = std::get_if<LuenbergerGain>(&kind)) {
    if (g->L.rows() != n || g->L.cols() != p) {
      throw ConfigError("observer gain must be " + std::to_string(n) + "x" +
                        std::to_string(p));
    }
    return;
  }
  const auto& e = std::get<EkfSettings>(kind);
  ExpectSquare(e.Sigma0, n, "Sigma0");
  ExpectSquare(e.Qproc, n, "Qproc");
  ExpectSquare(e.Rmeas, p, "Rmeas");
  const double tol = 1e-12;
  if (MinEigenvalue(e.Sigma0) < -tol * std::max(1.0, e.Sigma0.norm())) {
    throw ConfigError("Sigma0 must be PSD");
  }
  if (MinEigenvalue(e.Qproc) < -tol * std::max(1.0, e.Qproc.norm())) {
    throw ConfigError("Qproc must be PSD");
  }
  if (p > 0 && !(MinEigenvalue(e.Rmeas) > 0.0)) {
    throw ConfigError("Rmeas must be positive definite");
  }
}

VectorXd JointStep(const SystemModel& model, const VectorXd& z,
                   const VectorXd& u) {
  const int n = model.n_p(), q = model.q();
  const VectorXd x = z.head(n), w = z.tail(q);
  VectorXd out(n + q);
  out << model.Step(x, u, w), model.Exo(w);
  return out;
}

VectorXd JointOutput(const SystemModel& model, const VectorXd& z,
                     const VectorXd& u) {
  return model.Output(z.head(model.n_p()), u, z.tail(model.q()));
}

JointJacobians EkfJacobians(const SystemModel& model, const VectorXd& z,
                            const VectorXd& u) {
  const int n = model.n_p(), q = model.q();
  if (z.size() != n + q) throw ShapeError("joint state has wrong size");
  const ModelJacobians J = model.Jacobians(z.head(n), u, z.tail(q));
  JointJacobians out;
  out.F = MatrixXd::Zero(n + q, n + q);
  out.F.topLeftCorner(n, n) = J.fx;
  out.F.topRightCorner(n, q) = J.fw;
  out.F.bottomRightCorner(q, q) = J.sw;
  out.H.resize(model.p(), n + q);
  out.H << J.hx, J.hw;
  return out;
}

ObserverState InitialObserverState(const ObserverConfig& config) {
  ObserverState s;
  s.xhat = config.xhat0;
  if (const auto* e = std::get_if<EkfSettings>(&config.kind)) s.Sigma = e->Sigma0;
  return s;
}

ObserverState ObserverStep(const SystemModel& model,
                           const ObserverConfig& config,
                           const ObserverState& state, const VectorXd& u,
                           const VectorXd& y_measured) {
  if (!y_measured.allFinite()) {
    throw NumericalError("measured output is not finite", state.xhat);
  }
  const VectorXd innovation = y_measured - JointOutput(model, state.xhat, u);
  const VectorXd prediction = JointStep(model, state.xhat, u);
  ObserverState next;
  if (const auto* g = std::get_if<LuenbergerGain>(&config.kind)) {
    next.xhat = prediction + g->L * innovation;
    return next;
  }
  const auto& e = std::get<EkfSettings>(config.kind);
  const JointJacobians J = EkfJacobians(model, state.xhat, u);
  const MatrixXd& P = state.Sigma;
  const MatrixXd S = J.H * P * J.H.transpose() + e.Rmeas;
  Eigen::LLT<MatrixXd> llt(0.5 * (S + S.transpose()));
  if (llt.info() != Eigen::Success) {
    throw NumericalError("EKF innovation covariance is singular", state.xhat);
  }
  const MatrixXd K = llt.solve(J.H * P).transpose();  // Σ Hᵀ S⁻¹
  const auto n = P.rows();
  const MatrixXd IKH = MatrixXd::Identity(n, n) - K * J.H;
  const MatrixXd P_upd =
      IKH * P * IKH.transpose() + K * e.Rmeas * K.transpose();
  next.xhat = prediction + J.F * K * innovation;
  next.Sigma = J.F * P_upd * J.F.transpose() + e.Qproc;
  next.Sigma = 0.5 * (next.Sigma + next.Sigma.transpose());
  if (!next.xhat.allFinite() || !next.Sigma.allFinite()) {
    throw NumericalError("EKF produced non-finite values", state.xhat);
  }
  return next;
}

bool JointDetectable(const LinearSystem& sys) {
  sys.Validate();
  const int n = sys.n_p(), q = sys.q();
  MatrixXd A = MatrixXd::Zero(n + q, n + q);
  A.topLeftCorner(n, n) = sys.A;
  A.topRightCorner(n, q) = sys.Px;
  A.bottomRightCorner(q, q) = sys.S;
  MatrixXd C(sys.p(), n + q);
  C << sys.C, -sys.Py;
  return PbhDetectable(A, C);
}

}  // namespace regmpc
