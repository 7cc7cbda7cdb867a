#include "regmpc/mpc.h"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace regmpc {
namespace {

MatrixXd PsdSqrt(const MatrixXd& M) {
  if (M.size() == 0) return M;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()));
  const VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool IsSymmetricPsd(const MatrixXd& M) {
  if (M.rows() != M.cols()) return false;
  if (M.size() == 0) return true;
  if ((M - M.transpose()).norm() > 1e-12 * std::max(1.0, M.norm())) {
    return false;
  }
  const double lo = Eigen::SelfAdjointEigenSolver<MatrixXd>(
                        M, Eigen::EigenvaluesOnly)
                        .eigenvalues()
                        .minCoeff();
  return lo >= -1e-12 * std::max(1.0, M.norm());
}

bool UsesInputWeight(CostVariant v) {
  return v == CostVariant::kInputRegularized ||
         v == CostVariant::kIncrementalInput;
}

}  // namespace

const char* ToString(CostVariant v) {
  switch (v) {
    case CostVariant::kInputRegularized:
      return "input_regularized";
    case CostVariant::kOutputOnly:
      return "output_only";
    case CostVariant::kLookAhead:
      return "look_ahead";
    case CostVariant::kIncrementalInput:
      return "incremental";
  }
  return "unknown";
}

CostVariant ParseCostVariant(const std::string& s) {
  for (CostVariant v :
       {CostVariant::kInputRegularized, CostVariant::kOutputOnly,
        CostVariant::kLookAhead, CostVariant::kIncrementalInput}) {
    if (s == ToString(v)) return v;
  }
  throw ConfigError("unknown MPC variant '" + s + "'");
}

void SolverSettings::Validate() const {
  if (max_iterations < 1) throw ConfigError("max_iterations must be positive");
  if (!(gradient_tolerance > 0.0)) {
    throw ConfigError("gradient_tolerance must be positive");
  }
  if (!(initial_step > 0.0)) throw ConfigError("initial_step must be positive");
  if (!(shrink > 0.0 && shrink < 1.0)) {
    throw ConfigError("shrink factor must lie in (0, 1)");
  }
  if (!(sufficient_decrease > 0.0 && sufficient_decrease < 1.0)) {
    throw ConfigError("sufficient_decrease must lie in (0, 1)");
  }
}

void MpcConfig::Validate(const SystemModel& model) const {
  if (horizon < 1) throw ConfigError("horizon N must be at least 1");
  if (Q.rows() != model.p() || Q.cols() != model.p()) {
    throw ConfigError("Q must be " + std::to_string(model.p()) + "x" +
                      std::to_string(model.p()));
  }
  if (R.rows() != model.m() || R.cols() != model.m()) {
    throw ConfigError("R must be " + std::to_string(model.m()) + "x" +
                      std::to_string(model.m()));
  }
  if (!IsSymmetricPsd(Q)) throw ConfigError("Q must be symmetric PSD");
  if (!IsSymmetricPsd(R)) throw ConfigError("R must be symmetric PSD");
  if (variant == CostVariant::kLookAhead && look_ahead < 0) {
    throw ConfigError("look-ahead d must be nonnegative");
  }
  if (variant == CostVariant::kIncrementalInput && period < 1) {
    throw ConfigError("period T must be at least 1");
  }
  solver.Validate();
}

Ocp::Ocp(const SystemModel& model, const MpcConfig& config, VectorXd x0,
         VectorXd w0, VectorXd memory, std::optional<RegulatorMap> regulator)
    : model_(model),
      config_(config),
      N_(config.horizon),
      m_(model.m()),
      x0_(std::move(x0)),
      w0_(std::move(w0)),
      memory_(std::move(memory)),
      regulator_(std::move(regulator)) {
  config_.Validate(model_);
  if (x0_.size() != model_.n_p() || w0_.size() != model_.q()) {
    throw ShapeError("initial state or exosystem state has wrong size");
  }
  if (config_.variant == CostVariant::kInputRegularized && !regulator_) {
    throw ConfigError("input-regularized MPC requires a regulator map pi_u");
  }
  if (config_.variant == CostVariant::kIncrementalInput &&
      memory_.size() != m_ * config_.period) {
    throw ConfigError("incremental MPC requires a memory of size m*T");
  }
  Q_sqrt_ = PsdSqrt(config_.Q);
  R_sqrt_ = PsdSqrt(config_.R);
  const int K = RolloutLength();
  w_traj_.reserve(K + 1);
  w_traj_.push_back(w0_);
  for (int k = 0; k < K; ++k) w_traj_.push_back(model_.Exo(w_traj_.back()));
}

int Ocp::RolloutLength() const {
  if (config_.variant == CostVariant::kLookAhead) {
    return N_ + config_.look_ahead + 1;
  }
  return N_;
}

double Ocp::OutputWeight(int k) const {
  double c = k < N_ ? 1.0 : 0.0;
  if (config_.variant == CostVariant::kLookAhead) {
    const int d1 = config_.look_ahead + 1;
    if (k >= d1 && k - d1 < N_) c += 1.0;
  }
  return c;
}

VectorXd Ocp::Project(const VectorXd& u) const {
  VectorXd out(u.size());
  for (int k = 0; k < N_; ++k) {
    out.segment(k * m_, m_) = box().Project(u.segment(k * m_, m_));
  }
  return out;
}

VectorXd Ocp::ColdStart(const std::optional<VectorXd>& previous) const {
  const VectorXd u0 = (previous && previous->size() == m_)
                          ? box().Project(*previous)
                          : box().Midpoint();
  return u0.replicate(N_, 1);
}

Rollout Ocp::Simulate(const VectorXd& u) const {
  if (u.size() != num_decisions()) {
    throw ShapeError("input sequence has wrong length");
  }
  const int K = RolloutLength();
  Rollout r;
  r.w = w_traj_;
  r.x.reserve(K + 1);
  r.v.reserve(K);
  r.x.push_back(x0_);
  for (int k = 0; k < K; ++k) {
    r.v.push_back(u.segment(std::min(k, N_ - 1) * m_, m_));
    r.x.push_back(model_.Step(r.x[k], r.v[k], r.w[k]));
  }
  if (config_.variant == CostVariant::kIncrementalInput) {
    r.memory.push_back(memory_);
    for (int k = 0; k < N_; ++k) {
      VectorXd next(memory_.size());
      next.head(m_) = r.v[k];
      next.tail(memory_.size() - m_) =
          r.memory.back().head(memory_.size() - m_);
      r.memory.push_back(next);
    }
  }
  return r;
}

VectorXd Ocp::InputReference(const VectorXd& u, int k, const Rollout& r) const {
  if (config_.variant == CostVariant::kInputRegularized) {
    return regulator_->pi_u(r.w[k]);
  }
  const int T = config_.period;
  if (k >= T) return u.segment((k - T) * m_, m_);
  // u_{k−T} is slot T − k of the initial memory (1-based, newest first).
  return memory_.segment((T - k - 1) * m_, m_);
}

VectorXd Ocp::Residual(const VectorXd& u) const {
  const Rollout r = Simulate(u);
  const int K = RolloutLength();
  const int p = model_.p();
  std::vector<VectorXd> parts;
  Eigen::Index total = 0;
  for (int k = 0; k < K; ++k) {
    const double c = OutputWeight(k);
    if (c == 0.0) continue;
    parts.push_back(std::sqrt(c) *
                    (Q_sqrt_ * model_.Output(r.x[k], r.v[k], r.w[k])));
    total += p;
  }
  if (UsesInputWeight(config_.variant)) {
    for (int k = 0; k < N_; ++k) {
      parts.push_back(R_sqrt_ *
                      (u.segment(k * m_, m_) - InputReference(u, k, r)));
      total += m_;
    }
  }
  VectorXd res(total);
  Eigen::Index pos = 0;
  for (const VectorXd& part : parts) {
    res.segment(pos, part.size()) = part;
    pos += part.size();
  }
  return res;
}

double Ocp::Cost(const VectorXd& u) const { return Residual(u).squaredNorm(); }

std::pair<double, VectorXd> Ocp::CostAndGradient(const VectorXd& u) const {
  const Rollout r = Simulate(u);
  const int K = RolloutLength();
  const MatrixXd& Q = config_.Q;
  const MatrixXd& R = config_.R;
  double cost = 0.0;
  VectorXd grad = VectorXd::Zero(num_decisions());
  VectorXd lambda = VectorXd::Zero(model_.n_p());
  for (int k = K - 1; k >= 0; --k) {
    const double c = OutputWeight(k);
    const ModelJacobians J = model_.Jacobians(r.x[k], r.v[k], r.w[k]);
    VectorXd gy = VectorXd::Zero(model_.p());
    if (c != 0.0) {
      const VectorXd y = model_.Output(r.x[k], r.v[k], r.w[k]);
      cost += c * y.dot(Q * y);
      gy = 2.0 * c * (Q * y);
    }
    const VectorXd gv = J.hu.transpose() * gy + J.fu.transpose() * lambda;
    lambda = J.hx.transpose() * gy + J.fx.transpose() * lambda;
    grad.segment(std::min(k, N_ - 1) * m_, m_) += gv;
  }
  if (UsesInputWeight(config_.variant)) {
    const int T = config_.period;
    for (int k = 0; k < N_; ++k) {
      const VectorXd e = u.segment(k * m_, m_) - InputReference(u, k, r);
      const VectorXd Re = R * e;
      cost += e.dot(Re);
      grad.segment(k * m_, m_) += 2.0 * Re;
      if (config_.variant == CostVariant::kIncrementalInput && k >= T) {
        grad.segment((k - T) * m_, m_) -= 2.0 * Re;
      }
    }
  }
  return {cost, grad};
}

OcpSolution Ocp::MakeSolution(const VectorXd& u, int iterations,
                              bool converged) const {
  const Rollout r = Simulate(u);
  OcpSolution s;
  s.u_opt = u.reshaped(m_, N_).transpose();
  if (config_.variant == CostVariant::kIncrementalInput) {
    s.increments.resize(N_, m_);
    for (int k = 0; k < N_; ++k) {
      s.increments.row(k) =
          (u.segment(k * m_, m_) - InputReference(u, k, r)).transpose();
    }
    const Eigen::Index nx = model_.n_p() + memory_.size();
    s.x_pred.resize(N_ + 1, nx);
    for (int k = 0; k <= N_; ++k) {
      s.x_pred.row(k).head(model_.n_p()) = r.x[k].transpose();
      s.x_pred.row(k).tail(memory_.size()) = r.memory[k].transpose();
    }
  } else {
    s.x_pred.resize(static_cast<Eigen::Index>(r.x.size()), model_.n_p());
    for (std::size_t k = 0; k < r.x.size(); ++k) {
      s.x_pred.row(static_cast<Eigen::Index>(k)) = r.x[k].transpose();
    }
  }
  const auto [cost, grad] = CostAndGradient(u);
  s.value = cost;
  s.kkt_residual = (u - Project(u - grad)).lpNorm<Eigen::Infinity>();
  s.iterations = iterations;
  s.converged = converged;
  return s;
}

VectorXd SolveDenseLeastSquares(const Ocp& ocp) {
  const int nd = ocp.num_decisions();
  const VectorXd zero = VectorXd::Zero(nd);
  const VectorXd r0 = ocp.Residual(zero);
  MatrixXd M(r0.size(), nd);
  for (int i = 0; i < nd; ++i) {
    VectorXd e = zero;
    e(i) = 1.0;
    M.col(i) = ocp.Residual(e) - r0;
  }
  const VectorXd u = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(M).solve(-r0);
  if (!u.allFinite()) throw NumericalError("dense least-squares solve failed");
  return u;
}

OcpSolution SolveProjectedGradient(const Ocp& ocp, const VectorXd& u0) {
  const SolverSettings& st = ocp.config().solver;
  VectorXd u = ocp.Project(u0);
  auto [J, g] = ocp.CostAndGradient(u);
  if (!std::isfinite(J) || !g.allFinite()) {
    throw NumericalError("non-finite cost or gradient at the initial iterate");
  }
  double step = st.initial_step / std::max(1.0, g.lpNorm<Eigen::Infinity>());
  int it = 0;
  bool converged = false;
  for (; it < st.max_iterations; ++it) {
    const double kkt = (u - ocp.Project(u - g)).lpNorm<Eigen::Infinity>();
    if (kkt <= st.gradient_tolerance) {
      converged = true;
      break;
    }
    bool accepted = false;
    VectorXd u_new;
    double J_new = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      u_new = ocp.Project(u - step * g);
      const double decrease = (u_new - u).squaredNorm();
      if (decrease == 0.0) break;
      try {
        J_new = ocp.Cost(u_new);
      } catch (const NumericalError&) {
        J_new = std::numeric_limits<double>::infinity();
      }
      if (std::isfinite(J_new) &&
          J_new <= J - st.sufficient_decrease / step * decrease) {
        accepted = true;
        break;
      }
      step *= st.shrink;
    }
    if (!accepted) break;  // no further progress at machine precision
    const auto [J_next, g_next] = ocp.CostAndGradient(u_new);
    if (!std::isfinite(J_next) || !g_next.allFinite()) {
      throw NumericalError("non-finite cost or gradient during solve");
    }
    const VectorXd s = u_new - u;
    const VectorXd y = g_next - g;
    const double sy = s.dot(y);
    // Barzilai–Borwein step for the next trial, kept within sane bounds.
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12)
                    : std::min(step / st.shrink, 1e12);
    u = u_new;
    J = J_next;
    g = g_next;
  }
  return ocp.MakeSolution(u, it, converged);
}

OcpSolution Solve(const Ocp& ocp, const std::optional<VectorXd>& warm_start,
                  const std::optional<VectorXd>& previous_input) {
  const bool warm_ok = warm_start && warm_start->size() == ocp.num_decisions() &&
                       warm_start->allFinite();
  const VectorXd cold = ocp.ColdStart(previous_input);
  VectorXd start = warm_ok ? ocp.Project(*warm_start) : cold;
  if (ocp.model().linear()) {
    const VectorXd u_ls = SolveDenseLeastSquares(ocp);
    const VectorXd u_proj = ocp.Project(u_ls);
    const bool inside = (u_proj - u_ls).lpNorm<Eigen::Infinity>() == 0.0;
    const double J_ls = ocp.Cost(u_proj);
    const double J_start = ocp.Cost(start);
    if (inside) {
      // Keep the warm start only if it is strictly better.
      return ocp.MakeSolution(J_start < J_ls ? start : u_ls, 0, true);
    }
    if (J_ls <= J_start) start = u_proj;
  }
  return SolveProjectedGradient(ocp, start);
}

MpcController::MpcController(SystemModel model, MpcConfig config,
                             std::optional<RegulatorMap> regulator)
    : model_(std::move(model)),
      config_(std::move(config)),
      regulator_(std::move(regulator)) {
  config_.Validate(model_);
  if (config_.variant == CostVariant::kInputRegularized && !regulator_) {
    throw ConfigError("input-regularized MPC requires a regulator map pi_u");
  }
  if (config_.variant == CostVariant::kIncrementalInput) {
    augmented_ = AugmentedPlant::Build(model_, config_.period);
  }
}

void MpcController::SetHistory(const std::vector<VectorXd>& history) {
  if (!augmented_) throw ConfigError("memory only exists for incremental MPC");
  memory_ = augmented_->WrapMemory(history);
}

void MpcController::SetMemory(const VectorXd& xi) {
  if (!augmented_) throw ConfigError("memory only exists for incremental MPC");
  if (xi.size() != augmented_->memory_size()) {
    throw ShapeError("memory has wrong size");
  }
  memory_ = xi;
}

const VectorXd& MpcController::EnsureMemory() {
  if (augmented_ && memory_.size() == 0) {
    const VectorXd seed = last_u_ ? model_.input_box().Project(*last_u_)
                                  : model_.input_box().Midpoint();
    memory_ = augmented_->ConstantMemory(seed);
  }
  return memory_;
}

Ocp MpcController::MakeOcp(const VectorXd& x, const VectorXd& w,
                           const VectorXd& memory) const {
  return Ocp(model_, config_, x, w, memory, regulator_);
}

VectorXd MpcController::Step(const VectorXd& x, const VectorXd& w,
                             StepDiagnostics* diagnostics) {
  EnsureMemory();
  const int m = model_.m();
  const int N = config_.horizon;
  StepDiagnostics diag;
  VectorXd u;
  try {
    const Ocp ocp = MakeOcp(x, w, memory_);
    const std::optional<VectorXd> warm =
        config_.solver.warm_start ? warm_ : std::nullopt;
    diag.solution = Solve(ocp, warm, last_u_);
    const VectorXd seq = diag.solution.u_opt.transpose().reshaped();
    u = seq.head(m);
    VectorXd shifted(N * m);
    shifted.head((N - 1) * m) = seq.tail((N - 1) * m);
    shifted.tail(m) = seq.tail(m);
    warm_ = shifted;
  } catch (const NumericalError& e) {
    diag.solver_failed = true;
    diag.message = e.what();
    u = last_u_ ? *last_u_ : model_.input_box().Midpoint();
    warm_.reset();
  }
  u = model_.input_box().Project(u);
  if (augmented_) memory_ = augmented_->StepMemory(memory_, u);
  last_u_ = u;
  if (diagnostics) *diagnostics = std::move(diag);
  return u;
}

}  // namespace regmpc
