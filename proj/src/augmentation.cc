#include "regmpc/augmentation.h"

namespace regmpc {

MemoryMatrices BuildMemoryMatrices(int m, int T) {
  if (T < 1) throw DomainError("memory period T must be at least 1");
  if (m < 0) throw ShapeError("negative input dimension");
  const int n = m * T;
  MemoryMatrices M;
  M.E0 = MatrixXd::Zero(n, n);
  // Slot 0 receives the oldest slot; slot j receives slot j−1.
  M.E0.block(0, n - m, m, m).setIdentity();
  for (int j = 1; j < T; ++j) {
    M.E0.block(j * m, (j - 1) * m, m, m).setIdentity();
  }
  M.E1 = MatrixXd::Zero(n, m);
  M.E1.topRows(m).setIdentity();
  M.E2 = MatrixXd::Zero(n, m);
  M.E2.bottomRows(m).setIdentity();
  return M;
}

AugmentedPlant::AugmentedPlant(SystemModel base, int T, MemoryMatrices mats,
                               SystemModel model)
    : base_(std::move(base)),
      T_(T),
      mats_(std::move(mats)),
      model_(std::move(model)) {}

AugmentedPlant AugmentedPlant::Build(const SystemModel& base, int T) {
  if (T < 1) throw DomainError("memory period T must be at least 1");
  MemoryMatrices mats = BuildMemoryMatrices(base.m(), T);
  const int n = base.n_p(), m = base.m(), nm = m * T;
  auto f = [base, mats, n, nm](const VectorXd& x, const VectorXd& ua,
                               const VectorXd& w) {
    const VectorXd xi = x.tail(nm);
    const VectorXd u = mats.E2.transpose() * xi + ua;
    VectorXd r(n + nm);
    r.head(n) = base.Step(x.head(n), u, w);
    r.tail(nm) = mats.E0 * xi + mats.E1 * ua;
    return r;
  };
  auto s = [base](const VectorXd& w) { return base.Exo(w); };
  auto h = [base, mats, n, nm](const VectorXd& x, const VectorXd& ua,
                               const VectorXd& w) {
    const VectorXd u = mats.E2.transpose() * x.tail(nm) + ua;
    return base.Output(x.head(n), u, w);
  };
  SystemModel::JacobianFn jac;
  if (base.has_analytic_jacobians()) {
    jac = [base, mats, n, nm, m](const VectorXd& x, const VectorXd& ua,
                                 const VectorXd& w) {
      const VectorXd u = mats.E2.transpose() * x.tail(nm) + ua;
      const ModelJacobians b = base.Jacobians(x.head(n), u, w);
      ModelJacobians J;
      J.fx = MatrixXd::Zero(n + nm, n + nm);
      J.fx.topLeftCorner(n, n) = b.fx;
      J.fx.topRightCorner(n, nm) = b.fu * mats.E2.transpose();
      J.fx.bottomRightCorner(nm, nm) = mats.E0;
      J.fu = MatrixXd(n + nm, m);
      J.fu << b.fu, mats.E1;
      J.fw = MatrixXd::Zero(n + nm, w.size());
      J.fw.topRows(n) = b.fw;
      J.sw = b.sw;
      J.hx = MatrixXd(b.hx.rows(), n + nm);
      J.hx << b.hx, b.hu * mats.E2.transpose();
      J.hu = b.hu;
      J.hw = b.hw;
      return J;
    };
  }
  SystemModel model(base.name() + "_augmented", n + nm, m, base.q(), base.p(),
                    f, s, h, InputBox::Unbounded(m), jac);
  if (base.linear()) {
    model = SystemModel::FromLinear(AugmentLinear(*base.linear(), T),
                                    std::nullopt, base.name() + "_augmented");
  }
  return AugmentedPlant(base, T, std::move(mats), std::move(model));
}

VectorXd AugmentedPlant::WrapMemory(const std::vector<VectorXd>& history) const {
  if (static_cast<int>(history.size()) != T_) {
    throw ShapeError("memory history has length " +
                     std::to_string(history.size()) + ", expected " +
                     std::to_string(T_));
  }
  VectorXd xi(memory_size());
  for (int j = 0; j < T_; ++j) {
    if (history[j].size() != m()) throw ShapeError("history entry has wrong size");
    xi.segment(j * m(), m()) = history[j];
  }
  return xi;
}

VectorXd AugmentedPlant::ConstantMemory(const VectorXd& u) const {
  if (u.size() != m()) throw ShapeError("input has wrong size");
  return u.replicate(T_, 1);
}

VectorXd AugmentedPlant::StepMemory(const VectorXd& xi,
                                    const VectorXd& u_applied) const {
  if (xi.size() != memory_size() || u_applied.size() != m()) {
    throw ShapeError("memory or input has wrong size");
  }
  VectorXd next(memory_size());
  next.head(m()) = u_applied;
  next.tail(memory_size() - m()) = xi.head(memory_size() - m());
  return next;
}

VectorXd AugmentedPlant::Oldest(const VectorXd& xi) const {
  if (xi.size() != memory_size()) throw ShapeError("memory has wrong size");
  return xi.tail(m());
}

VectorXd AugmentedPlant::Increment(const VectorXd& xi,
                                   const VectorXd& u_applied) const {
  return u_applied - Oldest(xi);
}

VectorXd AugmentedPlant::AppliedInput(const VectorXd& xi,
                                      const VectorXd& u_a) const {
  return Oldest(xi) + u_a;
}

bool AugmentedPlant::SatisfiesConstraints(const VectorXd& xi,
                                          const VectorXd& u_a,
                                          double slack) const {
  return base_.input_box().Contains(AppliedInput(xi, u_a), slack);
}

VectorXd AugmentedPlant::Join(const VectorXd& x_p, const VectorXd& xi) const {
  VectorXd x(x_p.size() + xi.size());
  x << x_p, xi;
  return x;
}

VectorXd AugmentedPlant::PlantPart(const VectorXd& x_ap) const {
  return x_ap.head(base_.n_p());
}

VectorXd AugmentedPlant::MemoryPart(const VectorXd& x_ap) const {
  return x_ap.tail(memory_size());
}

LinearSystem AugmentLinear(const LinearSystem& sys, int T) {
  sys.Validate();
  const MemoryMatrices M = BuildMemoryMatrices(sys.m(), T);
  const int n = sys.n_p(), m = sys.m(), nm = m * T;
  LinearSystem a;
  a.A = MatrixXd::Zero(n + nm, n + nm);
  a.A.topLeftCorner(n, n) = sys.A;
  a.A.topRightCorner(n, nm) = sys.B * M.E2.transpose();
  a.A.bottomRightCorner(nm, nm) = M.E0;
  a.B = MatrixXd(n + nm, m);
  a.B << sys.B, M.E1;
  a.C = MatrixXd(sys.p(), n + nm);
  a.C << sys.C, sys.D * M.E2.transpose();
  a.D = sys.D;
  a.Px = MatrixXd::Zero(n + nm, sys.q());
  a.Px.topRows(n) = sys.Px;
  a.Py = sys.Py;
  a.S = sys.S;
  return a;
}

MatrixXd AugmentedRegulatorPi(const LinearSystem& sys, const MatrixXd& Pi,
                              const MatrixXd& Gamma, int T) {
  if (T < 1) throw DomainError("memory period T must be at least 1");
  const int n = sys.n_p(), m = sys.m(), q = sys.q();
  MatrixXd Pa(n + m * T, q);
  Pa.topRows(n) = Pi;
  // Slot j (1-based) holds u_{t−j} = Γ S^{T−j} w.
  MatrixXd Sk = MatrixXd::Identity(q, q);
  for (int j = T; j >= 1; --j) {
    Pa.block(n + (j - 1) * m, 0, m, q) = Gamma * Sk;
    Sk = sys.S * Sk;
  }
  return Pa;
}

}  // namespace regmpc
