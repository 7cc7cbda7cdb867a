#include "regmpc/models.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace regmpc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool AllFinite(const VectorXd& v) { return v.allFinite(); }

std::string Dims(const MatrixXd& M) {
  return std::to_string(M.rows()) + "x" + std::to_string(M.cols());
}

void Expect(const MatrixXd& M, Eigen::Index rows, Eigen::Index cols,
            const char* name) {
  if (M.rows() != rows || M.cols() != cols) {
    throw ShapeError(std::string(name) + " is " + Dims(M) + ", expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace

InputBox InputBox::Unbounded(int m) {
  return {VectorXd::Constant(m, -kInf), VectorXd::Constant(m, kInf)};
}

InputBox InputBox::Bounded(const VectorXd& lower, const VectorXd& upper) {
  InputBox box{lower, upper};
  box.Validate();
  return box;
}

bool InputBox::IsConstrained() const {
  return lower.array().isFinite().any() || upper.array().isFinite().any();
}

bool InputBox::Contains(const VectorXd& u, double slack) const {
  if (u.size() != lower.size()) return false;
  return ((u.array() >= lower.array() - slack) &&
          (u.array() <= upper.array() + slack))
      .all();
}

VectorXd InputBox::Project(const VectorXd& u) const {
  return u.cwiseMax(lower).cwiseMin(upper);
}

VectorXd InputBox::Midpoint() const {
  VectorXd mid(lower.size());
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    const bool lo = std::isfinite(lower(i));
    const bool hi = std::isfinite(upper(i));
    if (lo && hi) {
      mid(i) = 0.5 * (lower(i) + upper(i));
    } else if (lo) {
      mid(i) = lower(i);
    } else if (hi) {
      mid(i) = upper(i);
    } else {
      mid(i) = 0.0;
    }
  }
  return mid;
}

void InputBox::Validate() const {
  if (lower.size() != upper.size()) {
    throw ShapeError("input box bounds have different lengths");
  }
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    if (std::isnan(lower(i)) || std::isnan(upper(i)) || lower(i) > upper(i)) {
      throw DomainError("input box lower bound exceeds upper bound at index " +
                        std::to_string(i));
    }
  }
}

void LinearSystem::Validate() const {
  const auto n = A.rows(), mm = B.cols(), qq = S.rows(), pp = C.rows();
  Expect(A, n, n, "A");
  Expect(B, n, mm, "B");
  Expect(C, pp, n, "C");
  Expect(D, pp, mm, "D");
  Expect(Px, n, qq, "Px");
  Expect(Py, pp, qq, "Py");
  Expect(S, qq, qq, "S");
}

LinearSystem LinearSystem::WithoutExosystem(const MatrixXd& A,
                                            const MatrixXd& B,
                                            const MatrixXd& C,
                                            const MatrixXd& D) {
  LinearSystem sys{A,
                   B,
                   C,
                   D,
                   MatrixXd::Zero(A.rows(), 0),
                   MatrixXd::Zero(C.rows(), 0),
                   MatrixXd::Zero(0, 0)};
  sys.Validate();
  return sys;
}

SystemModel::SystemModel(std::string name, int n_p, int m, int q, int p,
                         Dynamics f, Exosystem s, Dynamics h, InputBox box,
                         JacobianFn jacobians)
    : name_(std::move(name)),
      n_p_(n_p),
      m_(m),
      q_(q),
      p_(p),
      f_(std::move(f)),
      s_(std::move(s)),
      h_(std::move(h)),
      box_(std::move(box)),
      jac_(std::move(jacobians)) {
  if (n_p < 0 || m < 0 || q < 0 || p < 0) {
    throw ShapeError("negative model dimension");
  }
  if (box_.size() != m) throw ShapeError("input box size differs from m");
  box_.Validate();
}

SystemModel SystemModel::FromLinear(const LinearSystem& sys,
                                    std::optional<InputBox> box,
                                    std::string name) {
  sys.Validate();
  const LinearSystem L = sys;
  auto f = [L](const VectorXd& x, const VectorXd& u, const VectorXd& w) {
    VectorXd r = L.A * x + L.B * u;
    if (L.q() > 0) r += L.Px * w;
    return r;
  };
  auto s = [L](const VectorXd& w) -> VectorXd {
    if (L.q() == 0) return VectorXd(0);
    return L.S * w;
  };
  auto h = [L](const VectorXd& x, const VectorXd& u, const VectorXd& w) {
    VectorXd r = L.C * x + L.D * u;
    if (L.q() > 0) r -= L.Py * w;
    return r;
  };
  auto jac = [L](const VectorXd&, const VectorXd&, const VectorXd&) {
    return ModelJacobians{L.A, L.B, L.Px, L.S, L.C, L.D, -L.Py};
  };
  SystemModel model(std::move(name), L.n_p(), L.m(), L.q(), L.p(), f, s, h,
                    box ? *box : InputBox::Unbounded(L.m()), jac);
  model.linear_ = L;
  return model;
}

void SystemModel::CheckShape(const VectorXd& x, const VectorXd& u,
                             const VectorXd& w) const {
  if (x.size() != n_p_ || u.size() != m_ || w.size() != q_) {
    throw ShapeError("model " + name_ + ": argument sizes (" +
                     std::to_string(x.size()) + "," +
                     std::to_string(u.size()) + "," +
                     std::to_string(w.size()) + ") do not match (" +
                     std::to_string(n_p_) + "," + std::to_string(m_) + "," +
                     std::to_string(q_) + ")");
  }
}

VectorXd SystemModel::Step(const VectorXd& x, const VectorXd& u,
                           const VectorXd& w) const {
  CheckShape(x, u, w);
  return f_(x, u, w);
}

VectorXd SystemModel::Exo(const VectorXd& w) const {
  if (w.size() != q_) throw ShapeError("exosystem state has wrong size");
  return s_(w);
}

VectorXd SystemModel::Output(const VectorXd& x, const VectorXd& u,
                             const VectorXd& w) const {
  CheckShape(x, u, w);
  return h_(x, u, w);
}

ModelJacobians SystemModel::Jacobians(const VectorXd& x, const VectorXd& u,
                                      const VectorXd& w) const {
  CheckShape(x, u, w);
  if (jac_) return jac_(x, u, w);
  return FiniteDifferenceJacobians(x, u, w);
}

ModelJacobians SystemModel::FiniteDifferenceJacobians(
    const VectorXd& x, const VectorXd& u, const VectorXd& w) const {
  CheckShape(x, u, w);
  // Differentiates g(z) with respect to z for each argument slot.
  auto diff = [](const auto& g, const VectorXd& z, Eigen::Index rows) {
    MatrixXd J(rows, z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double h = 1e-6 * (1.0 + std::abs(z(i)));
      VectorXd zp = z, zm = z;
      zp(i) += h;
      zm(i) -= h;
      J.col(i) = (g(zp) - g(zm)) / (2.0 * h);
    }
    return J;
  };
  ModelJacobians J;
  J.fx = diff([&](const VectorXd& z) { return f_(z, u, w); }, x, n_p_);
  J.fu = diff([&](const VectorXd& z) { return f_(x, z, w); }, u, n_p_);
  J.fw = diff([&](const VectorXd& z) { return f_(x, u, z); }, w, n_p_);
  J.sw = diff([&](const VectorXd& z) { return s_(z); }, w, q_);
  J.hx = diff([&](const VectorXd& z) { return h_(z, u, w); }, x, p_);
  J.hu = diff([&](const VectorXd& z) { return h_(x, z, w); }, u, p_);
  J.hw = diff([&](const VectorXd& z) { return h_(x, u, z); }, w, p_);
  return J;
}

VectorXd ContinuousOde::Derivative(const VectorXd& x, const VectorXd& u,
                                   const VectorXd& w) const {
  VectorXd d = rhs(x, u, w);
  if (scale.size() > 0) d = d.cwiseQuotient(scale);
  if (!AllFinite(d)) {
    throw NumericalError("non-finite derivative evaluation", x);
  }
  return d;
}

VectorXd Rk4Step(const ContinuousOde& ode, const VectorXd& x,
                 const VectorXd& u, const VectorXd& w, double dt) {
  const VectorXd k1 = ode.Derivative(x, u, w);
  const VectorXd k2 = ode.Derivative(x + 0.5 * dt * k1, u, w);
  const VectorXd k3 = ode.Derivative(x + 0.5 * dt * k2, u, w);
  const VectorXd k4 = ode.Derivative(x + dt * k3, u, w);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

namespace {

// RK4 step together with its sensitivities with respect to x, u and w.
struct Rk4Sensitivity {
  VectorXd x;
  MatrixXd dx, du, dw;
};

Rk4Sensitivity Rk4StepWithSensitivity(const ContinuousOde& ode,
                                      const VectorXd& x, const VectorXd& u,
                                      const VectorXd& w, double dt) {
  const auto n = x.size();
  VectorXd inv_scale = VectorXd::Ones(n);
  if (ode.scale.size() > 0) inv_scale = ode.scale.cwiseInverse();

  struct Stage {
    VectorXd k;
    MatrixXd kx, ku, kw;
  };
  // Evaluates the stage at x + c·k_prev, chaining the previous stage's
  // sensitivities.
  auto stage = [&](const Stage* prev, double c) {
    VectorXd xs = x;
    MatrixXd sx = MatrixXd::Identity(n, n);
    MatrixXd su = MatrixXd::Zero(n, u.size());
    MatrixXd sw = MatrixXd::Zero(n, w.size());
    if (prev) {
      xs += c * prev->k;
      sx += c * prev->kx;
      su = c * prev->ku;
      sw = c * prev->kw;
    }
    Stage s;
    s.k = ode.Derivative(xs, u, w);
    auto [jx, ju, jw] = ode.jacobian(xs, u, w);
    jx = inv_scale.asDiagonal() * jx;
    ju = inv_scale.asDiagonal() * ju;
    jw = inv_scale.asDiagonal() * jw;
    s.kx = jx * sx;
    s.ku = jx * su + ju;
    s.kw = jx * sw + (jw.size() ? jw : MatrixXd::Zero(n, w.size()));
    return s;
  };
  const Stage s1 = stage(nullptr, 0.0);
  const Stage s2 = stage(&s1, 0.5 * dt);
  const Stage s3 = stage(&s2, 0.5 * dt);
  const Stage s4 = stage(&s3, dt);
  const double c = dt / 6.0;
  Rk4Sensitivity out;
  out.x = x + c * (s1.k + 2.0 * s2.k + 2.0 * s3.k + s4.k);
  out.dx = MatrixXd::Identity(n, n) +
           c * (s1.kx + 2.0 * s2.kx + 2.0 * s3.kx + s4.kx);
  out.du = c * (s1.ku + 2.0 * s2.ku + 2.0 * s3.ku + s4.ku);
  out.dw = c * (s1.kw + 2.0 * s2.kw + 2.0 * s3.kw + s4.kw);
  return out;
}

}  // namespace

SystemModel Rk4Discretize(const ContinuousOde& ode, double dt,
                          SystemModel::Exosystem s, SystemModel::Dynamics h,
                          int p, InputBox box, std::string name, int substeps,
                          std::function<MatrixXd(const VectorXd&)> s_jac,
                          SystemModel::JacobianFn h_jac) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw DomainError("RK4 time step must be positive");
  }
  if (substeps < 1) throw DomainError("RK4 substep count must be at least 1");
  const double h_sub = dt / substeps;
  auto f = [ode, h_sub, substeps](const VectorXd& x, const VectorXd& u,
                                  const VectorXd& w) {
    VectorXd z = x;
    for (int i = 0; i < substeps; ++i) z = Rk4Step(ode, z, u, w, h_sub);
    return z;
  };
  SystemModel::JacobianFn jac;
  if (ode.jacobian && s_jac && h_jac) {
    jac = [ode, h_sub, substeps, s_jac, h_jac](
              const VectorXd& x, const VectorXd& u, const VectorXd& w) {
      const auto n = x.size();
      VectorXd z = x;
      MatrixXd dx = MatrixXd::Identity(n, n);
      MatrixXd du = MatrixXd::Zero(n, u.size());
      MatrixXd dw = MatrixXd::Zero(n, w.size());
      for (int i = 0; i < substeps; ++i) {
        const Rk4Sensitivity r = Rk4StepWithSensitivity(ode, z, u, w, h_sub);
        z = r.x;
        dx = r.dx * dx;
        du = r.dx * du + r.du;
        dw = r.dx * dw + r.dw;
      }
      ModelJacobians J = h_jac(x, u, w);
      J.fx = dx;
      J.fu = du;
      J.fw = dw;
      J.sw = s_jac(w);
      return J;
    };
  }
  return SystemModel(std::move(name), ode.n, ode.m, ode.q, p, f, std::move(s),
                     std::move(h), std::move(box), jac);
}

LinearSystem AcademicLinearSystem() {
  return LinearSystem::WithoutExosystem(
      MatrixXd::Constant(1, 1, 0.5), MatrixXd::Constant(1, 1, 1.0),
      MatrixXd::Constant(1, 1, 1.0), MatrixXd::Constant(1, 1, -1.0));
}

SystemModel AcademicExample() {
  return SystemModel::FromLinear(AcademicLinearSystem(), std::nullopt,
                                 "academic");
}

namespace {

constexpr double kPhiQuad = 0.1116;
constexpr double kPhiLin = 16.50;
constexpr double kAlphaDen = 3.56e10;

// dφ/dx₂ on the active branch, 0 where the clamp is active.
double CementPhiDerivative(double x2) {
  const double raw = -kPhiQuad * x2 * x2 + kPhiLin * x2;
  return raw > 0.0 ? -2.0 * kPhiQuad * x2 + kPhiLin : 0.0;
}

}  // namespace

double CementPhi(double x2) {
  return std::max(0.0, -kPhiQuad * x2 * x2 + kPhiLin * x2);
}

double CementAlpha(double x2, double u2) {
  const double g = std::pow(CementPhi(x2), 0.8) * std::pow(u2, 4);
  return g / (kAlphaDen + g);
}

ContinuousOde CementMillOde() {
  ContinuousOde ode;
  ode.n = 3;
  ode.m = 2;
  ode.q = 2;
  ode.scale = Eigen::Vector3d(0.3, 1.0, 0.01);
  ode.rhs = [](const VectorXd& x, const VectorXd& u, const VectorXd&) {
    const double phi = CementPhi(x(1));
    const double a = CementAlpha(x(1), u(1));
    VectorXd r(3);
    r << -x(0) + (1.0 - a) * phi, -phi + u(0) + x(2), -x(2) + a * phi;
    return r;
  };
  ode.jacobian = [](const VectorXd& x, const VectorXd& u, const VectorXd& w) {
    const double phi = CementPhi(x(1));
    const double dphi = CementPhiDerivative(x(1));
    const double u2 = u(1);
    const double g = std::pow(phi, 0.8) * std::pow(u2, 4);
    const double a = g / (kAlphaDen + g);
    const double da_dg = kAlphaDen / ((kAlphaDen + g) * (kAlphaDen + g));
    const double dg_dphi =
        phi > 0.0 ? 0.8 * std::pow(phi, -0.2) * std::pow(u2, 4) : 0.0;
    const double dg_du2 = 4.0 * std::pow(phi, 0.8) * std::pow(u2, 3);
    const double da_dx2 = da_dg * dg_dphi * dphi;
    const double da_du2 = da_dg * dg_du2;
    MatrixXd jx = MatrixXd::Zero(3, 3);
    jx(0, 0) = -1.0;
    jx(0, 1) = (1.0 - a) * dphi - phi * da_dx2;
    jx(1, 1) = -dphi;
    jx(1, 2) = 1.0;
    jx(2, 1) = a * dphi + phi * da_dx2;
    jx(2, 2) = -1.0;
    MatrixXd ju = MatrixXd::Zero(3, 2);
    ju(0, 1) = -phi * da_du2;
    ju(1, 0) = 1.0;
    ju(2, 1) = phi * da_du2;
    return std::make_tuple(jx, ju, MatrixXd::Zero(3, w.size()));
  };
  return ode;
}

SystemModel CementMill(int substeps) {
  auto s = [](const VectorXd& w) { return w; };
  auto h = [](const VectorXd& x, const VectorXd&, const VectorXd& w) {
    VectorXd y(2);
    y << x(0) - w(0), x(2) - w(1);
    return y;
  };
  auto s_jac = [](const VectorXd& w) {
    return MatrixXd::Identity(w.size(), w.size());
  };
  auto h_jac = [](const VectorXd&, const VectorXd&, const VectorXd&) {
    ModelJacobians J;
    J.hx = MatrixXd::Zero(2, 3);
    J.hx(0, 0) = 1.0;
    J.hx(1, 2) = 1.0;
    J.hu = MatrixXd::Zero(2, 2);
    J.hw = -MatrixXd::Identity(2, 2);
    return J;
  };
  return Rk4Discretize(CementMillOde(), kCementMillDt, s, h, 2,
                       InputBox::Bounded(Eigen::Vector2d(80.0, 165.0),
                                         Eigen::Vector2d(150.0, 180.0)),
                       "cement_mill", substeps, s_jac, h_jac);
}

RegulatorPoint CementMillRegulator(const VectorXd& w,
                                   RegulatorCoefficients coefficients) {
  if (w.size() != 2) throw ShapeError("cement mill reference must have size 2");
  const double w1 = w(0), w2 = w(1), total = w1 + w2;
  if (!(w1 > 0.0) || !(w2 > 0.0)) {
    throw DomainError("cement mill reference must be positive");
  }
  double center, radicand, gain;
  if (coefficients == RegulatorCoefficients::kExact) {
    // Smaller root of −0.1116 x₂² + 16.5 x₂ = w₁ + w₂.
    center = kPhiLin / (2.0 * kPhiQuad);
    radicand = center * center - total / kPhiQuad;
    gain = std::pow(kAlphaDen, 0.25);
  } else {
    center = 73.9;
    radicand = 5.5e3 - 8.9 * total;
    gain = 434.0;
  }
  if (!(radicand > 0.0)) {
    throw DomainError("cement mill regulator radicand is not positive");
  }
  RegulatorPoint r;
  r.x_ref = Eigen::Vector3d(w1, center - std::sqrt(radicand), w2);
  r.u_ref = Eigen::Vector2d(
      w1, gain * std::pow(w2 / w1, 0.25) * std::pow(total, -0.2));
  return r;
}

RegulatorMap RegulatorMap::FromMatrices(const MatrixXd& Pi,
                                        const MatrixXd& Gamma) {
  return {[Pi](const VectorXd& w) -> VectorXd {
            if (Pi.cols() == 0) return VectorXd::Zero(Pi.rows());
            return Pi * w;
          },
          [Gamma](const VectorXd& w) -> VectorXd {
            if (Gamma.cols() == 0) return VectorXd::Zero(Gamma.rows());
            return Gamma * w;
          }};
}

RegulatorMap RegulatorMap::CementMill(RegulatorCoefficients c) {
  return {[c](const VectorXd& w) { return CementMillRegulator(w, c).x_ref; },
          [c](const VectorXd& w) { return CementMillRegulator(w, c).u_ref; }};
}

std::pair<double, double> RegulatorResidual(const SystemModel& model,
                                            const RegulatorMap& reg,
                                            const VectorXd& w) {
  const VectorXd px = reg.pi_x(w);
  const VectorXd pu = reg.pi_u(w);
  const double r_dyn = (reg.pi_x(model.Exo(w)) - model.Step(px, pu, w)).norm();
  const double r_out = model.Output(px, pu, w).norm();
  return {r_dyn, r_out};
}

LinearSystem ParseLinearSystem(const std::string& text) {
  std::istringstream in(text);
  // Skip comment lines starting with '#'.
  std::string cleaned, line;
  while (std::getline(in, line)) {
    const auto pos = line.find('#');
    if (pos != std::string::npos) line.erase(pos);
    cleaned += line + "\n";
  }
  std::istringstream tokens(cleaned);
  long n = -1, m = -1, q = -1, p = -1;
  if (!(tokens >> n >> m >> q >> p) || n < 0 || m < 0 || q < 0 || p < 0) {
    throw ConfigError("LTI file header must be 'n_p m q p'");
  }
  auto read = [&](Eigen::Index rows, Eigen::Index cols, const char* name) {
    MatrixXd M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        std::string tok;
        if (!(tokens >> tok)) {
          throw ConfigError(std::string("LTI file ends inside matrix ") +
                            name);
        }
        try {
          std::size_t used = 0;
          M(i, j) = std::stod(tok, &used);
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw ConfigError(std::string("LTI file: bad number '") + tok +
                            "' in matrix " + name);
        }
      }
    }
    return M;
  };
  LinearSystem sys;
  sys.A = read(n, n, "A");
  sys.B = read(n, m, "B");
  sys.C = read(p, n, "C");
  sys.D = read(p, m, "D");
  sys.Px = read(n, q, "Px");
  sys.Py = read(p, q, "Py");
  sys.S = read(q, q, "S");
  std::string extra;
  if (tokens >> extra) throw ConfigError("LTI file has trailing data");
  sys.Validate();
  return sys;
}

LinearSystem LoadLinearSystem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open LTI file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return ParseLinearSystem(buf.str());
}

}  // namespace regmpc
