#include "regmpc/models.h"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

namespace regmpc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

VectorXd V(std::initializer_list<double> v) {
  VectorXd out(v.size());
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

ContinuousOde ScalarOde(std::function<double(double)> rhs) {
  ContinuousOde ode;
  ode.n = 1;
  ode.rhs = [rhs](const VectorXd& x, const VectorXd&, const VectorXd&) {
    return V({rhs(x(0))});
  };
  return ode;
}

TEST(InputBoxTest, ProjectContainsMidpoint) {
  const InputBox box = InputBox::Bounded(V({80, 165}), V({150, 180}));
  EXPECT_TRUE(box.Contains(V({100, 170})));
  EXPECT_FALSE(box.Contains(V({79.9, 170})));
  EXPECT_EQ(box.Project(V({0, 200})), V({80, 180}));
  EXPECT_EQ(box.Midpoint(), V({115, 172.5}));
  EXPECT_TRUE(box.IsConstrained());

  const InputBox free = InputBox::Unbounded(2);
  EXPECT_FALSE(free.IsConstrained());
  EXPECT_EQ(free.Midpoint(), V({0, 0}));
  EXPECT_EQ(free.Project(V({1e300, -3})), V({1e300, -3}));

  const InputBox half{V({2}), V({kInf})};
  EXPECT_EQ(half.Midpoint(), V({2}));
}

TEST(InputBoxTest, RejectsInvertedBounds) {
  EXPECT_THROW(InputBox::Bounded(V({1}), V({0})), DomainError);
}

TEST(Rk4Test, ZeroVectorFieldIsIdentity) {
  const ContinuousOde ode = ScalarOde([](double) { return 0.0; });
  EXPECT_EQ(Rk4Step(ode, V({3}), VectorXd(0), VectorXd(0), 1.0), V({3}));
}

TEST(Rk4Test, LinearDecayMatchesTruncatedSeries) {
  const ContinuousOde ode = ScalarOde([](double x) { return -x; });
  const double h = 0.1;
  const double series = 1 - h + h * h / 2 - h * h * h / 6 + h * h * h * h / 24;
  const SystemModel model = Rk4Discretize(
      ode, h, [](const VectorXd& w) { return w; },
      [](const VectorXd& x, const VectorXd&, const VectorXd&) { return x; }, 1,
      InputBox::Unbounded(0));
  EXPECT_NEAR(model.Step(V({1}), VectorXd(0), VectorXd(0))(0), series, 1e-15);
  EXPECT_NEAR(series, 0.9048375, 1e-7);
}

TEST(Rk4Test, NonFiniteDerivativeCarriesState) {
  const ContinuousOde ode = ScalarOde([](double x) { return std::log(x); });
  try {
    Rk4Step(ode, V({-2.0}), VectorXd(0), VectorXd(0), 0.1);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    ASSERT_EQ(e.state().size(), 1);
    EXPECT_EQ(e.state()(0), -2.0);
  }
}

TEST(Rk4Test, RejectsNonPositiveStep) {
  const ContinuousOde ode = ScalarOde([](double) { return 0.0; });
  auto s = [](const VectorXd& w) { return w; };
  auto h = [](const VectorXd& x, const VectorXd&, const VectorXd&) { return x; };
  EXPECT_THROW(Rk4Discretize(ode, 0.0, s, h, 1, InputBox::Unbounded(0)),
               DomainError);
  EXPECT_THROW(Rk4Discretize(ode, 0.1, s, h, 1, InputBox::Unbounded(0), "x", 0),
               DomainError);
}

TEST(AcademicExampleTest, DynamicsAndOutput) {
  const SystemModel m = AcademicExample();
  EXPECT_EQ(m.n_p(), 1);
  EXPECT_EQ(m.m(), 1);
  EXPECT_EQ(m.p(), 1);
  EXPECT_EQ(m.q(), 0);
  EXPECT_FALSE(m.input_box().IsConstrained());
  const VectorXd w(0);
  EXPECT_DOUBLE_EQ(m.Step(V({2}), V({1}), w)(0), 2.0);
  EXPECT_DOUBLE_EQ(m.Output(V({1}), V({1}), w)(0), 0.0);
  EXPECT_DOUBLE_EQ(m.Output(V({1}), V({0}), w)(0), 1.0);
}

TEST(CementMillTest, GrindingFlowAndClamp) {
  EXPECT_NEAR(CementPhi(50.0), -0.1116 * 2500 + 16.50 * 50, 1e-12);
  EXPECT_NEAR(CementPhi(50.0), 546.0, 1e-12);
  EXPECT_EQ(CementPhi(0.0), 0.0);
  EXPECT_EQ(CementPhi(-5.0), 0.0);
  for (double x2 = -200; x2 <= 400; x2 += 0.37) EXPECT_GE(CementPhi(x2), 0.0);
}

TEST(CementMillTest, ClassifierSplitRegression) {
  const double a = CementAlpha(50.0, 170.0);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
  EXPECT_NEAR(a, 0.7840925899157734, 1e-13);
}

TEST(CementMillTest, DimensionsAndConstraints) {
  const SystemModel m = CementMill();
  EXPECT_EQ(m.n_p(), 3);
  EXPECT_EQ(m.m(), 2);
  EXPECT_EQ(m.q(), 2);
  EXPECT_EQ(m.p(), 2);
  EXPECT_EQ(m.input_box().lower, V({80, 165}));
  EXPECT_EQ(m.input_box().upper, V({150, 180}));
  EXPECT_EQ(m.Exo(V({110, 425})), V({110, 425}));
  EXPECT_EQ(m.Output(V({1, 2, 3}), V({100, 170}), V({0.5, 1})), V({0.5, 2}));
}

TEST(CementMillTest, StepIsOneRk4StepOfTheScaledOde) {
  const SystemModel m = CementMill();
  const VectorXd x = V({120, 55, 450}), u = V({100, 170}), w = V({110, 425});
  // Independent evaluation of the scaled vector field.
  auto rhs = [&](const VectorXd& z) {
    const double phi = std::max(0.0, -0.1116 * z(1) * z(1) + 16.5 * z(1));
    const double g = std::pow(phi, 0.8) * std::pow(u(1), 4);
    const double a = g / (3.56e10 + g);
    return V({(-z(0) + (1 - a) * phi) / 0.3, -phi + u(0) + z(2),
              (-z(2) + a * phi) / 0.01});
  };
  const double h = 1.0 / 60.0;
  const VectorXd k1 = rhs(x), k2 = rhs(x + h / 2 * k1), k3 = rhs(x + h / 2 * k2),
                 k4 = rhs(x + h * k3);
  const VectorXd expected = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  EXPECT_LT((m.Step(x, u, w) - expected).norm(), 1e-10);
}

TEST(CementMillTest, ExactRegulatorIsFixedPoint) {
  const SystemModel m = CementMill();
  const VectorXd w = V({110, 425});
  const RegulatorPoint r = CementMillRegulator(w);
  EXPECT_DOUBLE_EQ(r.u_ref(0), 110.0);
  EXPECT_EQ(r.x_ref(0), 110.0);
  EXPECT_EQ(r.x_ref(2), 425.0);
  EXPECT_LT((m.Step(r.x_ref, r.u_ref, w) - r.x_ref).norm(), 1e-6);
  EXPECT_EQ(m.Output(r.x_ref, r.u_ref, w).norm(), 0.0);
  EXPECT_TRUE(m.input_box().Contains(r.u_ref));
  EXPECT_GT((r.u_ref - m.input_box().lower).minCoeff(), 0.0);
  EXPECT_GT((m.input_box().upper - r.u_ref).minCoeff(), 0.0);
  // Steady state: φ(x₂) = w₁ + w₂.
  EXPECT_NEAR(CementPhi(r.x_ref(1)), 535.0, 1e-9);
}

TEST(CementMillTest, PublishedCoefficientsMatchRoundedFormula) {
  const RegulatorPoint r = CementMillRegulator(
      V({110, 425}), RegulatorCoefficients::kPublished);
  EXPECT_NEAR(r.x_ref(1), 73.9 - std::sqrt(738.5), 1e-12);
  EXPECT_NEAR(r.x_ref(1), 46.725, 1e-3);
  EXPECT_DOUBLE_EQ(r.u_ref(0), 110.0);
  EXPECT_NEAR(r.u_ref(1), 434 * std::pow(425.0 / 110, 0.25) * std::pow(535.0, -0.2),
              1e-12);
}

TEST(CementMillTest, RegulatorResidualOnReferenceGrid) {
  const SystemModel m = CementMill();
  const RegulatorMap reg = RegulatorMap::CementMill();
  for (double w1 = 100; w1 <= 120; w1 += 5) {
    for (double w2 = 410; w2 <= 430; w2 += 5) {
      const auto [r_dyn, r_out] = RegulatorResidual(m, reg, V({w1, w2}));
      EXPECT_LT(r_dyn, 1e-6) << w1 << "," << w2;
      EXPECT_LT(r_out, 1e-6);
    }
  }
}

TEST(CementMillTest, RegulatorRadicandDomain) {
  EXPECT_THROW(CementMillRegulator(V({200, 450})), DomainError);
  EXPECT_THROW(CementMillRegulator(V({200, 420}), RegulatorCoefficients::kPublished),
               DomainError);
  EXPECT_THROW(CementMillRegulator(V({110})), ShapeError);
}

TEST(CementMillTest, Rk4OrderAtSampleTime) {
  // One-step error against a fine RK4 reference; halving dt should cut the
  // local error by about 2^5.
  const ContinuousOde ode = CementMillOde();
  const VectorXd x = V({120, 55, 450}), u = V({110, 173}), w = V({110, 425});
  auto reference = [&](double dt) {
    VectorXd z = x;
    const int n = 4000;
    for (int i = 0; i < n; ++i) z = Rk4Step(ode, z, u, w, dt / n);
    return z;
  };
  const double dt = kCementMillDt;
  const double e1 = (Rk4Step(ode, x, u, w, dt) - reference(dt)).norm();
  const double e2 = (Rk4Step(ode, x, u, w, dt / 2) - reference(dt / 2)).norm();
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 20.0);
  EXPECT_LE(ratio, 44.0);
}

TEST(CementMillTest, SubstepSensitivity) {
  // One RK4 step per minute is the default. Finer substeps change the
  // one-step map by a bounded amount away from equilibrium and leave the
  // regulator point fixed.
  const SystemModel one = CementMill(1), four = CementMill(4);
  const VectorXd x = V({120, 55, 450}), u = V({110, 173}), w = V({110, 425});
  const double diff = (one.Step(x, u, w) - four.Step(x, u, w)).norm();
  EXPECT_GT(diff, 1e-3);
  EXPECT_LT(diff, 1.0);
  const RegulatorPoint r = CementMillRegulator(w);
  EXPECT_LT((four.Step(r.x_ref, r.u_ref, w) - r.x_ref).norm(), 1e-6);
}

TEST(CementMillTest, AnalyticJacobiansMatchFiniteDifferences) {
  const SystemModel m = CementMill();
  ASSERT_TRUE(m.has_analytic_jacobians());
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x1(90, 130), x2(40, 60), x3(380, 470),
      u1(80, 150), u2(165, 180);
  auto rel = [](const MatrixXd& a, const MatrixXd& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
  };
  for (int i = 0; i < 20; ++i) {
    const VectorXd x = V({x1(rng), x2(rng), x3(rng)}), u = V({u1(rng), u2(rng)});
    const VectorXd w = V({110, 425});
    const ModelJacobians a = m.Jacobians(x, u, w);
    const ModelJacobians fd = m.FiniteDifferenceJacobians(x, u, w);
    EXPECT_LT(rel(a.fx, fd.fx), 1e-4);
    EXPECT_LT(rel(a.fu, fd.fu), 1e-4);
    EXPECT_LT(rel(a.fw, fd.fw), 1e-4);
    EXPECT_LT(rel(a.hx, fd.hx), 1e-8);
    EXPECT_LT(rel(a.hw, fd.hw), 1e-8);
  }
}

TEST(CementMillTest, ClampedBranchHasZeroSubgradient) {
  const ContinuousOde ode = CementMillOde();
  const auto [jx, ju, jw] = ode.jacobian(V({100, -5, 400}), V({100, 170}), V({0, 0}));
  EXPECT_EQ(jx(1, 1), 0.0);
  EXPECT_EQ(ju(0, 1), 0.0);
}

TEST(LinearSystemTest, FromLinearRoundTripAndDynamics) {
  LinearSystem sys;
  sys.A = (MatrixXd(2, 2) << 0.5, 1, 0, 0.9).finished();
  sys.B = (MatrixXd(2, 1) << 0, 1).finished();
  sys.C = (MatrixXd(1, 2) << 1, 0).finished();
  sys.D = MatrixXd::Zero(1, 1);
  sys.Px = (MatrixXd(2, 1) << 1, 0).finished();
  sys.Py = MatrixXd::Constant(1, 1, 2.0);
  sys.S = MatrixXd::Constant(1, 1, 1.0);
  const SystemModel m = SystemModel::FromLinear(sys);
  ASSERT_TRUE(m.linear().has_value());
  EXPECT_EQ(m.linear()->A, sys.A);
  EXPECT_EQ(m.linear()->Py, sys.Py);
  const VectorXd x = V({1, 2}), u = V({3}), w = V({4});
  EXPECT_EQ(m.Step(x, u, w), sys.A * x + sys.B * u + sys.Px * w);
  EXPECT_EQ(m.Output(x, u, w), sys.C * x + sys.D * u - sys.Py * w);
  EXPECT_THROW(m.Step(V({1}), u, w), ShapeError);
}

TEST(LinearSystemTest, ValidateRejectsInconsistentShapes) {
  LinearSystem sys = AcademicLinearSystem();
  sys.B = MatrixXd::Zero(2, 1);
  EXPECT_THROW(sys.Validate(), ShapeError);
}

TEST(LinearSystemTest, ParsesMatrixFile) {
  const std::string text =
      "# double integrator with a constant disturbance\n"
      "2 1 1 1\n"
      "1 1\n0 1\n"   // A
      "0\n1\n"       // B
      "1 0\n"        // C
      "0\n"          // D
      "0\n1\n"       // Px
      "0\n"          // Py
      "1\n";         // S
  const LinearSystem sys = ParseLinearSystem(text);
  EXPECT_EQ(sys.n_p(), 2);
  EXPECT_EQ(sys.A, (MatrixXd(2, 2) << 1, 1, 0, 1).finished());
  EXPECT_EQ(sys.Px, (MatrixXd(2, 1) << 0, 1).finished());
  EXPECT_EQ(sys.S(0, 0), 1.0);
}

TEST(LinearSystemTest, MalformedMatrixFile) {
  EXPECT_THROW(ParseLinearSystem("2 1\n"), ConfigError);
  EXPECT_THROW(ParseLinearSystem("1 1 0 1\n0.5 1 1\n"), ConfigError);
  EXPECT_THROW(ParseLinearSystem("1 1 0 1\n0.5 1 1 x\n"), ConfigError);
  EXPECT_THROW(ParseLinearSystem("1 1 0 1\n0.5 1 1 0 7\n"), ConfigError);
  EXPECT_THROW(LoadLinearSystem("/nonexistent/file.txt"), ConfigError);
}

TEST(SystemModelTest, FiniteDifferenceFallback) {
  SystemModel m(
      "quad", 1, 1, 0, 1,
      [](const VectorXd& x, const VectorXd& u, const VectorXd&) {
        return V({x(0) * x(0) + 3 * u(0)});
      },
      [](const VectorXd& w) { return w; },
      [](const VectorXd& x, const VectorXd& u, const VectorXd&) {
        return V({std::sin(x(0)) - u(0)});
      },
      InputBox::Unbounded(1));
  EXPECT_FALSE(m.has_analytic_jacobians());
  const ModelJacobians J = m.Jacobians(V({2}), V({1}), VectorXd(0));
  EXPECT_NEAR(J.fx(0, 0), 4.0, 1e-8);
  EXPECT_NEAR(J.fu(0, 0), 3.0, 1e-8);
  EXPECT_NEAR(J.hx(0, 0), std::cos(2.0), 1e-8);
  EXPECT_NEAR(J.hu(0, 0), -1.0, 1e-8);
}

}  // namespace
}  // namespace regmpc
