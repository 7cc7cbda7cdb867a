// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "regmpc/augmentation.h"
#include "regmpc/config.h"
#include "regmpc/linear_analysis.h"
#include "regmpc/models.h"
#include "regmpc/mpc.h"
#include "regmpc/simulation.h"
#include "test_util.h"

namespace regmpc {
namespace {

using testing::M1;
using testing::RandomMatrix;
using testing::V;

constexpr double kInf = std::numeric_limits<double>::infinity();
// Reference value the decrease check of criterion 5 is stated against.
constexpr double kReferenceEpsilonO = 0.3343;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

std::string Preset(const std::string& name) {
  return std::string(REGMPC_SOURCE_DIR) + "/presets/" + name;
}

struct AcademicAnalysis {
  LinearSystem sys = AugmentLinear(AcademicLinearSystem(), 1);
  QuadraticStageCost cost = QuadraticStageCost::FromOutputCost(sys, M1(1), M1(1));
  QuadraticCertificate P = Dare(sys.A, sys.B, cost);
  double epsilon_o = EpsilonO(cost, P);
};

Outcome Criterion1() {
  const AcademicAnalysis a;
  const bool pass = std::abs(a.epsilon_o - kReferenceEpsilonO) <= 1e-3;
  return {pass, "epsilon_o = " + Fmt("%.6g", a.epsilon_o) + " (target 0.3343 +/- 1e-3)"};
}

Outcome Criterion2() {
  const AcademicAnalysis a;
  BoundsInput in;
  in.gamma_s = 1.0;
  in.epsilon_o = a.epsilon_o;
  in.N = 10;
  const BoundsReport r = HorizonBounds(in);
  in.epsilon_o = kReferenceEpsilonO;
  const double n1_reference = HorizonBounds(in).N_1;
  const bool pass = r.N_1 >= 9.8 && r.N_1 <= 10.1;
  return {pass, "N_1 = " + Fmt("%.6g", r.N_1) + " (target [9.8, 10.1]); with epsilon_o = 0.3343: " +
                    Fmt("%.6g", n1_reference)};
}

Outcome Criterion3() {
  const AcademicAnalysis a;
  const auto [nu, c_o] = SmallestObservabilityHorizon(a.sys, a.cost, a.P);
  BoundsInput in;
  in.gamma_s = 1.0;
  in.epsilon_o = a.epsilon_o;
  in.nu = nu;
  in.c_o = c_o;
  in.N = 10;
  const double n_s = HorizonBounds(in).N_Ybar_s.value_or(kInf);
  // Positivity of the improved index above the threshold, where defined.
  bool positive = std::isfinite(n_s);
  if (positive) {
    for (int N = static_cast<int>(std::floor(n_s)) + 1; N <= 60; ++N) {
      in.N = N;
      const double s = *HorizonBounds(in).alpha_Ns;
      if ((N % nu == 0 || N >= nu * (std::floor((n_s - nu) / nu) + 2)) && !(s > 0)) {
        positive = false;
      }
    }
  }
  in.epsilon_o = kReferenceEpsilonO;
  in.N = 10;
  const double n_s_reference = HorizonBounds(in).N_Ybar_s.value_or(kInf);
  const bool pass = n_s >= 2.8 && n_s <= 3.8 && positive;
  std::ostringstream d;
  d << "nu = " << nu << ", c_o = " << Fmt("%.6g", c_o) << ", N_Ybar_s = " << Fmt("%.6g", n_s)
    << " (target [2.8, 3.8]), alpha_Ns > 0 above it: " << (positive ? "yes" : "no")
    << "; with epsilon_o = 0.3343: " << Fmt("%.6g", n_s_reference);
  return {pass, d.str()};
}

ScenarioSpec Academic(CostVariant variant, int N, int steps) {
  ScenarioSpec s(AcademicExample());
  s.mpc.variant = variant;
  s.mpc.horizon = N;
  s.mpc.Q = M1(1);
  s.mpc.R = M1(1);
  s.mpc.period = 1;
  s.x0 = V({1});
  s.w0 = VectorXd(0);
  s.steps = steps;
  return s;
}

Outcome Criterion4() {
  const SimTrace t = Run(Academic(CostVariant::kOutputOnly, 10, 11));
  double y_err = 0, x_err = 0;
  for (std::size_t k = 0; k < t.steps.size(); ++k) {
    y_err = std::max(y_err, std::abs(t.steps[k].y(0)));
    if (k + 1 < t.steps.size()) {
      x_err = std::max(x_err, std::abs(t.steps[k + 1].x(0) - 1.5 * t.steps[k].x(0)));
    }
  }
  const bool pass = t.completed && t.steps.size() == 11 && y_err <= 1e-9 && x_err <= 1e-9;
  return {pass, "max |y_t| = " + Fmt("%.3g", y_err) + ", max |x_{t+1} - 1.5 x_t| = " +
                    Fmt("%.3g", x_err) + ", x_10 = " + Fmt("%.6g", t.steps.back().x(0))};
}

Outcome Criterion5() {
  const SimTrace t = Run(Academic(CostVariant::kIncrementalInput, 10, 61));
  if (!t.completed) return {false, "run failed: " + t.failure};
  const MetricsReport m = ComputeMetrics(t, AcademicExample().input_box());
  bool monotone = true;
  for (int k = 2; k <= 60; ++k) monotone = monotone && m.sigma[k] < m.sigma[k - 1];

  // Decrease of the value function at N = 12 with σ measured on the
  // augmented state (x, memory) through the Riccati metric.
  const AcademicAnalysis a;
  const int N = 12;
  ScenarioSpec s = Academic(CostVariant::kIncrementalInput, N, 61);
  const SimTrace t12 = Run(s);
  if (!t12.completed) return {false, "run failed at N = 12: " + t12.failure};
  std::vector<double> sigma_a;
  for (const StepRecord& r : t12.steps) {
    const VectorXd xa = V({r.x(0), r.memory(0)});
    sigma_a.push_back(xa.dot(a.P.P * xa));
  }
  const double eps = kReferenceEpsilonO;
  const double alpha = 1 - 1 / (eps * eps * (N - 1));
  const DecreaseReport d =
      DecreaseCheck(t12, MakeValueEvaluator(s.model, s.mpc), sigma_a, alpha * eps);
  const bool pass = monotone && m.sigma[60] < 1e-6 && d.max_margin <= 1e-8;
  std::ostringstream o;
  o << "sigma monotone: " << (monotone ? "yes" : "no") << ", sigma(60) = "
    << Fmt("%.3g", m.sigma[60]) << ", decay rate = " << Fmt("%.6g", m.decay_rate)
    << "; N = 12 decrease with alpha = " << Fmt("%.6g", alpha)
    << ": max margin = " << Fmt("%.3g", d.max_margin);
  return {pass, o.str()};
}

Outcome Criterion6() {
  std::mt19937_64 rng(1);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    worst = std::max(worst, testing::RandomEquivalenceInstance(rng).RelativeGap());
  }
  return {worst <= 1e-6, "50 instances, max relative gap = " + Fmt("%.3g", worst)};
}

Outcome Criterion7() {
  std::mt19937_64 rng(2);
  int agree = 0, detectable = 0;
  for (int i = 0; i < 200; ++i) {
    const testing::RandomSquareCase c = testing::RandomSquareSystem(rng);
    const bool predicted = PbhDetectable(c.sys.A, c.sys.C) && Nonresonance(c.sys, c.T).pass;
    const bool verdict = BuildAugmentedPair(c.sys, c.T).detectable;
    agree += predicted == verdict;
    detectable += verdict;
  }
  const bool pass = agree == 200 && detectable > 0 && detectable < 200;
  std::ostringstream o;
  o << agree << "/200 verdicts agree (" << detectable << " detectable, " << 200 - detectable
    << " not)";
  return {pass, o.str()};
}

Outcome Criterion8() {
  const ScenarioConfig config = ScenarioConfig::Load(Preset("cement_mill_nominal.ini"));
  const ScenarioSpec s = BuildScenario(config, std::string(REGMPC_SOURCE_DIR) + "/presets");
  const SimTrace t = Run(s);
  if (!t.completed) return {false, "run failed: " + t.failure};
  const MetricsReport m = ComputeMetrics(t, s.model.input_box());
  const auto [r_state, r_output] =
      RegulatorResidual(s.model, RegulatorMap::CementMill(), s.w0);
  const double residual = std::max(r_state, r_output);
  const bool pass = m.max_violation <= 1e-9 && m.final_output_norm < 1e-2 && residual < 1e-5;
  std::ostringstream o;
  o << "max input violation = " << Fmt("%.3g", m.max_violation)
    << ", final |y| = " << Fmt("%.3g", m.final_output_norm)
    << ", regulator residual = " << Fmt("%.3g", residual);
  return {pass, o.str()};
}

Outcome Criterion9() {
  const auto start = std::chrono::steady_clock::now();
  ScenarioConfig config = ScenarioConfig::Load(Preset("cement_mill_error_feedback.ini"));
  bool all_ok = true;
  double worst_sup = 0, lo = kInf, hi = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    config.sim.seed = seed;
    const ScenarioSpec s = BuildScenario(config, std::string(REGMPC_SOURCE_DIR) + "/presets");
    const SimTrace t = Run(s);
    const MetricsReport m = ComputeMetrics(t, s.model.input_box());
    const bool ok = t.completed && m.max_violation <= 1e-9 &&
                    m.second_half_sup_output < 5 && std::isfinite(m.l2_ratio);
    all_ok = all_ok && ok;
    worst_sup = std::max(worst_sup, m.second_half_sup_output);
    lo = std::min(lo, m.l2_ratio);
    hi = std::max(hi, m.l2_ratio);
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double spread = hi / lo;
  const bool pass = all_ok && spread <= 3 && seconds < 300;
  std::ostringstream o;
  o << "seeds 0-9: all complete and feasible: " << (all_ok ? "yes" : "no")
    << ", worst second-half sup |y| = " << Fmt("%.4g", worst_sup) << ", L2 ratio in ["
    << Fmt("%.4g", lo) << ", " << Fmt("%.4g", hi) << "] (max/min " << Fmt("%.3g", spread)
    << "), " << Fmt("%.1f", seconds) << " s";
  return {pass, o.str()};
}

MpcConfig Config(CostVariant variant, int N, MatrixXd Q, MatrixXd R) {
  MpcConfig c;
  c.variant = variant;
  c.horizon = N;
  c.Q = std::move(Q);
  c.R = std::move(R);
  return c;
}

double RelativeError(const VectorXd& a, const VectorXd& b) {
  return (a - b).norm() / std::max(1e-8, b.norm());
}

Outcome Criterion10() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(-1, 1);
  const SystemModel academic = AcademicExample();
  const SystemModel mill = CementMill();
  const LinearSystem lti = testing::RandomLinearSystem(rng, 3, 2, 2, 2);
  const SystemModel lti_model = SystemModel::FromLinear(lti);
  const RegulatorSolution lti_reg = SolveRegulator(lti);

  double grad_academic = 0, grad_lti = 0, grad_mill = 0;
  for (int i = 0; i < 50; ++i) {
    const CostVariant variants[] = {CostVariant::kOutputOnly, CostVariant::kIncrementalInput,
                                    CostVariant::kLookAhead, CostVariant::kInputRegularized};
    const CostVariant v = variants[i % 4];
    MpcConfig c = Config(v, 4, M1(1.3), M1(0.7));
    c.period = 2;
    c.look_ahead = 1;
    const Ocp a(academic, c, V({2 * unit(rng)}), VectorXd(0),
                v == CostVariant::kIncrementalInput ? VectorXd(RandomMatrix(rng, 2, 1))
                                                    : VectorXd(),
                RegulatorMap::FromMatrices(MatrixXd(1, 0), MatrixXd(1, 0)));
    const VectorXd ua = RandomMatrix(rng, 4, 1);
    grad_academic = std::max(
        grad_academic, RelativeError(a.Gradient(ua), testing::CentralDifferenceGradient(a, ua)));

    const Ocp l(lti_model,
                Config(CostVariant::kInputRegularized, 5, MatrixXd::Identity(2, 2),
                       0.1 * MatrixXd::Identity(2, 2)),
                RandomMatrix(rng, 3, 1), RandomMatrix(rng, 2, 1), VectorXd(), lti_reg.Map());
    const VectorXd ul = RandomMatrix(rng, 10, 1);
    grad_lti =
        std::max(grad_lti, RelativeError(l.Gradient(ul), testing::CentralDifferenceGradient(l, ul)));

    const VectorXd x = V({110 + 10 * unit(rng), 50 + 5 * unit(rng), 425 + 20 * unit(rng)});
    const Ocp m(mill,
                Config(CostVariant::kIncrementalInput, 6, MatrixXd::Identity(2, 2),
                       0.01 * MatrixXd::Identity(2, 2)),
                x, V({110, 425}), V({110 + 30 * unit(rng), 172 + 6 * unit(rng)}));
    VectorXd um(12);
    for (int k = 0; k < 6; ++k) {
      um.segment(2 * k, 2) = V({110 + 30 * unit(rng), 172 + 6 * unit(rng)});
    }
    grad_mill = std::max(grad_mill,
                         RelativeError(m.Gradient(um), testing::CentralDifferenceGradient(m, um)));
  }
  const double grad_worst = std::max({grad_academic, grad_lti, grad_mill});

  double lq_worst = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int N = 4;
    const LinearSystem sys = testing::RandomLinearSystem(rng, 3, 2, 2, 2);
    const RegulatorSolution reg = SolveRegulator(sys);
    const MatrixXd Q = MatrixXd::Identity(2, 2), R = 0.5 * MatrixXd::Identity(2, 2);
    const VectorXd x0 = RandomMatrix(rng, 3, 1), w0 = RandomMatrix(rng, 2, 1);
    const SystemModel model = SystemModel::FromLinear(sys);
    const Ocp ocp(model, Config(CostVariant::kInputRegularized, N, Q, R), x0, w0, VectorXd(),
                  reg.Map());
    const VectorXd oracle = testing::StackedLqOracle(sys, reg, Q, R, N, x0, w0);
    const VectorXd got = Solve(ocp).u_opt.transpose().reshaped();
    lq_worst = std::max(lq_worst, (got - oracle).norm() / (1 + oracle.norm()));
  }

  int warm_increase = 0;
  for (int i = 0; i < 10; ++i) {
    const VectorXd x = V({120 + 5 * unit(rng), 55 + 3 * unit(rng), 450 + 10 * unit(rng)});
    const Ocp ocp(mill,
                  Config(CostVariant::kIncrementalInput, 6, MatrixXd::Identity(2, 2),
                         0.01 * MatrixXd::Identity(2, 2)),
                  x, V({110, 425}), V({100, 170}));
    const OcpSolution first = Solve(ocp);
    const VectorXd warm = first.u_opt.transpose().reshaped();
    const OcpSolution again = Solve(ocp, warm);
    if (again.value > first.value + 1e-12 * (1 + first.value)) ++warm_increase;
  }

  const bool pass = grad_worst < 1e-4 && lq_worst <= 1e-6 && warm_increase == 0;
  std::ostringstream o;
  o << "adjoint vs FD max rel error (academic/lti/mill, 50 points each) = "
    << Fmt("%.2g", grad_academic) << "/" << Fmt("%.2g", grad_lti) << "/"
    << Fmt("%.2g", grad_mill) << ", LQ vs stacked oracle = " << Fmt("%.2g", lq_worst)
    << ", warm-start increases = " << warm_increase;
  return {pass, o.str()};
}

}  // namespace
}  // namespace regmpc

int main() {
  const std::vector<std::function<regmpc::Outcome()>> criteria = {
      regmpc::Criterion1, regmpc::Criterion2, regmpc::Criterion3, regmpc::Criterion4,
      regmpc::Criterion5, regmpc::Criterion6, regmpc::Criterion7, regmpc::Criterion8,
      regmpc::Criterion9, regmpc::Criterion10};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    regmpc::Outcome r;
    try {
      r = criteria[i]();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !r.pass;
    std::printf("Criterion %zu: %s  %s  [%.2f s]\n", i + 1, r.pass ? "PASS" : "FAIL",
                r.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
