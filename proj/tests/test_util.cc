#include "test_util.h"

#include <Eigen/Eigenvalues>

#include "regmpc/augmentation.h"

namespace regmpc {
namespace testing {

MatrixXd RandomWithSpectralRadius(std::mt19937_64& rng, int n, double radius) {
  MatrixXd A = RandomMatrix(rng, n, n);
  const double rho = A.eigenvalues().cwiseAbs().maxCoeff();
  if (rho > 1e-9) A *= radius / rho;
  return A;
}

RandomSquareCase RandomSquareSystem(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim_n(1, 4), dim_m(1, 2), period(1, 6),
      kind(0, 2);
  std::uniform_real_distribution<double> radius(0.3, 1.6);
  const int n = dim_n(rng);
  const int m = dim_m(rng);
  const int T = period(rng);
  MatrixXd A = RandomWithSpectralRadius(rng, n, radius(rng));
  MatrixXd B = RandomMatrix(rng, n, m);
  MatrixXd C = RandomMatrix(rng, m, n);
  MatrixXd D = RandomMatrix(rng, m, m, 0.5);
  switch (kind(rng)) {
    case 1: {
      // Unstable mode invisible in the output.
      const int k = n - 1;
      A.row(k).setZero();
      A(k, k) = 1.3;
      C.col(k).setZero();
      break;
    }
    case 2: {
      // Transmission zero at λ = 1 (always a root) or λ = −1 (even T).
      const double lambda = (T % 2 == 0 && period(rng) % 2 == 0) ? -1.0 : 1.0;
      const MatrixXd shifted = lambda * MatrixXd::Identity(n, n) - A;
      if (std::abs(shifted.determinant()) < 1e-3) break;
      const MatrixXd G = C * shifted.inverse() * B;
      // D makes the transfer matrix at λ equal to a rank m−1 matrix.
      MatrixXd singular = MatrixXd::Zero(m, m);
      if (m > 1) singular = RandomMatrix(rng, m, 1) * RandomMatrix(rng, 1, m);
      D = singular - G;
      break;
    }
    default:
      break;
  }
  return {LinearSystem::WithoutExosystem(A, B, C, D), T};
}

LinearSystem RandomLinearSystem(std::mt19937_64& rng, int n, int m, int p,
                                int q) {
  LinearSystem sys;
  std::uniform_real_distribution<double> radius(0.4, 1.2);
  sys.A = RandomWithSpectralRadius(rng, n, radius(rng));
  sys.B = RandomMatrix(rng, n, m);
  sys.C = RandomMatrix(rng, p, n);
  sys.D = RandomMatrix(rng, p, m, 0.3);
  sys.Px = RandomMatrix(rng, n, q, 0.5);
  sys.Py = RandomMatrix(rng, p, q, 0.5);
  if (q == 2) {
    const double th = 2.0 * 3.14159265358979323846 / 5.0;
    sys.S = (MatrixXd(2, 2) << std::cos(th), -std::sin(th), std::sin(th),
             std::cos(th)).finished();
  } else {
    sys.S = MatrixXd::Identity(q, q);
  }
  return sys;
}

VectorXd CentralDifferenceGradient(const Ocp& ocp, const VectorXd& u,
                                   double h) {
  VectorXd g(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    VectorXd up = u, um = u;
    const double step = h * (1.0 + std::abs(u(i)));
    up(i) += step;
    um(i) -= step;
    g(i) = (ocp.Cost(up) - ocp.Cost(um)) / (2 * step);
  }
  return g;
}

VectorXd StackedLqOracle(const LinearSystem& sys, const RegulatorSolution& reg,
                         const MatrixXd& Q, const MatrixXd& R, int N,
                         const VectorXd& x0, const VectorXd& w0) {
  const int n = sys.n_p(), m = sys.m(), p = sys.p();
  // y = G u + free response, u_ref = Γ w_k.
  MatrixXd G = MatrixXd::Zero(N * p, N * m);
  VectorXd free = VectorXd::Zero(N * p), u_ref(N * m);
  VectorXd x = x0, w = w0;
  std::vector<MatrixXd> Ak{MatrixXd::Identity(n, n)};
  for (int k = 0; k < N; ++k) {
    free.segment(k * p, p) = sys.C * x - sys.Py * w;
    u_ref.segment(k * m, m) = reg.Gamma * w;
    x = sys.A * x + sys.Px * w;
    w = sys.S * w;
    Ak.push_back(sys.A * Ak.back());
  }
  for (int k = 0; k < N; ++k) {
    G.block(k * p, k * m, p, m) = sys.D;
    for (int j = 0; j < k; ++j) {
      G.block(k * p, j * m, p, m) = sys.C * Ak[k - j - 1] * sys.B;
    }
  }
  MatrixXd Qbig = MatrixXd::Zero(N * p, N * p), Rbig = MatrixXd::Zero(N * m, N * m);
  for (int k = 0; k < N; ++k) {
    Qbig.block(k * p, k * p, p, p) = Q;
    Rbig.block(k * m, k * m, m, m) = R;
  }
  const MatrixXd H = G.transpose() * Qbig * G + Rbig;
  return H.ldlt().solve(Rbig * u_ref - G.transpose() * Qbig * free);
}

EquivalenceValues IncrementalVsAugmented(const LinearSystem& sys, int T, int N,
                                         const MatrixXd& Q, const MatrixXd& R,
                                         const VectorXd& x0, const VectorXd& xi0,
                                         const VectorXd& w0) {
  const SystemModel base = SystemModel::FromLinear(sys);
  MpcConfig inc;
  inc.variant = CostVariant::kIncrementalInput;
  inc.horizon = N;
  inc.Q = Q;
  inc.R = R;
  inc.period = T;
  const Ocp inc_ocp(base, inc, x0, w0, xi0);
  const double v_inc = inc_ocp.Cost(SolveDenseLeastSquares(inc_ocp));

  const AugmentedPlant plant = AugmentedPlant::Build(base, T);
  MpcConfig reg = inc;
  reg.variant = CostVariant::kInputRegularized;
  reg.period = 1;
  const RegulatorMap zero_input = RegulatorMap::FromMatrices(
      MatrixXd::Zero(plant.model().n_p(), sys.q()),
      MatrixXd::Zero(sys.m(), sys.q()));
  const Ocp aug_ocp(plant.model(), reg, plant.Join(x0, xi0), w0, VectorXd(),
                    zero_input);
  const double v_aug = aug_ocp.Cost(SolveDenseLeastSquares(aug_ocp));
  return {v_inc, v_aug};
}

EquivalenceValues RandomEquivalenceInstance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> dim_n(1, 3), dim_m(1, 2), period(1, 3),
      horizon(1, 5), dim_q(0, 2);
  const int n = dim_n(rng), m = dim_m(rng), p = dim_m(rng), q = dim_q(rng);
  const int T = period(rng), N = horizon(rng);
  const LinearSystem sys = RandomLinearSystem(rng, n, m, p, q);
  const MatrixXd Qh = RandomMatrix(rng, p, p), Rh = RandomMatrix(rng, m, m);
  const MatrixXd Q = Qh * Qh.transpose() + 0.1 * MatrixXd::Identity(p, p);
  const MatrixXd R = Rh * Rh.transpose() + 0.1 * MatrixXd::Identity(m, m);
  return IncrementalVsAugmented(sys, T, N, Q, R, RandomMatrix(rng, n, 1),
                                RandomMatrix(rng, m * T, 1),
                                RandomMatrix(rng, q, 1));
}

}  // namespace testing
}  // namespace regmpc
