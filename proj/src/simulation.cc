#include "regmpc/simulation.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "regmpc/linear_analysis.h"

namespace regmpc {

SimNoiseSpec SimNoiseSpec::Uniform(VectorXd lo, VectorXd hi,
                                   std::uint64_t seed) {
  return {Kind::kUniform, std::move(lo), std::move(hi), seed};
}

void SimNoiseSpec::Validate(int p) const {
  if (kind == Kind::kNone) return;
  if (lo.size() != p || hi.size() != p) {
    throw ConfigError("noise bounds must have size " + std::to_string(p));
  }
  if (((lo.array() > hi.array()) || !lo.array().isFinite() ||
       !hi.array().isFinite())
          .any()) {
    throw ConfigError("noise bounds must be finite with lo <= hi");
  }
}

namespace {

std::optional<RegulatorMap> DefaultRegulator(const ScenarioSpec& spec) {
  if (spec.regulator) return spec.regulator;
  if (spec.model.linear()) {
    try {
      return SolveRegulator(*spec.model.linear()).Map();
    } catch (const ResonanceError&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

}  // namespace

SimTrace Run(const ScenarioSpec& spec) {
  const SystemModel& model = spec.model;
  const int n = model.n_p(), q = model.q(), p = model.p();
  if (spec.steps < 1) throw ConfigError("simulation length must be positive");
  if (spec.x0.size() != n || spec.w0.size() != q) {
    throw ShapeError("initial state or exosystem state has wrong size");
  }
  spec.noise.Validate(p);
  if (spec.observer) spec.observer->Validate(n + q, p);

  const std::optional<RegulatorMap> reg = DefaultRegulator(spec);
  MpcController controller(model, spec.mpc, reg);
  if (!spec.history.empty()) controller.SetHistory(spec.history);

  std::optional<ObserverState> obs;
  if (spec.observer) obs = InitialObserverState(*spec.observer);

  std::mt19937_64 rng(spec.noise.seed);
  std::vector<std::uniform_real_distribution<double>> dists;
  if (spec.noise.kind == SimNoiseSpec::Kind::kUniform) {
    for (int i = 0; i < p; ++i) {
      dists.emplace_back(spec.noise.lo(i), spec.noise.hi(i));
    }
  }

  SimTrace trace;
  trace.n_p = n;
  trace.m = model.m();
  trace.q = q;
  trace.p = p;
  trace.observed = spec.observer.has_value();
  VectorXd x = spec.x0, w = spec.w0;
  for (int t = 0; t < spec.steps; ++t) {
    StepRecord rec;
    rec.t = t;
    rec.x = x;
    rec.w = w;
    if (obs) {
      rec.xhat = obs->xhat;
    } else {
      rec.xhat.resize(n + q);
      rec.xhat << x, w;
    }
    try {
      StepDiagnostics diag;
      rec.memory = controller.EnsureMemory();
      rec.u = controller.Step(rec.xhat.head(n), rec.xhat.tail(q), &diag);
      rec.V = diag.solution.value;
      rec.iters = diag.solution.iterations;
      rec.converged = diag.solution.converged && !diag.solver_failed;
      rec.solver_failed = diag.solver_failed;
      rec.y = model.Output(x, rec.u, w);
      rec.ytilde = rec.y;
      for (int i = 0; i < static_cast<int>(dists.size()); ++i) {
        rec.ytilde(i) += dists[i](rng);
      }
      rec.sigma = reg ? (x - reg->pi_x(w)).squaredNorm()
                      : std::numeric_limits<double>::quiet_NaN();
      rec.stage_cost = rec.y.dot(spec.mpc.Q * rec.y);
      if (spec.mpc.variant == CostVariant::kIncrementalInput) {
        const VectorXd e = rec.u - rec.memory.tail(model.m());
        rec.stage_cost += e.dot(spec.mpc.R * e);
      } else if (spec.mpc.variant == CostVariant::kInputRegularized) {
        const VectorXd e = rec.u - reg->pi_u(w);
        rec.stage_cost += e.dot(spec.mpc.R * e);
      }
      if (diag.solver_failed) {
        trace.steps.push_back(rec);
        trace.completed = false;
        trace.failure = "step " + std::to_string(t) + ": " + diag.message;
        return trace;
      }
      if (obs) obs = ObserverStep(model, *spec.observer, *obs, rec.u, rec.ytilde);
      const VectorXd x_next = model.Step(x, rec.u, w);
      if (!x_next.allFinite()) throw NumericalError("plant state diverged", x);
      trace.steps.push_back(rec);
      x = x_next;
      w = model.Exo(w);
    } catch (const NumericalError& e) {
      trace.completed = false;
      trace.failure = "step " + std::to_string(t) + ": " + e.what();
      return trace;
    }
  }
  return trace;
}

namespace {

void AppendNumber(std::string& line, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  line += ',';
  line += buf;
}

void AppendHeader(std::string& line, const char* prefix, int count) {
  for (int i = 1; i <= count; ++i) {
    line += ',';
    line += prefix;
    line += std::to_string(i);
  }
}

}  // namespace

void WriteTraceCsv(const SimTrace& trace, std::ostream& out) {
  std::string header = "t";
  AppendHeader(header, "x", trace.n_p);
  AppendHeader(header, "w", trace.q);
  AppendHeader(header, "u", trace.m);
  AppendHeader(header, "y", trace.p);
  AppendHeader(header, "xhat", trace.n_p + trace.q);
  header += ",V,sigma,iters,converged\n";
  out << header;
  for (const StepRecord& r : trace.steps) {
    std::string line = std::to_string(r.t);
    for (const VectorXd* v : {&r.x, &r.w, &r.u, &r.y, &r.xhat}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) AppendNumber(line, (*v)(i));
    }
    AppendNumber(line, r.V);
    AppendNumber(line, r.sigma);
    line += ',' + std::to_string(r.iters) + ',' + (r.converged ? "1" : "0");
    out << line << '\n';
  }
}

std::string TraceCsv(const SimTrace& trace) {
  std::ostringstream os;
  WriteTraceCsv(trace, os);
  return os.str();
}

MetricsReport ComputeMetrics(const SimTrace& trace, const InputBox& box) {
  MetricsReport r;
  double partial = 0.0, num = 0.0, noise = 0.0;
  double e0 = 0.0;
  const std::size_t len = trace.steps.size();
  for (std::size_t t = 0; t < len; ++t) {
    const StepRecord& s = trace.steps[t];
    r.sigma.push_back(s.sigma);
    partial += s.stage_cost;
    r.stage_cost_partial_sums.push_back(partial);
    VectorXd z(s.x.size() + s.w.size());
    z << s.x, s.w;
    const double e = (z - s.xhat).squaredNorm();
    if (t == 0) e0 = e;
    num += e + s.sigma;
    noise += (s.ytilde - s.y).squaredNorm();
    const VectorXd below = (box.lower - s.u).cwiseMax(0.0);
    const VectorXd above = (s.u - box.upper).cwiseMax(0.0);
    r.max_violation = std::max(
        {r.max_violation, below.size() ? below.maxCoeff() : 0.0,
         above.size() ? above.maxCoeff() : 0.0});
    if (2 * t >= len) {
      r.second_half_sup_output = std::max(r.second_half_sup_output, s.y.norm());
    }
  }
  if (len > 0) r.final_output_norm = trace.steps.back().y.norm();
  const double den = (len ? trace.steps[0].sigma : 0.0) + e0 + noise;
  r.l2_ratio = den > 0.0 ? num / den
                         : (num > 0.0 ? std::numeric_limits<double>::infinity()
                                      : 0.0);
  // Least-squares fit of log σ_t = a + b t over samples above the
  // rounding floor.
  double sw = 0, st = 0, sy = 0, stt = 0, sty = 0;
  for (std::size_t t = 0; t < len; ++t) {
    const double s = r.sigma[t];
    if (!(s > 1e-24) || !std::isfinite(s)) continue;
    const double y = std::log(s);
    sw += 1;
    st += t;
    sy += y;
    stt += double(t) * t;
    sty += t * y;
  }
  const double det = sw * stt - st * st;
  r.decay_rate = (sw >= 2 && det > 0) ? std::exp((sw * sty - st * sy) / det)
                                      : std::numeric_limits<double>::quiet_NaN();
  return r;
}

ValueEvaluator MakeValueEvaluator(const SystemModel& model,
                                  const MpcConfig& config,
                                  std::optional<RegulatorMap> regulator) {
  return [&model, config, regulator](const StepRecord& rec) {
    const Ocp ocp(model, config, rec.x, rec.w, rec.memory, regulator);
    return Solve(ocp).value;
  };
}

DecreaseReport DecreaseCheck(const SimTrace& trace, const ValueEvaluator& value,
                             const std::vector<double>& sigma,
                             double alpha_eps) {
  DecreaseReport r;
  r.max_margin = -std::numeric_limits<double>::infinity();
  const std::size_t len = std::min(trace.steps.size(), sigma.size());
  if (len < 2) return r;
  double v_prev = value(trace.steps[0]);
  for (std::size_t t = 0; t + 1 < len; ++t) {
    const double v_next = value(trace.steps[t + 1]);
    const double margin = v_next - v_prev + alpha_eps * sigma[t];
    r.margins.push_back(margin);
    r.max_margin = std::max(r.max_margin, margin);
    if (margin > 0.0) r.positive_steps.push_back(static_cast<int>(t));
    v_prev = v_next;
  }
  return r;
}

}  // namespace regmpc
