#include "regmpc/cli.h"

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <unistd.h>

#include "regmpc/augmentation.h"
#include "regmpc/linear_analysis.h"

namespace regmpc {
namespace {

std::string Num(double v) {
  if (v == 0.0) v = 0.0;  // drop the sign of negative zero
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string Row(const VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ' ';
    s += Num(v(i));
  }
  return s;
}

std::string MatrixRows(const MatrixXd& M) {
  std::string s;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    if (i) s += " ; ";
    s += Row(M.row(i).transpose());
  }
  return s;
}

// Linearization about the regulator point at w0, in deviation coordinates
// with a constant reference.
LinearSystem Linearize(const SystemModel& model, const RegulatorMap& reg,
                       const VectorXd& w0) {
  const VectorXd x = reg.pi_x(w0), u = reg.pi_u(w0);
  const ModelJacobians J = model.Jacobians(x, u, w0);
  return LinearSystem::WithoutExosystem(J.fx, J.fu, J.hx, J.hu);
}

}  // namespace

std::string AnalyzeReport(const ScenarioConfig& config,
                          const std::string& base_dir) {
  const SystemModel model = BuildModel(config.model, base_dir);
  const MpcConfig mpc = BuildMpcConfig(config.mpc, model);
  std::ostringstream o;
  o << "model=" << config.model.name << "\n";
  LinearSystem sys;
  if (model.linear()) {
    sys = *model.linear();
    o << "linearized=0\n";
  } else {
    const auto reg = BuildRegulator(config.model, model);
    if (!reg) throw ConfigError("nonlinear model without a regulator map");
    if (static_cast<int>(config.sim.w0.size()) != model.q()) {
      throw ConfigError("sim.w0 is required to linearize a nonlinear model");
    }
    const VectorXd w0 = Eigen::Map<const VectorXd>(config.sim.w0.data(),
                                                   model.q());
    const auto [r_dyn, r_out] = RegulatorResidual(model, *reg, w0);
    o << "regulator_residual_dynamics=" << Num(r_dyn) << "\n"
      << "regulator_residual_output=" << Num(r_out) << "\n";
    sys = Linearize(model, *reg, w0);
    o << "linearized=1\n";
  }
  o << "n_p=" << sys.n_p() << "\nm=" << sys.m() << "\nq=" << sys.q()
    << "\np=" << sys.p() << "\n";
  if (model.linear()) {
    try {
      const RegulatorSolution rs = SolveRegulator(sys);
      o << "regulator=solved\n"
        << "regulator_residual=" << Num(RegulatorEquationResidual(sys, rs)) << "\n";
    } catch (const ResonanceError& e) {
      o << "regulator=resonant\n"
        << "regulator_closest_eigenvalue=" << Num(e.eigenvalue().real()) << " "
        << Num(e.eigenvalue().imag()) << "\n";
    }
  }
  const bool incremental = mpc.variant == CostVariant::kIncrementalInput;
  const int T = mpc.period;
  o << "base_detectable=" << PbhDetectable(sys.A, sys.C) << "\n"
    << "base_stabilizable=" << PbhStabilizable(sys.A, sys.B) << "\n";
  if (sys.m() == sys.p()) {
    const NonresonanceReport nr = Nonresonance(sys, T);
    o << "# nonresonance table: k, Re lambda_k, Im lambda_k, sigma_min, pass\n";
    for (const auto& e : nr.entries) {
      o << "nonresonance.k" << e.k << "=" << Num(e.lambda.real()) << " "
        << Num(e.lambda.imag()) << " " << Num(e.sigma_min) << " " << e.pass
        << "\n";
    }
    o << "nonresonance.T=" << T << "\nnonresonance.pass=" << nr.pass << "\n"
      << "augmented_detectable=" << BuildAugmentedPair(sys, T).detectable << "\n";
  } else {
    o << "nonresonance=skipped_nonsquare\n";
  }
  if (sys.m() == 1 && sys.p() == 1) {
    try {
      const ZeroReport z = RelativeDegreeAndZeros(sys);
      o << "relative_degree=" << z.relative_degree << "\nzeros=";
      for (std::size_t i = 0; i < z.zeros.size(); ++i) {
        o << (i ? " ; " : "") << Num(z.zeros[i].real()) << " "
          << Num(z.zeros[i].imag());
      }
      o << "\nminimum_phase=" << z.minimum_phase << "\n";
    } catch (const DegenerateSystemError&) {
      o << "relative_degree=degenerate\n";
    }
  }
  // Cost analysis on the plant the MPC actually optimizes over.
  const LinearSystem cost_sys = incremental ? AugmentLinear(sys, T) : sys;
  const MatrixXd R = (mpc.variant == CostVariant::kOutputOnly ||
                      mpc.variant == CostVariant::kLookAhead)
                         ? MatrixXd::Zero(sys.m(), sys.m())
                         : mpc.R;
  const QuadraticStageCost cost =
      QuadraticStageCost::FromOutputCost(cost_sys, mpc.Q, R);
  o << "cost_system=" << (incremental ? "augmented" : "base") << "\n";
  try {
    const QuadraticCertificate P = Dare(cost_sys.A, cost_sys.B, cost);
    o << "dare_P=" << MatrixRows(P.P) << "\n";
    const double eps = EpsilonO(cost, P);
    o << "epsilon_o=" << Num(eps) << "\n";
    BoundsInput in;
    in.gamma_s = config.analysis.gamma_s;
    in.gamma_o = config.analysis.gamma_o;
    in.epsilon_o = eps;
    in.Ybar = config.analysis.Ybar;
    in.delta_s = config.analysis.delta_s;
    in.N = std::max(2, mpc.horizon);
    try {
      const auto [nu, c_o] =
          SmallestObservabilityHorizon(cost_sys, cost, P, config.analysis.nu_max);
      in.nu = nu;
      in.c_o = c_o;
    } catch (const ObservabilityError&) {
      o << "observability=not_found\n";
    }
    const BoundsReport b = HorizonBounds(in);
    o << "gamma_s=" << Num(b.gamma_s) << "\ngamma_o=" << Num(b.gamma_o)
      << "\ngamma_Ybar=" << Num(b.gamma_Ybar) << "\nN=" << in.N
      << "\nalpha_N=" << Num(b.alpha_N) << "\nN_1=" << Num(b.N_1) << "\n";
    if (b.nu) {
      o << "nu=" << *b.nu << "\nc_o=" << Num(*b.c_o)
        << "\nalpha_Ns=" << Num(*b.alpha_Ns)
        << "\nN_Ybar_s=" << Num(*b.N_Ybar_s) << "\n";
    }
  } catch (const NumericalError& e) {
    o << "cost_analysis=failed: " << e.what() << "\n";
  } catch (const DomainError& e) {
    o << "cost_analysis=failed: " << e.what() << "\n";
  }
  return o.str();
}

std::string SolveReport(const ScenarioConfig& config,
                        const std::string& base_dir) {
  ScenarioSpec spec = BuildScenario(config, base_dir);
  MpcController controller(spec.model, spec.mpc, spec.regulator);
  if (!spec.history.empty()) controller.SetHistory(spec.history);
  const VectorXd memory = controller.EnsureMemory();
  const Ocp ocp = controller.MakeOcp(spec.x0, spec.w0, memory);
  const OcpSolution s = Solve(ocp);
  std::ostringstream o;
  o << "value=" << Num(s.value) << "\niterations=" << s.iterations
    << "\nconverged=" << s.converged << "\nkkt_residual=" << Num(s.kkt_residual)
    << "\n";
  for (Eigen::Index k = 0; k < s.u_opt.rows(); ++k) {
    o << "u" << k << "=" << Row(s.u_opt.row(k).transpose()) << "\n";
  }
  for (Eigen::Index k = 0; k < s.x_pred.rows(); ++k) {
    o << "x" << k << "=" << Row(s.x_pred.row(k).transpose()) << "\n";
  }
  return o.str();
}

std::vector<std::uint64_t> ParseSeedList(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string part;
  auto parse = [&](const std::string& s) -> std::uint64_t {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("invalid seed '" + s + "'");
    }
    return std::stoull(s);
  };
  while (std::getline(ss, part, ',')) {
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      seeds.push_back(parse(part));
    } else {
      const std::uint64_t a = parse(part.substr(0, dash));
      const std::uint64_t b = parse(part.substr(dash + 1));
      if (b < a || b - a > 100000) throw ConfigError("invalid seed range '" + part + "'");
      for (std::uint64_t s = a; s <= b; ++s) seeds.push_back(s);
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

void WriteFileAtomically(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp." + std::to_string(::getpid()) + "." +
                          std::to_string(std::hash<std::thread::id>{}(
                              std::this_thread::get_id()));
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw ConfigError("cannot write '" + path + "'");
    f << contents;
    f.flush();
    if (!f) {
      std::remove(tmp.c_str());
      throw ConfigError("cannot write '" + path + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw ConfigError("cannot write '" + path + "': " + ec.message());
  }
}

namespace {

std::string SeedPath(const std::string& out, std::uint64_t seed) {
  const std::string tag = "{seed}";
  const auto pos = out.find(tag);
  if (pos != std::string::npos) {
    return out.substr(0, pos) + std::to_string(seed) + out.substr(pos + tag.size());
  }
  const std::filesystem::path p(out);
  return (p.parent_path() / (p.stem().string() + ".seed" + std::to_string(seed) +
                             p.extension().string()))
      .string();
}

struct Options {
  std::string config;
  std::string out;
  std::string seed;
  int jobs = 1;
  bool verbose = false;
};

void Emit(const std::string& text, const std::string& out_path,
          std::ostream& out) {
  if (out_path.empty()) {
    out << text;
  } else {
    WriteFileAtomically(out_path, text);
  }
}

int Simulate(const ScenarioConfig& base, const Options& opt,
             const std::string& base_dir, std::ostream& out,
             std::ostream& err) {
  std::vector<std::uint64_t> seeds;
  if (!opt.seed.empty()) {
    seeds = ParseSeedList(opt.seed);
  } else if (const char* env = std::getenv("REGFREE_MPC_SEED")) {
    seeds = ParseSeedList(env);
  } else {
    seeds = {base.sim.seed};
  }
  if (seeds.size() > 1 && opt.out.empty()) {
    throw ConfigError("--out is required for a seed sweep");
  }
  // Validate once up front so that config errors are reported before any
  // work starts.
  BuildScenario(base, base_dir);
  std::vector<int> codes(seeds.size(), kExitOk);
  std::vector<std::string> messages(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex out_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      ScenarioConfig cfg = base;
      cfg.sim.seed = seeds[i];
      try {
        const SimTrace trace = Run(BuildScenario(cfg, base_dir));
        const std::string csv = TraceCsv(trace);
        if (seeds.size() > 1) {
          WriteFileAtomically(SeedPath(opt.out, seeds[i]), csv);
        } else {
          std::lock_guard<std::mutex> lock(out_mutex);
          Emit(csv, opt.out, out);
        }
        if (!trace.completed) {
          codes[i] = kExitNumerical;
          messages[i] = "seed " + std::to_string(seeds[i]) + ": " + trace.failure;
        } else if (opt.verbose) {
          const MetricsReport m =
              ComputeMetrics(trace, BuildModel(cfg.model, base_dir).input_box());
          messages[i] = "seed " + std::to_string(seeds[i]) + ": steps=" +
                        std::to_string(trace.steps.size()) +
                        " final_output_norm=" + Num(m.final_output_norm) +
                        " max_violation=" + Num(m.max_violation);
        }
      } catch (const NumericalError& e) {
        codes[i] = kExitNumerical;
        messages[i] = "seed " + std::to_string(seeds[i]) + ": " + e.what();
      } catch (const Error& e) {
        codes[i] = kExitConfig;
        messages[i] = "seed " + std::to_string(seeds[i]) + ": " + e.what();
      }
    }
  };
  const int jobs = std::max(1, std::min<int>(opt.jobs, static_cast<int>(seeds.size())));
  std::vector<std::thread> pool;
  for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  int code = kExitOk;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!messages[i].empty() && (opt.verbose || codes[i] != kExitOk)) {
      err << messages[i] << "\n";
    }
    code = std::max(code, codes[i]);
  }
  return code;
}

}  // namespace

int RunCli(int argc, const char* const* argv, std::ostream& out,
           std::ostream& err) {
  CLI::App app{"Regulator-equation-free MPC for output regulation"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Scenario config file")->required();
    sub->add_option("--out", opt.out, "Output file (default: stdout)");
    sub->add_option("--seed", opt.seed, "Seed, seed range a-b or list a,b");
    sub->add_option("--jobs", opt.jobs, "Parallel runs for seed sweeps")
        ->check(CLI::PositiveNumber);
    sub->add_flag("--verbose", opt.verbose, "Print a run summary to stderr");
  };
  CLI::App* analyze = app.add_subcommand("analyze", "Linear certificates and bounds");
  CLI::App* solve = app.add_subcommand("solve", "Solve one finite-horizon problem");
  CLI::App* simulate = app.add_subcommand("simulate", "Closed-loop simulation to CSV");
  for (CLI::App* sub : {analyze, solve, simulate}) add_common(sub);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const ScenarioConfig config = ScenarioConfig::Load(opt.config);
    const std::string base_dir =
        std::filesystem::path(opt.config).parent_path().string();
    const std::string dir = base_dir.empty() ? "." : base_dir;
    if (analyze->parsed()) {
      Emit(AnalyzeReport(config, dir), opt.out, out);
      return kExitOk;
    }
    if (solve->parsed()) {
      Emit(SolveReport(config, dir), opt.out, out);
      return kExitOk;
    }
    return Simulate(config, opt, dir, out, err);
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace regmpc
