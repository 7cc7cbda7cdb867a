#include "regmpc/config.h"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "regmpc/linear_analysis.h"

namespace regmpc {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double ParseDouble(const std::string& tok, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("expected a number, got '" + tok + "'", line);
}

std::vector<double> ParseList(const std::string& value, int line) {
  std::string s = value;
  for (char& c : s) {
    if (c == ',') c = ' ';
  }
  std::istringstream in(s);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(ParseDouble(tok, line));
  return out;
}

long long ParseInt(const std::string& value, int line) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("expected an integer, got '" + value + "'", line);
}

int ParseIntInRange(const std::string& value, int line, long long lo,
                    const char* what) {
  const long long v = ParseInt(value, line);
  if (v < lo || v > std::numeric_limits<int>::max()) {
    throw ConfigError(std::string(what) + " must be at least " +
                          std::to_string(lo),
                      line);
  }
  return static_cast<int>(v);
}

bool ParseBool(const std::string& value, int line) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("expected true or false, got '" + value + "'", line);
}

std::string FormatDouble(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string FormatList(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += FormatDouble(v[i]);
  }
  return out;
}

MatrixXd Diagonal(const std::vector<double>& d, int n, double fill,
                  const char* name) {
  if (d.empty()) return fill * MatrixXd::Identity(n, n);
  if (static_cast<int>(d.size()) != n) {
    throw ConfigError(std::string(name) + " needs " + std::to_string(n) +
                      " diagonal entries");
  }
  return Eigen::Map<const VectorXd>(d.data(), n).asDiagonal();
}

VectorXd ToVector(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

ScenarioConfig ScenarioConfig::Parse(const std::string& text) {
  ScenarioConfig c;
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  std::set<std::string> seen;
  std::map<std::string, int> section_line;
  const std::set<std::string> sections = {"model", "mpc", "observer", "sim",
                                          "analysis"};
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const auto hash = s.find_first_of("#;");
    if (hash != std::string::npos) s.erase(hash);
    s = Trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError("malformed section header", line);
      section = Trim(s.substr(1, s.size() - 2));
      if (!sections.count(section)) {
        throw ConfigError("unknown section [" + section + "]", line);
      }
      section_line.emplace(section, line);
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value", line);
    const std::string key = Trim(s.substr(0, eq));
    const std::string value = Trim(s.substr(eq + 1));
    if (section.empty()) throw ConfigError("key outside of a section", line);
    const std::string full = section + "." + key;
    if (!seen.insert(full).second) {
      throw ConfigError("duplicate key '" + full + "'", line);
    }
    auto unknown = [&] { throw ConfigError("unknown key '" + full + "'", line); };
    if (section == "model") {
      if (key == "name") c.model.name = value;
      else if (key == "substeps") c.model.substeps = ParseIntInRange(value, line, 1, "substeps");
      else if (key == "regulator") {
        if (value != "exact" && value != "published") {
          throw ConfigError("regulator must be exact or published", line);
        }
        c.model.regulator = value;
      } else unknown();
    } else if (section == "mpc") {
      SolverSettings& st = c.mpc.solver;
      if (key == "variant") {
        ParseCostVariant(value);
        c.mpc.variant = value;
      } else if (key == "N") c.mpc.N = ParseIntInRange(value, line, 1, "N");
      else if (key == "Q") c.mpc.Q = ParseList(value, line);
      else if (key == "R") c.mpc.R = ParseList(value, line);
      else if (key == "d") c.mpc.d = ParseIntInRange(value, line, 0, "d");
      else if (key == "T") c.mpc.T = ParseIntInRange(value, line, 1, "T");
      else if (key == "max_iterations") st.max_iterations = ParseIntInRange(value, line, 1, "max_iterations");
      else if (key == "gradient_tolerance") st.gradient_tolerance = ParseDouble(value, line);
      else if (key == "initial_step") st.initial_step = ParseDouble(value, line);
      else if (key == "shrink") st.shrink = ParseDouble(value, line);
      else if (key == "sufficient_decrease") st.sufficient_decrease = ParseDouble(value, line);
      else if (key == "warm_start") st.warm_start = ParseBool(value, line);
      else unknown();
      if (key != "variant") {
        try {
          st.Validate();
        } catch (const ConfigError& e) {
          throw ConfigError(e.what(), line);
        }
      }
    } else if (section == "observer") {
      if (key == "kind") {
        if (value != "none" && value != "luenberger" && value != "ekf") {
          throw ConfigError("observer kind must be none, luenberger or ekf", line);
        }
        c.observer.kind = value;
      } else if (key == "L") c.observer.L = ParseList(value, line);
      else if (key == "sigma0") c.observer.sigma0 = ParseDouble(value, line);
      else if (key == "qproc") c.observer.qproc = ParseDouble(value, line);
      else if (key == "rmeas") c.observer.rmeas = ParseDouble(value, line);
      else if (key == "xhat0") c.observer.xhat0 = ParseList(value, line);
      else unknown();
    } else if (section == "sim") {
      if (key == "steps") c.sim.steps = ParseIntInRange(value, line, 1, "steps");
      else if (key == "x0") c.sim.x0 = ParseList(value, line);
      else if (key == "w0") c.sim.w0 = ParseList(value, line);
      else if (key == "noise") {
        if (value != "none" && value != "uniform") {
          throw ConfigError("noise must be none or uniform", line);
        }
        c.sim.noise = value;
      } else if (key == "noise_lo") c.sim.noise_lo = ParseList(value, line);
      else if (key == "noise_hi") c.sim.noise_hi = ParseList(value, line);
      else if (key == "seed") {
        const long long v = ParseInt(value, line);
        if (v < 0) throw ConfigError("seed must be nonnegative", line);
        c.sim.seed = static_cast<std::uint64_t>(v);
      } else if (key == "history") c.sim.history = ParseList(value, line);
      else unknown();
    } else {
      if (key == "gamma_s") c.analysis.gamma_s = ParseDouble(value, line);
      else if (key == "gamma_o") c.analysis.gamma_o = ParseDouble(value, line);
      else if (key == "Ybar") c.analysis.Ybar = ParseDouble(value, line);
      else if (key == "delta_s") c.analysis.delta_s = ParseDouble(value, line);
      else if (key == "nu_max") c.analysis.nu_max = ParseIntInRange(value, line, 1, "nu_max");
      else unknown();
    }
  }
  auto header = [&](const std::string& sec) {
    const auto it = section_line.find(sec);
    return it == section_line.end() ? 0 : it->second;
  };
  if (c.model.name.empty()) throw ConfigError("missing required key model.name", header("model"));
  if (c.mpc.variant.empty()) throw ConfigError("missing required key mpc.variant", header("mpc"));
  if (c.mpc.N == 0) throw ConfigError("missing required key mpc.N", header("mpc"));
  return c;
}

ScenarioConfig ScenarioConfig::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return Parse(buf.str());
}

std::string ScenarioConfig::Render() const {
  std::ostringstream o;
  const SolverSettings& st = mpc.solver;
  o << "[model]\n"
    << "name = " << model.name << "\n"
    << "substeps = " << model.substeps << "\n"
    << "regulator = " << model.regulator << "\n\n"
    << "[mpc]\n"
    << "variant = " << mpc.variant << "\n"
    << "N = " << mpc.N << "\n"
    << "Q = " << FormatList(mpc.Q) << "\n"
    << "R = " << FormatList(mpc.R) << "\n"
    << "d = " << mpc.d << "\n"
    << "T = " << mpc.T << "\n"
    << "max_iterations = " << st.max_iterations << "\n"
    << "gradient_tolerance = " << FormatDouble(st.gradient_tolerance) << "\n"
    << "initial_step = " << FormatDouble(st.initial_step) << "\n"
    << "shrink = " << FormatDouble(st.shrink) << "\n"
    << "sufficient_decrease = " << FormatDouble(st.sufficient_decrease) << "\n"
    << "warm_start = " << (st.warm_start ? "true" : "false") << "\n\n"
    << "[observer]\n"
    << "kind = " << observer.kind << "\n"
    << "L = " << FormatList(observer.L) << "\n"
    << "sigma0 = " << FormatDouble(observer.sigma0) << "\n"
    << "qproc = " << FormatDouble(observer.qproc) << "\n"
    << "rmeas = " << FormatDouble(observer.rmeas) << "\n"
    << "xhat0 = " << FormatList(observer.xhat0) << "\n\n"
    << "[sim]\n"
    << "steps = " << sim.steps << "\n"
    << "x0 = " << FormatList(sim.x0) << "\n"
    << "w0 = " << FormatList(sim.w0) << "\n"
    << "noise = " << sim.noise << "\n"
    << "noise_lo = " << FormatList(sim.noise_lo) << "\n"
    << "noise_hi = " << FormatList(sim.noise_hi) << "\n"
    << "seed = " << sim.seed << "\n"
    << "history = " << FormatList(sim.history) << "\n\n"
    << "[analysis]\n"
    << "gamma_s = " << FormatDouble(analysis.gamma_s) << "\n"
    << "gamma_o = " << FormatDouble(analysis.gamma_o) << "\n"
    << "Ybar = " << FormatDouble(analysis.Ybar) << "\n"
    << "delta_s = " << FormatDouble(analysis.delta_s) << "\n"
    << "nu_max = " << analysis.nu_max << "\n";
  return o.str();
}

SystemModel BuildModel(const ModelSection& section,
                       const std::string& base_dir) {
  if (section.name == "academic") return AcademicExample();
  if (section.name == "cement_mill") return CementMill(section.substeps);
  if (section.name.rfind("lti:", 0) == 0) {
    std::string path = section.name.substr(4);
    if (path.empty()) throw ConfigError("lti: model needs a file path");
    if (path.front() != '/') path = base_dir + "/" + path;
    return SystemModel::FromLinear(LoadLinearSystem(path), std::nullopt,
                                   section.name);
  }
  throw ConfigError("unknown model '" + section.name + "'");
}

std::optional<RegulatorMap> BuildRegulator(const ModelSection& section,
                                           const SystemModel& model) {
  if (section.name == "cement_mill") {
    return RegulatorMap::CementMill(section.regulator == "published"
                                        ? RegulatorCoefficients::kPublished
                                        : RegulatorCoefficients::kExact);
  }
  if (model.linear()) {
    try {
      return SolveRegulator(*model.linear()).Map();
    } catch (const ResonanceError&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

MpcConfig BuildMpcConfig(const MpcSection& section, const SystemModel& model) {
  MpcConfig cfg;
  cfg.variant = ParseCostVariant(section.variant);
  cfg.horizon = section.N;
  cfg.Q = Diagonal(section.Q, model.p(), 1.0, "Q");
  cfg.R = Diagonal(section.R, model.m(), 0.0, "R");
  cfg.look_ahead = section.d;
  cfg.period = section.T;
  cfg.solver = section.solver;
  cfg.Validate(model);
  return cfg;
}

ScenarioSpec BuildScenario(const ScenarioConfig& config,
                           const std::string& base_dir) {
  ScenarioSpec spec(BuildModel(config.model, base_dir));
  const SystemModel& model = spec.model;
  const int n = model.n_p(), q = model.q(), p = model.p(), m = model.m();
  spec.mpc = BuildMpcConfig(config.mpc, model);
  spec.regulator = BuildRegulator(config.model, model);
  if (static_cast<int>(config.sim.x0.size()) != n) {
    throw ConfigError("sim.x0 needs " + std::to_string(n) + " entries");
  }
  if (static_cast<int>(config.sim.w0.size()) != q) {
    throw ConfigError("sim.w0 needs " + std::to_string(q) + " entries");
  }
  spec.x0 = ToVector(config.sim.x0);
  spec.w0 = ToVector(config.sim.w0);
  spec.steps = config.sim.steps;
  if (config.sim.noise == "uniform") {
    spec.noise = SimNoiseSpec::Uniform(ToVector(config.sim.noise_lo),
                                       ToVector(config.sim.noise_hi),
                                       config.sim.seed);
  } else {
    spec.noise.seed = config.sim.seed;
  }
  spec.noise.Validate(p);
  if (!config.sim.history.empty()) {
    const int T = spec.mpc.period;
    if (spec.mpc.variant != CostVariant::kIncrementalInput ||
        static_cast<int>(config.sim.history.size()) != m * T) {
      throw ConfigError("sim.history needs m*T entries for the incremental variant");
    }
    for (int j = 0; j < T; ++j) {
      spec.history.push_back(ToVector(config.sim.history).segment(j * m, m));
    }
  }
  const ObserverSection& o = config.observer;
  if (o.kind != "none") {
    ObserverConfig oc;
    if (o.kind == "ekf") {
      oc.kind = EkfSettings::Scaled(n + q, p, o.sigma0, o.qproc, o.rmeas);
    } else {
      if (static_cast<int>(o.L.size()) != (n + q) * p) {
        throw ConfigError("observer.L needs (n_p+q)*p entries");
      }
      oc.kind = LuenbergerGain{
          Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                         Eigen::RowMajor>>(o.L.data(), n + q, p)};
    }
    oc.xhat0 = ToVector(o.xhat0);
    oc.Validate(n + q, p);
    if (model.linear() && !JointDetectable(*model.linear())) {
      throw DetectabilityError("joint system (x, w) is not detectable");
    }
    spec.observer = oc;
  }
  return spec;
}

}  // namespace regmpc
