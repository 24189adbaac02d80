#pragma once

// Scenario configuration: JSON documents overlaid on per-scenario presets.
// The grammar is described in docs/config.md.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gld/errors.hpp"
#include "gld/gld_model.hpp"
#include "gld/mesh.hpp"
#include "gld/signal.hpp"
#include "gld/time_stepper.hpp"

namespace gld {

enum class Scenario { ConvergenceTime, ConvergenceSpace, EnergyStability, Hysteresis };

inline constexpr std::array<Scenario, 4> kAllScenarios{Scenario::ConvergenceTime, Scenario::ConvergenceSpace,
                                                       Scenario::EnergyStability, Scenario::Hysteresis};

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::ConvergenceTime: return "convergence_time";
    case Scenario::ConvergenceSpace: return "convergence_space";
    case Scenario::EnergyStability: return "energy_stability";
    case Scenario::Hysteresis: return "hysteresis";
  }
  return "?";
}

inline std::optional<Scenario> parse_scenario(const std::string& name) {
  for (Scenario s : kAllScenarios)
    if (name == to_string(s)) return s;
  return std::nullopt;
}

inline bool is_manufactured(Scenario s) {
  return s == Scenario::ConvergenceTime || s == Scenario::ConvergenceSpace;
}

struct AdaptiveSettings {
  bool enabled = false;
  double fraction = 0.01;
  int every = 5;       // refine after steps 0, every, 2 every, ...
  int max_level = 2;   // cells at this level are not refined further
};

struct MeshSettings {
  double width = 80e-9;  // m (unit square for the manufactured scenarios)
  double height = 40e-9;
  int nx = 32;
  int ny = 16;
  int levels = 4;  // uniform refinements (convergence_space) / 1 + spatial check level (convergence_time)
  std::vector<Side> dirichlet{Side::Bottom, Side::Top};
  std::vector<Side> neumann{Side::Left, Side::Right};
  AdaptiveSettings adaptive;
};

struct DiscretizationSettings {
  int degree = 1;
  double final_time = 160e-9;  // s
  int steps = 1000;
  int time_levels = 4;  // convergence_time: tau = T, T/2, ..., T/2^(time_levels-1)
};

struct ManufacturedSettings {
  double alpha = 1.0;
  double beta = -1.0;
  double gamma = 0.0;
};

enum class InitialKind { Zero, Split };

struct InitialSettings {
  InitialKind kind = InitialKind::Split;
  double value = 0.1;      // C/m^2, both components, sign flips across split_x
  double split_x = 40e-9;  // m; P = 0 exactly on the line
};

enum class SignalKind { Zero, PiecewiseLinear };

struct SignalSettings {
  SignalKind kind = SignalKind::Zero;
  BiasSignal waveform = triangle_signal();
  Side electrode = Side::Top;  // the other Dirichlet sides are held at 0 V
};

struct OutputSettings {
  std::string directory = "out";
  std::vector<double> snapshot_times{80e-9, 160e-9};  // s; VTK files
  int energy_every = 1;  // energy.csv row cadence in steps
  std::optional<double> profile_x;  // m; trace profile along this vertical line
};

struct ScenarioConfig {
  Scenario scenario = Scenario::EnergyStability;
  MeshSettings mesh;
  DiscretizationSettings discretization;
  double epsilon_b = 5.0;  // relative permittivity
  std::array<ComponentParams, 2> components{};
  ManufacturedSettings manufactured;
  InitialSettings initial;
  SignalSettings signal;
  NewtonSettings newton;
  EnergyCheck energy_check;
  OutputSettings output;

  /// Material in SI units.
  MaterialParams material() const {
    MaterialParams m;
    m.epsilon = kVacuumPermittivity * epsilon_b;
    m.components = components;
    return m;
  }

  TimeLoopConfig time_loop() const {
    TimeLoopConfig t;
    t.final_time = discretization.final_time;
    t.steps = discretization.steps;
    t.newton = newton;
    t.energy_check = energy_check;
    return t;
  }

  std::vector<std::string> violations() const;
};

/// Monolayer constants; rho_v is not printed with them and is chosen here.
inline ComponentParams monolayer_component() {
  return {-1.54e9, -2.65e12, 2.6e15, 1e-8, 10.0, Property::Ferroelectric};
}

inline ScenarioConfig preset(Scenario s) {
  ScenarioConfig c;
  c.scenario = s;
  c.components = {monolayer_component(), monolayer_component()};
  switch (s) {
    case Scenario::ConvergenceTime:
      c.mesh.width = c.mesh.height = 1.0;
      c.mesh.nx = c.mesh.ny = 32;
      c.mesh.levels = 2;
      c.discretization = {1, 0.1, 1, 4};
      c.initial.kind = InitialKind::Zero;
      c.energy_check.enabled = false;
      c.output.snapshot_times.clear();
      break;
    case Scenario::ConvergenceSpace:
      c.mesh.width = c.mesh.height = 1.0;
      c.mesh.nx = c.mesh.ny = 4;
      c.mesh.levels = 4;
      c.discretization = {1, 0.1, 1, 1};
      c.initial.kind = InitialKind::Zero;
      c.energy_check.enabled = false;
      c.output.snapshot_times.clear();
      break;
    case Scenario::EnergyStability:
      break;
    case Scenario::Hysteresis:
      c.mesh.nx = 8;
      c.mesh.ny = 4;
      c.mesh.adaptive.enabled = true;
      c.discretization.final_time = 120e-9;
      c.discretization.steps = 750;
      c.signal.kind = SignalKind::PiecewiseLinear;
      c.energy_check.enabled = false;  // driven by a time-dependent bias
      c.output.snapshot_times = {20e-9, 40e-9, 60e-9, 80e-9, 100e-9, 120e-9};
      c.output.profile_x = 40e-9;
      break;
  }
  return c;
}

inline std::vector<std::string> ScenarioConfig::violations() const {
  std::vector<std::string> out;
  auto add = [&](const std::vector<std::string>& v, const std::string& prefix) {
    for (const auto& s : v) out.push_back(prefix + s);
  };
  if (!(mesh.width > 0.0) || !(mesh.height > 0.0)) out.push_back("mesh.width and mesh.height must be positive");
  if (mesh.nx < 1 || mesh.ny < 1) out.push_back("mesh.nx and mesh.ny must be >= 1");
  if (mesh.levels < 1) out.push_back("mesh.levels must be >= 1");
  for (Side s : kAllSides) {
    const auto nd = std::count(mesh.dirichlet.begin(), mesh.dirichlet.end(), s);
    const auto nn = std::count(mesh.neumann.begin(), mesh.neumann.end(), s);
    if (nd + nn != 1)
      out.push_back(std::string("mesh: side '") + to_string(s) +
                    "' must appear exactly once in mesh.dirichlet / mesh.neumann");
  }
  if (mesh.dirichlet.empty()) out.push_back("mesh.dirichlet must name at least one side");
  const auto& a = mesh.adaptive;
  if (!(a.fraction > 0.0) || a.fraction > 1.0) out.push_back("mesh.adaptive.fraction must be in (0, 1]");
  if (a.every < 1) out.push_back("mesh.adaptive.every must be >= 1");
  if (a.max_level < 0 || a.max_level > Mesh::kMaxLevel) out.push_back("mesh.adaptive.max_level out of range");
  if (discretization.degree < 1 || discretization.degree > 3)
    out.push_back("discretization.degree must be 1, 2 or 3 (got " + std::to_string(discretization.degree) + ")");
  if (discretization.time_levels < 1) out.push_back("discretization.time_levels must be >= 1");
  add(time_loop().violations(), "discretization/newton: ");
  if (!is_manufactured(scenario)) add(material().violations(), "material: ");
  if (!(epsilon_b > 0.0)) out.push_back("material.epsilon_b must be positive");
  if (!std::isfinite(initial.value) || !std::isfinite(initial.split_x)) out.push_back("initial values must be finite");
  if (signal.kind == SignalKind::PiecewiseLinear) {
    add(signal.waveform.violations(), "signal: ");
    if (std::find(mesh.dirichlet.begin(), mesh.dirichlet.end(), signal.electrode) == mesh.dirichlet.end())
      out.push_back("signal.electrode must be a Dirichlet side");
  }
  for (double t : output.snapshot_times)
    if (!(t >= 0.0) || t > discretization.final_time * (1 + 1e-12))
      out.push_back("output.snapshot_times must lie in [0, final_time]");
  if (output.energy_every < 1) out.push_back("output.energy_every must be >= 1");
  if (output.directory.empty()) out.push_back("output.directory must not be empty");
  return out;
}

namespace detail {

using nlohmann::json;

/// Reads typed values from a JSON object, collecting unknown keys and type
/// mismatches instead of stopping at the first one.
class Reader {
 public:
  Reader(const json& obj, std::string path, std::vector<std::string>& errors)
      : obj_(obj), path_(std::move(path)), errors_(errors) {}

  bool ok() const { return obj_.is_object(); }

  void expect_keys(std::initializer_list<const char*> keys) const {
    if (!ok()) return;
    for (const auto& [k, v] : obj_.items()) {
      if (std::find_if(keys.begin(), keys.end(), [&](const char* s) { return k == s; }) == keys.end())
        errors_.push_back("unknown key '" + name(k) + "'");
    }
  }

  void number(const char* key, double& out) const {
    if (auto v = get(key)) {
      if (v->is_number()) out = v->get<double>();
      else mismatch(key, "a number");
    }
  }
  void integer(const char* key, int& out) const {
    if (auto v = get(key)) {
      if (v->is_number_integer()) out = v->get<int>();
      else mismatch(key, "an integer");
    }
  }
  void boolean(const char* key, bool& out) const {
    if (auto v = get(key)) {
      if (v->is_boolean()) out = v->get<bool>();
      else mismatch(key, "a boolean");
    }
  }
  void string(const char* key, std::string& out) const {
    if (auto v = get(key)) {
      if (v->is_string()) out = v->get<std::string>();
      else mismatch(key, "a string");
    }
  }
  void numbers(const char* key, std::vector<double>& out) const {
    if (auto v = get(key)) {
      if (!v->is_array()) return mismatch(key, "an array of numbers");
      std::vector<double> tmp;
      for (const auto& e : *v) {
        if (!e.is_number()) return mismatch(key, "an array of numbers");
        tmp.push_back(e.get<double>());
      }
      out = std::move(tmp);
    }
  }
  void sides(const char* key, std::vector<Side>& out) const {
    if (auto v = get(key)) {
      if (!v->is_array()) return mismatch(key, "an array of side names");
      std::vector<Side> tmp;
      for (const auto& e : *v) {
        auto s = e.is_string() ? side_from(e.get<std::string>()) : std::nullopt;
        if (!s) return mismatch(key, "an array of 'left', 'right', 'bottom', 'top'");
        tmp.push_back(*s);
      }
      out = std::move(tmp);
    }
  }
  void side(const char* key, Side& out) const {
    if (auto v = get(key)) {
      auto s = v->is_string() ? side_from(v->get<std::string>()) : std::nullopt;
      if (s) out = *s;
      else mismatch(key, "one of 'left', 'right', 'bottom', 'top'");
    }
  }
  template <class Fn>
  void object(const char* key, Fn&& fn) const {
    if (auto v = get(key)) {
      if (!v->is_object()) return mismatch(key, "an object");
      fn(Reader(*v, name(key), errors_));
    }
  }
  const json* get(const char* key) const {
    if (!ok()) return nullptr;
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  void mismatch(const char* key, const char* expected) const {
    errors_.push_back("'" + name(key) + "' must be " + expected);
  }
  std::vector<std::string>& errors() const { return errors_; }

  static std::optional<Side> side_from(const std::string& s) {
    for (Side side : kAllSides)
      if (s == to_string(side)) return side;
    return std::nullopt;
  }

 private:
  const json& obj_;
  std::string path_;
  std::vector<std::string>& errors_;
};

inline void read_component(const Reader& r, ComponentParams& c) {
  r.expect_keys({"alpha", "beta", "gamma", "g", "rho_v", "property"});
  r.number("alpha", c.alpha);
  r.number("beta", c.beta);
  r.number("gamma", c.gamma);
  r.number("g", c.g);
  r.number("rho_v", c.rho_v);
  std::string prop;
  r.string("property", prop);
  if (prop == "ferroelectric") c.property = Property::Ferroelectric;
  else if (prop == "dielectric") c.property = Property::Dielectric;
  else if (!prop.empty()) r.errors().push_back("'" + r.name("property") + "' must be 'ferroelectric' or 'dielectric'");
}

}  // namespace detail

/// Parses a configuration document. Keys absent from the document keep the
/// preset value of the selected scenario (energy_stability when no scenario
/// is named). Every problem found is reported in one ConfigurationError.
inline ScenarioConfig parse_config(const std::string& text) {
  using detail::json;
  using detail::Reader;
  std::vector<std::string> errors;
  json doc = json::object();
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigurationError(std::string("malformed document: ") + e.what());
    }
  }
  if (!doc.is_object()) throw ConfigurationError("configuration document must be an object");

  Scenario scenario = Scenario::EnergyStability;
  if (auto it = doc.find("scenario"); it != doc.end()) {
    auto s = it->is_string() ? parse_scenario(it->get<std::string>()) : std::nullopt;
    if (s) scenario = *s;
    else errors.push_back("'scenario' must be one of convergence_time, convergence_space, energy_stability, hysteresis");
  }
  ScenarioConfig c = preset(scenario);
  Reader root(doc, "", errors);
  root.expect_keys({"scenario", "mesh", "discretization", "material", "manufactured", "initial", "signal",
                    "newton", "energy_check", "output"});

  root.object("mesh", [&](const Reader& r) {
    r.expect_keys({"width", "height", "nx", "ny", "levels", "dirichlet", "neumann", "adaptive"});
    r.number("width", c.mesh.width);
    r.number("height", c.mesh.height);
    r.integer("nx", c.mesh.nx);
    r.integer("ny", c.mesh.ny);
    r.integer("levels", c.mesh.levels);
    r.sides("dirichlet", c.mesh.dirichlet);
    r.sides("neumann", c.mesh.neumann);
    r.object("adaptive", [&](const Reader& a) {
      a.expect_keys({"enabled", "fraction", "every", "max_level"});
      a.boolean("enabled", c.mesh.adaptive.enabled);
      a.number("fraction", c.mesh.adaptive.fraction);
      a.integer("every", c.mesh.adaptive.every);
      a.integer("max_level", c.mesh.adaptive.max_level);
    });
  });
  root.object("discretization", [&](const Reader& r) {
    r.expect_keys({"degree", "final_time", "steps", "time_levels"});
    r.integer("degree", c.discretization.degree);
    r.number("final_time", c.discretization.final_time);
    r.integer("steps", c.discretization.steps);
    r.integer("time_levels", c.discretization.time_levels);
  });
  root.object("material", [&](const Reader& r) {
    r.expect_keys({"epsilon_b", "components"});
    r.number("epsilon_b", c.epsilon_b);
    if (auto v = r.get("components")) {
      if (!v->is_array() || v->size() != 2) {
        r.mismatch("components", "an array of two component objects");
      } else {
        for (int i = 0; i < 2; ++i) {
          const json& e = (*v)[i];
          const std::string path = "material.components[" + std::to_string(i) + "]";
          if (!e.is_object()) errors.push_back("'" + path + "' must be an object");
          else detail::read_component(Reader(e, path, errors), c.components[i]);
        }
      }
    }
  });
  root.object("manufactured", [&](const Reader& r) {
    r.expect_keys({"alpha", "beta", "gamma"});
    r.number("alpha", c.manufactured.alpha);
    r.number("beta", c.manufactured.beta);
    r.number("gamma", c.manufactured.gamma);
  });
  root.object("initial", [&](const Reader& r) {
    r.expect_keys({"kind", "value", "split_x"});
    std::string kind;
    r.string("kind", kind);
    if (kind == "zero") c.initial.kind = InitialKind::Zero;
    else if (kind == "split") c.initial.kind = InitialKind::Split;
    else if (!kind.empty()) errors.push_back("'initial.kind' must be 'zero' or 'split'");
    r.number("value", c.initial.value);
    r.number("split_x", c.initial.split_x);
  });
  root.object("signal", [&](const Reader& r) {
    r.expect_keys({"kind", "breakpoints", "periodic", "electrode"});
    std::string kind;
    r.string("kind", kind);
    if (kind == "zero") c.signal.kind = SignalKind::Zero;
    else if (kind == "piecewise_linear") c.signal.kind = SignalKind::PiecewiseLinear;
    else if (!kind.empty()) errors.push_back("'signal.kind' must be 'zero' or 'piecewise_linear'");
    r.boolean("periodic", c.signal.waveform.periodic);
    r.side("electrode", c.signal.electrode);
    if (auto v = r.get("breakpoints")) {
      std::vector<std::pair<double, double>> bp;
      bool good = v->is_array();
      if (good)
        for (const auto& e : *v) {
          if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
            good = false;
            break;
          }
          bp.emplace_back(e[0].get<double>(), e[1].get<double>());
        }
      if (good) c.signal.waveform.breakpoints = std::move(bp);
      else r.mismatch("breakpoints", "an array of [time, volts] pairs");
    }
  });
  root.object("newton", [&](const Reader& r) {
    r.expect_keys({"abs_tol", "rel_tol", "max_iter", "max_halvings"});
    r.number("abs_tol", c.newton.abs_tol);
    r.number("rel_tol", c.newton.rel_tol);
    r.integer("max_iter", c.newton.max_iter);
    r.integer("max_halvings", c.newton.max_halvings);
  });
  root.object("energy_check", [&](const Reader& r) {
    r.expect_keys({"enabled", "tolerance"});
    r.boolean("enabled", c.energy_check.enabled);
    r.number("tolerance", c.energy_check.tolerance);
  });
  root.object("output", [&](const Reader& r) {
    r.expect_keys({"directory", "snapshot_times", "energy_every", "profile_x"});
    r.string("directory", c.output.directory);
    r.numbers("snapshot_times", c.output.snapshot_times);
    r.integer("energy_every", c.output.energy_every);
    if (auto v = r.get("profile_x")) {
      if (v->is_null()) c.output.profile_x.reset();
      else if (v->is_number()) c.output.profile_x = v->get<double>();
      else r.mismatch("profile_x", "a number or null");
    }
  });

  if (errors.empty())
    for (auto& v : c.violations()) errors.push_back(std::move(v));
  if (!errors.empty()) throw ConfigurationError(std::move(errors));
  return c;
}

inline nlohmann::ordered_json to_json(const ScenarioConfig& c) {
  using nlohmann::ordered_json;
  auto sides = [](const std::vector<Side>& v) {
    ordered_json a = ordered_json::array();
    for (Side s : v) a.push_back(to_string(s));
    return a;
  };
  auto component = [](const ComponentParams& p) {
    return ordered_json{{"alpha", p.alpha}, {"beta", p.beta}, {"gamma", p.gamma}, {"g", p.g},
                        {"rho_v", p.rho_v}, {"property", to_string(p.property)}};
  };
  ordered_json bp = ordered_json::array();
  for (const auto& [t, v] : c.signal.waveform.breakpoints) bp.push_back({t, v});
  ordered_json j;
  j["scenario"] = to_string(c.scenario);
  j["mesh"] = {{"width", c.mesh.width},
               {"height", c.mesh.height},
               {"nx", c.mesh.nx},
               {"ny", c.mesh.ny},
               {"levels", c.mesh.levels},
               {"dirichlet", sides(c.mesh.dirichlet)},
               {"neumann", sides(c.mesh.neumann)},
               {"adaptive",
                {{"enabled", c.mesh.adaptive.enabled},
                 {"fraction", c.mesh.adaptive.fraction},
                 {"every", c.mesh.adaptive.every},
                 {"max_level", c.mesh.adaptive.max_level}}}};
  j["discretization"] = {{"degree", c.discretization.degree},
                         {"final_time", c.discretization.final_time},
                         {"steps", c.discretization.steps},
                         {"time_levels", c.discretization.time_levels}};
  j["material"] = {{"epsilon_b", c.epsilon_b},
                   {"components", ordered_json::array({component(c.components[0]), component(c.components[1])})}};
  j["manufactured"] = {
      {"alpha", c.manufactured.alpha}, {"beta", c.manufactured.beta}, {"gamma", c.manufactured.gamma}};
  j["initial"] = {{"kind", c.initial.kind == InitialKind::Zero ? "zero" : "split"},
                  {"value", c.initial.value},
                  {"split_x", c.initial.split_x}};
  j["signal"] = {{"kind", c.signal.kind == SignalKind::Zero ? "zero" : "piecewise_linear"},
                 {"breakpoints", bp},
                 {"periodic", c.signal.waveform.periodic},
                 {"electrode", to_string(c.signal.electrode)}};
  j["newton"] = {{"abs_tol", c.newton.abs_tol},
                 {"rel_tol", c.newton.rel_tol},
                 {"max_iter", c.newton.max_iter},
                 {"max_halvings", c.newton.max_halvings}};
  j["energy_check"] = {{"enabled", c.energy_check.enabled}, {"tolerance", c.energy_check.tolerance}};
  j["output"] = {{"directory", c.output.directory},
                 {"snapshot_times", c.output.snapshot_times},
                 {"energy_every", c.output.energy_every},
                 {"profile_x", c.output.profile_x ? ordered_json(*c.output.profile_x) : ordered_json(nullptr)}};
  return j;
}

}  // namespace gld
