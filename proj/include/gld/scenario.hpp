#pragma once

// The packaged scenarios: manufactured convergence in time and space,
// the monolayer energy-stability run and the adaptive hysteresis run.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gld/config.hpp"
#include "gld/hdg.hpp"
#include "gld/output.hpp"
#include "gld/signal.hpp"
#include "gld/time_stepper.hpp"
#include "gld/verification.hpp"

namespace gld {

/// Quantities sampled at selected steps of a run.
struct StepDiagnostic {
  int step = 0;
  double time = 0.0;                        // s for physical runs
  std::optional<double> transmission_max;   // largest interior jump residual
  std::optional<double> energy_I;           // P-only form
  std::optional<double> energy_G;           // Gibbs form
};

struct HysteresisRow {
  int step = 0;
  double time = 0.0;  // s
  double bias = 0.0;  // V
  double D_top = 0.0;     // C/m per unit depth
  double D_bottom = 0.0;
  double current_top = 0.0;  // A/m per unit depth
  double current_bottom = 0.0;
  std::size_t cells = 0;
  int max_level = 0;
};

struct ScenarioResult {
  Scenario scenario = Scenario::EnergyStability;
  ConvergenceTable table;
  FieldErrors fitted_order{std::nan(""), std::nan(""), std::nan(""), std::nan("")};
  std::optional<FieldErrors> spatial_estimate;  // convergence_time: spatial part of the finest error
  std::vector<EnergyRecord> energy;             // physical runs, SI energy density
  std::vector<HysteresisRow> hysteresis;
  std::vector<StepDiagnostic> diagnostics;
  std::vector<std::string> files;
};

struct RunOptions {
  bool write_files = true;
  std::function<void(const std::string&)> log;  // progress messages
};

/// Model-unit setup of a physical scenario.
struct PhysicalSetup {
  Scaling scale;
  std::shared_ptr<const Mesh> mesh;
  ProblemData data;
  std::function<Vector2(Point2)> P0;
  std::function<double(double)> bias;  // volts at SI time

  double model_time(double t_si) const { return t_si / scale.time; }
  double si_time(double t) const { return t * scale.time; }
};

inline EdgeSet edge_set(const std::vector<Side>& sides) {
  EdgeSet e;
  for (Side s : sides) e.insert(s);
  return e;
}

/// Lengths scale with diam(Omega), times with T, polarization with 1 C/m^2
/// and potentials with P0 L0 / eps, so eps becomes 1 in model units.
inline PhysicalSetup physical_setup(const ScenarioConfig& c) {
  PhysicalSetup s;
  const MaterialParams si = c.material();
  s.scale.length = std::hypot(c.mesh.width, c.mesh.height);
  s.scale.time = c.discretization.final_time;
  s.scale.polarization = 1.0;
  s.scale.epsilon = si.epsilon;
  const double L = s.scale.length;
  s.mesh = std::make_shared<const Mesh>(build_rectangle_mesh(c.mesh.width / L, c.mesh.height / L, c.mesh.nx,
                                                             c.mesh.ny, edge_set(c.mesh.dirichlet),
                                                             edge_set(c.mesh.neumann)));
  s.data.material = s.scale.to_model(si);
  const SignalSettings sig = c.signal;
  s.bias = [sig](double t) { return sig.kind == SignalKind::Zero ? 0.0 : bias_at(sig.waveform, t); };
  const Scaling scale = s.scale;
  const auto bias = s.bias;
  s.data.dirichlet_potential = [scale, bias, sig](Point2, double t, Side side) {
    return side == sig.electrode ? bias(t * scale.time) / scale.potential() : 0.0;
  };
  const InitialSettings init = c.initial;
  if (init.kind == InitialKind::Split) {
    const double xs = init.split_x / L, v = init.value / scale.polarization;
    s.P0 = [xs, v](Point2 x) -> Vector2 {
      const double p = x.x < xs ? v : (x.x > xs ? -v : 0.0);
      return {p, p};
    };
  }
  return s;
}

inline Discretization make_discretization(std::shared_ptr<const Mesh> mesh, int degree, const MaterialParams& m) {
  const Stabilization stab = set_stabilization(m, *mesh);
  return Discretization(std::move(mesh), degree, stab);
}

namespace detail {

/// Steps at which the first/middle/last diagnostics are taken.
inline bool is_sampled_step(int n, int N) { return n == 1 || n == (N + 1) / 2 || n == N; }

/// Step index closest to each requested time.
inline std::vector<int> snapshot_steps(const std::vector<double>& times, double T, int N) {
  std::vector<int> out;
  for (double t : times) out.push_back(static_cast<int>(std::lround(t / T * N)));
  return out;
}

inline std::string time_label(double t_si) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.0fns", t_si * 1e9);
  return buf;
}

}  // namespace detail

/// Runs the manufactured problem on `mesh` with N steps to the final time and
/// returns the final state together with its errors.
struct ManufacturedRun {
  StateFields state;
  FieldErrors error;
  std::size_t dofs = 0;
  std::vector<StepDiagnostic> diagnostics;
};

inline ManufacturedRun run_manufactured(const ScenarioConfig& c, const Discretization& d, int N) {
  const ManufacturedSolution ms{c.manufactured.alpha, c.manufactured.beta, c.manufactured.gamma};
  const ProblemData data = manufactured_problem(ms);
  TimeLoopConfig loop = c.time_loop();
  loop.steps = N;
  ManufacturedRun out;
  auto observer = [&](int n, double t, const StateFields& s, const EnergyRecord&) {
    if (detail::is_sampled_step(n, N))
      out.diagnostics.push_back({n, t, transmission_residual(d, data, s).max_interior(), {}, {}});
  };
  const auto res = run(d, data, loop, [ms](Point2 x) { return ms.P(0.0, x); }, observer);
  out.state = res.state;
  out.error = l2_error(d, res.state, ms, loop.final_time);
  out.dofs = d.num_free_traces();
  return out;
}

inline ScenarioResult run_convergence_time(const ScenarioConfig& c, const RunOptions& opt) {
  ScenarioResult r;
  r.scenario = c.scenario;
  const ManufacturedSolution ms{c.manufactured.alpha, c.manufactured.beta, c.manufactured.gamma};
  const int k = c.discretization.degree;
  auto mesh = std::make_shared<const Mesh>(build_rectangle_mesh(
      c.mesh.width, c.mesh.height, c.mesh.nx, c.mesh.ny, edge_set(c.mesh.dirichlet), edge_set(c.mesh.neumann)));
  const Discretization d = make_discretization(mesh, k, ms.material());
  ManufacturedRun finest;
  std::vector<double> taus;
  std::array<std::vector<double>, 4> errs;
  for (int j = 0; j < c.discretization.time_levels; ++j) {
    const int N = c.discretization.steps << j;
    auto m = run_manufactured(c, d, N);
    ConvergenceRow row;
    row.level = j;
    row.h = mesh->max_cell_diameter();
    row.tau = c.discretization.final_time / N;
    row.dofs = m.dofs;
    row.error = m.error;
    r.table.rows.push_back(row);
    taus.push_back(row.tau);
    errs[0].push_back(m.error.V);
    errs[1].push_back(m.error.E);
    errs[2].push_back(m.error.P);
    errs[3].push_back(m.error.U);
    if (opt.log) opt.log("tau = " + std::to_string(row.tau) + ": err_V = " + std::to_string(m.error.V));
    r.diagnostics.insert(r.diagnostics.end(), m.diagnostics.begin(), m.diagnostics.end());
    finest = std::move(m);
  }
  observed_order(r.table, 2.0);
  if (taus.size() >= 2)
    r.fitted_order = {fitted_order(taus, errs[0]), fitted_order(taus, errs[1]), fitted_order(taus, errs[2]),
                      fitted_order(taus, errs[3])};

  // Spatial part of the finest error: compare with one uniform refinement at
  // the same tau; for order k+1 the coarse error is about
  // 2^(k+1) / (2^(k+1) - 1) times the difference of the two solutions.
  if (c.mesh.levels >= 2) {
    auto fine_mesh = std::make_shared<const Mesh>(refine_uniform(*mesh));
    const Discretization df = make_discretization(fine_mesh, k, ms.material());
    const int N = c.discretization.steps << (c.discretization.time_levels - 1);
    const auto fine = run_manufactured(c, df, N);
    StateFields diff = transfer(d, finest.state, df);
    for (std::size_t i = 0; i < diff.cells.size(); ++i) diff.cells[i] = fine.state.cells[i] - diff.cells[i];
    const ExactFields zero{[](Point2) { return 0.0; }, [](Point2) { return Vector2{}; },
                           [](Point2) { return Vector2{}; },
                           [](Point2) { return std::array<Vector2, 2>{}; }};
    const FieldErrors dn = l2_error(df, diff, zero);
    const double f = std::pow(2.0, k + 1) / (std::pow(2.0, k + 1) - 1.0);
    r.spatial_estimate = FieldErrors{f * dn.V, f * dn.E, f * dn.P, f * dn.U};
  }
  return r;
}

inline ScenarioResult run_convergence_space(const ScenarioConfig& c, const RunOptions& opt) {
  ScenarioResult r;
  r.scenario = c.scenario;
  const ManufacturedSolution ms{c.manufactured.alpha, c.manufactured.beta, c.manufactured.gamma};
  const int k = c.discretization.degree;
  auto mesh = std::make_shared<const Mesh>(build_rectangle_mesh(
      c.mesh.width, c.mesh.height, c.mesh.nx, c.mesh.ny, edge_set(c.mesh.dirichlet), edge_set(c.mesh.neumann)));
  for (int l = 0; l < c.mesh.levels; ++l) {
    if (l > 0) mesh = std::make_shared<const Mesh>(refine_uniform(*mesh));
    const Discretization d = make_discretization(mesh, k, ms.material());
    const int N = c.discretization.steps << ((k + 1) * l);
    auto m = run_manufactured(c, d, N);
    ConvergenceRow row;
    row.level = l;
    row.h = mesh->max_cell_diameter();
    row.tau = c.discretization.final_time / N;
    row.dofs = m.dofs;
    row.error = m.error;
    r.table.rows.push_back(row);
    r.diagnostics.insert(r.diagnostics.end(), m.diagnostics.begin(), m.diagnostics.end());
    if (opt.log)
      opt.log("level " + std::to_string(l) + " (" + std::to_string(mesh->num_cells()) +
              " cells): err_V = " + std::to_string(m.error.V));
  }
  observed_order(r.table, 2.0);
  return r;
}

namespace detail {

/// Trace samples along the vertical line x1 = x (model units), sorted by x2.
inline std::vector<std::array<double, 3>> trace_profile(const Discretization& d, const StateFields& s, double x) {
  const Mesh& mesh = d.mesh();
  std::vector<std::array<double, 3>> out;
  const double tol = 1e-12 * mesh.width();
  for (std::size_t f = 0; f < mesh.num_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    if (facet.horizontal || std::abs(facet.a.x - x) > tol) continue;
    for (double t : {-1.0, -0.5, 0.0, 0.5}) {
      const Point2 p = d.facet_point(f, t);
      out.push_back({p.y, eval_trace_field(d, s, f, trace::V, t), eval_trace_field(d, s, f, trace::P(1), t)});
    }
    if (facet.b.y >= mesh.height() - tol) {
      out.push_back({facet.b.y, eval_trace_field(d, s, f, trace::V, 1.0),
                     eval_trace_field(d, s, f, trace::P(1), 1.0)});
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Energy-stability and hysteresis runs share this loop; the mesh is
/// refined every `adaptive.every` steps when adaptivity is enabled.
inline ScenarioResult run_physical(const ScenarioConfig& c, const RunOptions& opt) {
  ScenarioResult r;
  r.scenario = c.scenario;
  PhysicalSetup setup = physical_setup(c);
  const ProblemData& data = setup.data;
  const Scaling& scale = setup.scale;
  const int N = c.discretization.steps;
  const double tau = 1.0 / N;  // model units, T = 1
  const double tau_si = c.discretization.final_time / N;
  const int k = c.discretization.degree;
  const auto& adaptive = c.mesh.adaptive;
  const auto snapshot_at = detail::snapshot_steps(c.output.snapshot_times, c.discretization.final_time, N);
  const std::filesystem::path dir = c.output.directory;
  const bool hysteresis = c.scenario == Scenario::Hysteresis;

  auto d = std::make_unique<Discretization>(make_discretization(setup.mesh, k, data.material));
  StateFields state = initial_state(*d, data, setup.P0, 0.0);

  // I and G at 20 states spread over the run.
  std::vector<int> identity_steps;
  for (int i = 0; i < 20; ++i) identity_steps.push_back(static_cast<int>(std::lround(double(i) * N / 19.0)));

  CsvWriter profile({"time", "x2", "V_hat", "P_hat_2"});
  auto snapshot = [&](int n) {
    if (!opt.write_files) return;
    if (std::find(snapshot_at.begin(), snapshot_at.end(), n) == snapshot_at.end()) return;
    const double t_si = n * tau_si;
    const std::string name = "snapshot_" + detail::time_label(t_si) + ".vtk";
    write_vtk(*d, state, dir / name, scale);
    r.files.push_back((dir / name).string());
    if (c.output.profile_x) {
      for (const auto& [y, V, P2] : detail::trace_profile(*d, state, *c.output.profile_x / scale.length))
        profile.row(t_si, y * scale.length, V * scale.potential(), P2 * scale.polarization);
    }
  };

  const double energy_scale = scale.energy_density();
  const double area_si = c.mesh.width * c.mesh.height;
  auto record = [&](int n, const NewtonReport* rep) {
    EnergyRecord e;
    e.step = n;
    e.time = n * tau_si;
    e.energy = discrete_energy(*d, data.material, state) * energy_scale;
    e.total = e.energy * area_si;
    if (rep) {
      e.newton_iterations = rep->iterations;
      e.newton_residual = rep->final_residual;
    }
    r.energy.push_back(e);
  };
  auto diagnose = [&](int n) {
    StepDiagnostic dg;
    dg.step = n;
    dg.time = n * tau_si;
    bool any = false;
    if (detail::is_sampled_step(n, N)) {
      dg.transmission_max = transmission_residual(*d, data, state).max_interior();
      any = true;
    }
    if (std::find(identity_steps.begin(), identity_steps.end(), n) != identity_steps.end()) {
      dg.energy_I = modified_energy_I(*d, data.material, state);
      dg.energy_G = gibbs_energy_G(*d, data, state, n * tau);
      any = true;
    }
    if (any) r.diagnostics.push_back(dg);
  };
  auto refine = [&](int n) {
    if (!adaptive.enabled || n % adaptive.every != 0 || n >= N) return;
    const auto eta = kelly_estimate(*d, state);
    const Mesh& mesh = d->mesh();
    auto eligible = std::make_unique<bool[]>(mesh.num_cells());
    for (std::size_t cidx = 0; cidx < mesh.num_cells(); ++cidx)
      eligible[cidx] = mesh.cell(cidx).level() < adaptive.max_level;
    const auto flagged =
        select_refinement(eta, adaptive.fraction, std::span<const bool>(eligible.get(), mesh.num_cells()));
    if (flagged.empty()) return;
    auto new_mesh = std::make_shared<const Mesh>(refine_adaptive(mesh, flagged));
    auto nd = std::make_unique<Discretization>(make_discretization(new_mesh, k, data.material));
    if (n == 0) {
      state = initial_state(*nd, data, setup.P0, 0.0);
    } else {
      state = transfer(*d, state, *nd);
      apply_trace_constraints(*nd, data, n * tau, state);
    }
    d = std::move(nd);
  };

  double D_top = displacement_flux(*d, data, state, Side::Top) * scale.displacement_flux();
  double D_bottom = displacement_flux(*d, data, state, Side::Bottom) * scale.displacement_flux();
  record(0, nullptr);
  diagnose(0);
  snapshot(0);
  refine(0);
  if (hysteresis) {
    D_top = displacement_flux(*d, data, state, Side::Top) * scale.displacement_flux();
    D_bottom = displacement_flux(*d, data, state, Side::Bottom) * scale.displacement_flux();
  }

  const double slack = c.energy_check.tolerance * (1.0 + std::abs(r.energy.front().energy / energy_scale));
  std::optional<StabilityViolation> violation;
  for (int n = 1; n <= N; ++n) {
    const double t = n * tau;
    NewtonReport rep;
    state = step(*d, data, state, t, tau, c.newton, &rep);
    record(n, &rep);
    diagnose(n);
    snapshot(n);
    if (hysteresis) {
      HysteresisRow h;
      h.step = n;
      h.time = n * tau_si;
      h.bias = setup.bias(h.time);
      h.D_top = displacement_flux(*d, data, state, Side::Top) * scale.displacement_flux();
      h.D_bottom = displacement_flux(*d, data, state, Side::Bottom) * scale.displacement_flux();
      h.current_top = (h.D_top - D_top) / tau_si;
      h.current_bottom = (h.D_bottom - D_bottom) / tau_si;
      h.cells = d->mesh().num_cells();
      h.max_level = d->mesh().max_level();
      D_top = h.D_top;
      D_bottom = h.D_bottom;
      r.hysteresis.push_back(h);
    }
    if (opt.log && (n % 50 == 0 || n == N))
      opt.log("step " + std::to_string(n) + "/" + std::to_string(N) + ": d_h = " +
              std::to_string(r.energy.back().energy) + ", newton " + std::to_string(rep.iterations) + ", cells " +
              std::to_string(d->mesh().num_cells()));
    const double prev = r.energy[r.energy.size() - 2].energy / energy_scale;
    const double cur = r.energy.back().energy / energy_scale;
    if (c.energy_check.enabled && cur > prev + slack) {
      violation.emplace("discrete energy increased at step " + std::to_string(n), n);
      break;
    }
    refine(n);
  }

  if (opt.write_files) {
    CsvWriter energy({"step", "time", "energy", "total", "newton_iterations", "newton_residual"});
    for (std::size_t i = 0; i < r.energy.size(); i += static_cast<std::size_t>(c.output.energy_every)) {
      const auto& e = r.energy[i];
      energy.row(e.step, e.time, e.energy, e.total, e.newton_iterations, e.newton_residual);
    }
    write_file_atomic(dir / "energy.csv", energy.str());
    r.files.push_back((dir / "energy.csv").string());
    if (hysteresis) {
      CsvWriter loop({"step", "time", "bias", "D_top", "D_bottom"});
      CsvWriter current({"step", "time", "current_top", "current_bottom"});
      CsvWriter meshes({"step", "cells", "max_level"});
      for (const auto& h : r.hysteresis) {
        loop.row(h.step, h.time, h.bias, h.D_top, h.D_bottom);
        current.row(h.step, h.time, h.current_top, h.current_bottom);
        meshes.row(h.step, h.cells, h.max_level);
      }
      write_file_atomic(dir / "hysteresis.csv", loop.str());
      write_file_atomic(dir / "current.csv", current.str());
      write_file_atomic(dir / "meshes.csv", meshes.str());
      r.files.insert(r.files.end(), {(dir / "hysteresis.csv").string(), (dir / "current.csv").string(),
                                     (dir / "meshes.csv").string()});
    }
    if (c.output.profile_x) {
      write_file_atomic(dir / "profile.csv", profile.str());
      r.files.push_back((dir / "profile.csv").string());
    }
  }
  if (violation) throw *violation;
  return r;
}

inline nlohmann::ordered_json summary_json(const ScenarioConfig& c, const ScenarioResult& r) {
  using nlohmann::ordered_json;
  auto fields = [](const FieldErrors& e) {
    auto num = [](double v) { return std::isnan(v) ? ordered_json(nullptr) : ordered_json(v); };
    return ordered_json{{"V", num(e.V)}, {"E", num(e.E)}, {"P", num(e.P)}, {"U", num(e.U)}};
  };
  ordered_json j;
  j["scenario"] = to_string(c.scenario);
  if (!r.table.rows.empty()) {
    j["last_order"] = fields(r.table.rows.back().order);
    if (c.scenario == Scenario::ConvergenceTime) j["fitted_order"] = fields(r.fitted_order);
    if (r.spatial_estimate) j["spatial_error_estimate"] = fields(*r.spatial_estimate);
  }
  if (!r.energy.empty()) {
    j["energy_initial"] = r.energy.front().energy;
    j["energy_final"] = r.energy.back().energy;
  }
  double tmax = 0.0;
  for (const auto& d : r.diagnostics)
    if (d.transmission_max) tmax = std::max(tmax, *d.transmission_max);
  j["transmission_residual_max"] = tmax;
  return j;
}

inline void write_convergence_outputs(const ScenarioConfig& c, ScenarioResult& r) {
  const std::filesystem::path dir = c.output.directory;
  write_file_atomic(dir / "convergence.csv", convergence_csv(r.table));
  r.files.push_back((dir / "convergence.csv").string());
}

/// Runs one configured scenario and, when requested, writes its files.
inline ScenarioResult run_scenario(const ScenarioConfig& c, const RunOptions& opt = {}) {
  if (auto v = c.violations(); !v.empty()) throw ConfigurationError(std::move(v));
  ScenarioResult r;
  switch (c.scenario) {
    case Scenario::ConvergenceTime: r = run_convergence_time(c, opt); break;
    case Scenario::ConvergenceSpace: r = run_convergence_space(c, opt); break;
    case Scenario::EnergyStability:
    case Scenario::Hysteresis: r = run_physical(c, opt); break;
  }
  if (opt.write_files) {
    if (is_manufactured(c.scenario)) write_convergence_outputs(c, r);
    const std::filesystem::path dir = c.output.directory;
    write_file_atomic(dir / "summary.json", summary_json(c, r).dump(2) + "\n");
    r.files.push_back((dir / "summary.json").string());
  }
  return r;
}

}  // namespace gld
