#pragma once

// Semi-implicit convex-split time stepping with a Newton solve per step,
// discrete energies, and the energy-stability monitor.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "gld/errors.hpp"
#include "gld/hdg.hpp"

namespace gld {

struct NewtonSettings {
  double abs_tol = 1e-11;
  double rel_tol = 1e-10;
  int max_iter = 30;
  int max_halvings = 5;
};

struct EnergyCheck {
  bool enabled = true;
  double tolerance = 1e-10;  // relative to 1 + |d_h(0)|
};

struct TimeLoopConfig {
  double final_time = 1.0;
  int steps = 1;
  NewtonSettings newton;
  EnergyCheck energy_check;

  double tau() const { return final_time / steps; }

  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (!(final_time > 0.0)) out.push_back("final time must be positive");
    if (steps < 1) out.push_back("step count must be >= 1");
    if (!(newton.abs_tol > 0.0) || !(newton.rel_tol > 0.0)) out.push_back("Newton tolerances must be positive");
    if (newton.max_iter < 1) out.push_back("Newton max_iter must be >= 1");
    if (energy_check.enabled && !(energy_check.tolerance > 0.0)) out.push_back("energy tolerance must be positive");
    return out;
  }
};

struct NewtonReport {
  int iterations = 0;  // number of linear solves
  double initial_residual = 0.0;
  double final_residual = 0.0;
  std::vector<double> history;  // residual before each linear solve, and the final one
};

/// Solves the linearized system assembled at `guess`; returns the new iterate.
using LinearizedSolver =
    std::function<StateFields(const Discretization&, const StepContext&, const StateFields&, const CondensedSystem&)>;

inline StateFields condensed_solver(const Discretization& d, const StepContext&, const StateFields&,
                                    const CondensedSystem& sys) {
  return solve_condensed(d, sys);
}

/// Cellwise L2 projection of P0 and facet L2 projection for the P traces.
inline StateFields project_initial(const Discretization& d, const std::function<Vector2(Point2)>& P0) {
  StateFields s = StateFields::zeros(d);
  if (!P0) return s;
  const Mesh& mesh = d.mesh();
  const auto& tab = d.nonlinear_tabulation();
  const int nb = d.nb(), nk = d.nk();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const double J = 0.25 * mesh.cell(c).area();
    std::array<std::vector<double>, 2> rhs{std::vector<double>(nb, 0.0), std::vector<double>(nb, 0.0)};
    for (std::size_t q = 0; q < tab.rule.size(); ++q) {
      const Vector2 p = P0(d.cell_point(c, tab.rule.points[q]));
      const auto phi = tab.values_at(q);
      const double w = tab.rule.weights[q] * J;
      for (int a = 0; a < nb; ++a)
        for (int i = 0; i < 2; ++i) rhs[i][a] += w * p[i] * phi[a];
    }
    DenseLU lu(d.cell_matrices(c).M);
    for (int i = 0; i < 2; ++i) {
      const auto coef = lu.solve(rhs[i]);
      std::copy(coef.begin(), coef.end(), s.cell_block(d, c, block::P(i)).begin());
    }
  }
  const auto& rule = d.data_facet_rule();
  std::vector<double> psi(nk);
  for (std::size_t f = 0; f < mesh.num_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    DenseMatrix Mtt(nk, nk);
    std::array<std::vector<double>, 2> rhs{std::vector<double>(nk, 0.0), std::vector<double>(nk, 0.0)};
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double t = rule.points[q][0];
      const double w = rule.weights[q] * 0.5 * facet.length;
      d.facet_basis().evaluate(t, psi);
      const Vector2 p = P0(d.facet_point(f, t));
      for (int a = 0; a < nk; ++a) {
        for (int b = 0; b < nk; ++b) Mtt(a, b) += w * psi[a] * psi[b];
        for (int i = 0; i < 2; ++i) rhs[i][a] += w * p[i] * psi[a];
      }
    }
    DenseLU lu(Mtt);
    for (int i = 0; i < 2; ++i) {
      const auto coef = lu.solve(rhs[i]);
      std::copy(coef.begin(), coef.end(), s.trace_block(d, f, trace::P(i)).begin());
    }
  }
  return s;
}

/// Initial state: P from the projection, V, E, U and the remaining traces
/// from one linear solve with P held fixed.
inline StateFields initial_state(const Discretization& d, const ProblemData& data,
                                 const std::function<Vector2(Point2)>& P0, double t0 = 0.0,
                                 const LinearizedSolver& solver = condensed_solver) {
  const StateFields projected = project_initial(d, P0);
  StepContext ctx{&data, &projected, 1.0, t0, AssemblyMode::Initial};
  StateFields guess = projected;
  apply_trace_constraints(d, data, t0, guess);
  return solver(d, ctx, guess, assemble_global(d, ctx, guess));
}

/// One step of the convex-split scheme at time t_n = t_prev + tau.
inline StateFields step(const Discretization& d, const ProblemData& data, const StateFields& previous, double t_n,
                        double tau, const NewtonSettings& newton, NewtonReport* report = nullptr,
                        const LinearizedSolver& solver = condensed_solver) {
  StepContext ctx{&data, &previous, tau, t_n, AssemblyMode::TimeStep};
  StateFields x = previous;
  apply_trace_constraints(d, data, t_n, x);
  CondensedSystem sys = assemble_global(d, ctx, x);
  double r = sys.residual_norm();
  NewtonReport rep;
  rep.initial_residual = r;
  rep.history.push_back(r);
  for (int j = 0;; ++j) {
    if (!std::isfinite(r)) throw SolverError("Newton iteration diverged (non-finite residual)", r);
    if (j >= 1 && r <= newton.abs_tol + newton.rel_tol * rep.initial_residual) break;
    if (j >= newton.max_iter)
      throw SolverError("Newton iteration did not converge in " + std::to_string(newton.max_iter) +
                            " iterations (residual " + std::to_string(r) + ")",
                        r);
    const StateFields x_lin = solver(d, ctx, x, sys);
    ++rep.iterations;
    StateFields trial = x_lin;
    CondensedSystem trial_sys = assemble_global(d, ctx, trial);
    double r_trial = trial_sys.residual_norm();
    double theta = 1.0;
    for (int h = 0; h < newton.max_halvings && !(r_trial <= r); ++h) {
      theta *= 0.5;
      for (std::size_t i = 0; i < trial.cells.size(); ++i) trial.cells[i] = x.cells[i] + theta * (x_lin.cells[i] - x.cells[i]);
      for (std::size_t i = 0; i < trial.traces.size(); ++i)
        trial.traces[i] = x.traces[i] + theta * (x_lin.traces[i] - x.traces[i]);
      trial_sys = assemble_global(d, ctx, trial);
      r_trial = trial_sys.residual_norm();
    }
    x = std::move(trial);
    sys = std::move(trial_sys);
    r = r_trial;
    rep.history.push_back(r);
  }
  rep.final_residual = r;
  if (report) *report = rep;
  return x;
}

namespace detail {

struct EnergyParts {
  double electric = 0.0;       // eps/2 ||E||^2
  double landau = 0.0;         // sum_i int F(P_i)
  double gradient = 0.0;       // sum_i ||U_i||^2 / (2 g_i)
  double jump = 0.0;           // tau_V/2 ||V - V^||^2 on cell boundaries
  double polarization_jump = 0.0;  // tau_P/2 sum_i ||P_i - P^_i||^2 on cell boundaries
  double charge = 0.0;         // (rho, V)
  double coupling = 0.0;       // (P, grad V) - <P^.nu, V - V^>
};

inline EnergyParts energy_parts(const Discretization& d, const ProblemData* data, const MaterialParams& mat,
                                const StateFields& s, double t) {
  EnergyParts e;
  const Mesh& mesh = d.mesh();
  const auto& tab = d.nonlinear_tabulation();
  const int nb = d.nb();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const Cell& cell = mesh.cell(c);
    const double J = 0.25 * cell.area();
    const std::array<double, 2> dref{2.0 / cell.width(), 2.0 / cell.height()};
    for (std::size_t q = 0; q < tab.rule.size(); ++q) {
      const auto phi = tab.values_at(q);
      const auto grad = tab.gradients_at(q);
      const double w = tab.rule.weights[q] * J;
      const double E0 = dot(s.cell_block(d, c, block::E(0)), phi);
      const double E1 = dot(s.cell_block(d, c, block::E(1)), phi);
      e.electric += w * 0.5 * mat.epsilon * (E0 * E0 + E1 * E1);
      const auto vb = s.cell_block(d, c, block::V);
      std::array<double, 2> gradV{0.0, 0.0};
      for (int a = 0; a < nb; ++a)
        for (int j = 0; j < 2; ++j) gradV[j] += vb[a] * grad[a][j] * dref[j];
      for (int i = 0; i < 2; ++i) {
        const double p = dot(s.cell_block(d, c, block::P(i)), phi);
        e.landau += w * landau_F(mat, i, p);
        e.coupling += w * p * gradV[i];
        if (mat[i].g > 0.0) {
          const double u0 = dot(s.cell_block(d, c, block::U(i, 0)), phi);
          const double u1 = dot(s.cell_block(d, c, block::U(i, 1)), phi);
          e.gradient += w * (u0 * u0 + u1 * u1) / (2.0 * mat[i].g);
        }
      }
      if (data && data->charge) {
        const double v = dot(vb, phi);
        e.charge += w * data->charge(d.cell_point(c, tab.rule.points[q]), t) * v;
      }
    }
    const auto& rule = d.facet_rule();
    for (const CellFacet& cf : mesh.cell_facets(c)) {
      const Facet& facet = mesh.facet(cf.facet);
      const Point2 nu = cf.outward_normal();
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double tt = rule.points[q][0];
        const double w = rule.weights[q] * 0.5 * facet.length;
        const auto ref = d.facet_reference_point(cf, tt);
        const double jump = eval_cell_field(d, s, c, block::V, ref) - eval_trace_field(d, s, cf.facet, trace::V, tt);
        const double pn = eval_trace_field(d, s, cf.facet, trace::P(0), tt) * nu.x +
                          eval_trace_field(d, s, cf.facet, trace::P(1), tt) * nu.y;
        e.jump += w * 0.5 * d.stabilization().tau_V * jump * jump;
        for (int i = 0; i < 2; ++i) {
          const double pj = eval_cell_field(d, s, c, block::P(i), ref) - eval_trace_field(d, s, cf.facet, trace::P(i), tt);
          e.polarization_jump += w * 0.5 * d.stabilization().tau_P * pj * pj;
        }
        e.coupling -= w * pn * jump;
      }
    }
  }
  return e;
}

}  // namespace detail

/// d_h = (1/|Omega|) int eps/2 |E|^2 + sum_i F(P_i) + sum_i |U_i|^2 / (2 g_i).
inline double discrete_energy(const Discretization& d, const MaterialParams& mat, const StateFields& s) {
  const auto e = detail::energy_parts(d, nullptr, mat, s, 0.0);
  return (e.electric + e.landau + e.gradient) / d.mesh().area();
}

/// The P-only energy with V solved from P: d_h plus the trace-stabilization
/// part of the electric energy.
inline double modified_energy_I(const Discretization& d, const MaterialParams& mat, const StateFields& s) {
  const auto e = detail::energy_parts(d, nullptr, mat, s, 0.0);
  return (e.electric + e.jump + e.landau + e.gradient) / d.mesh().area();
}

/// The Gibbs form G(V, P), written with the discrete coupling
/// c_h(P, V) = (P, grad V) - <P^.nu, V - V^>.
inline double gibbs_energy_G(const Discretization& d, const ProblemData& data, const StateFields& s, double t) {
  const auto e = detail::energy_parts(d, &data, data.material, s, t);
  return (e.charge + e.coupling - e.electric - e.jump + e.landau + e.gradient) / d.mesh().area();
}

struct EnergyRecord {
  int step = 0;
  double time = 0.0;
  double energy = 0.0;        // d_h
  double total = 0.0;         // d_h |Omega|
  int newton_iterations = 0;
  double newton_residual = 0.0;
};

struct RunResult {
  StateFields state;
  std::vector<EnergyRecord> records;  // records[0] is the initial state
};

/// Called after every step (and once for the initial state with step 0).
using StepObserver = std::function<void(int step, double time, const StateFields&, const EnergyRecord&)>;

inline RunResult run(const Discretization& d, const ProblemData& data, const TimeLoopConfig& config,
                     const std::function<Vector2(Point2)>& P0, const StepObserver& observer = {},
                     const LinearizedSolver& solver = condensed_solver) {
  if (auto v = config.violations(); !v.empty()) throw ConfigurationError(std::move(v));
  const double tau = config.tau();
  RunResult out;
  out.state = initial_state(d, data, P0, 0.0, solver);
  const double area = d.mesh().area();
  EnergyRecord rec0;
  rec0.energy = discrete_energy(d, data.material, out.state);
  rec0.total = rec0.energy * area;
  out.records.push_back(rec0);
  if (observer) observer(0, 0.0, out.state, rec0);
  const double slack = config.energy_check.tolerance * (1.0 + std::abs(rec0.energy));
  for (int n = 1; n <= config.steps; ++n) {
    const double t = n * tau;
    NewtonReport rep;
    out.state = step(d, data, out.state, t, tau, config.newton, &rep, solver);
    EnergyRecord rec;
    rec.step = n;
    rec.time = t;
    rec.energy = discrete_energy(d, data.material, out.state);
    rec.total = rec.energy * area;
    rec.newton_iterations = rep.iterations;
    rec.newton_residual = rep.final_residual;
    if (!std::isfinite(rec.energy)) throw SolverError("non-finite energy at step " + std::to_string(n), rec.energy);
    const double prev = out.records.back().energy;
    out.records.push_back(rec);
    if (observer) observer(n, t, out.state, rec);
    if (config.energy_check.enabled && rec.energy > prev + slack)
      throw StabilityViolation("discrete energy increased at step " + std::to_string(n) + " (" +
                                   std::to_string(prev) + " -> " + std::to_string(rec.energy) + ")",
                               n);
  }
  return out;
}

}  // namespace gld
