#pragma once

// Manufactured solution, error norms and convergence tables, the Kelly
// indicator with fixed-fraction marking, solution transfer between meshes,
// and a dense monolithic solver used as an oracle for static condensation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "gld/hdg.hpp"
#include "gld/mesh.hpp"
#include "gld/time_stepper.hpp"

namespace gld {

/// Closed-form solution on the unit square:
///   V = e^{-2 pi^2 t} sin(pi x1) sin(pi x2),  P = grad V,  E = -grad V.
/// The forcing belongs to  d_t P - Lap P - DF(P) + grad V = G  with the
/// configured Landau constants and unit eps, g, rho_v.
struct ManufacturedSolution {
  double alpha = 1.0;
  double beta = -1.0;
  double gamma = 0.0;

  static constexpr double pi = std::numbers::pi;

  double decay(double t) const { return std::exp(-2.0 * pi * pi * t); }

  double V(double t, Point2 x) const { return decay(t) * std::sin(pi * x.x) * std::sin(pi * x.y); }
  Vector2 P(double t, Point2 x) const {
    const double e = decay(t) * pi;
    return {e * std::cos(pi * x.x) * std::sin(pi * x.y), e * std::sin(pi * x.x) * std::cos(pi * x.y)};
  }
  Vector2 E(double t, Point2 x) const {
    const auto p = P(t, x);
    return {-p[0], -p[1]};
  }
  /// Rows are U_i = -grad P_i.
  std::array<Vector2, 2> U(double t, Point2 x) const {
    const double e = decay(t) * pi * pi;
    const double ss = std::sin(pi * x.x) * std::sin(pi * x.y);
    const double cc = std::cos(pi * x.x) * std::cos(pi * x.y);
    return {Vector2{e * ss, -e * cc}, Vector2{-e * cc, e * ss}};
  }

  double dF(double p) const { return 2.0 * alpha * p + 4.0 * beta * p * p * p + 6.0 * gamma * std::pow(p, 5); }

  /// The solver relaxes along +DF, so the printed -DF is realized by the
  /// negated constants.
  MaterialParams material() const {
    MaterialParams m;
    m.epsilon = 1.0;
    for (int i = 0; i < 2; ++i) m[i] = {-alpha, -beta, -gamma, 1.0, 1.0, Property::Ferroelectric};
    return m;
  }
};

/// G = d_t P - Lap P - DF(P) + grad V. For these fields d_t P = Lap P and
/// grad V = P, so G_i = P_i - DF(P_i).
inline Vector2 manufactured_forcing(const ManufacturedSolution& ms, double t, Point2 x) {
  const auto p = ms.P(t, x);
  return {p[0] - ms.dF(p[0]), p[1] - ms.dF(p[1])};
}

inline ProblemData manufactured_problem(const ManufacturedSolution& ms) {
  ProblemData data;
  data.material = ms.material();
  data.forcing = [ms](Point2 x, double t) { return manufactured_forcing(ms, t, x); };
  data.dirichlet_potential = [ms](Point2 x, double t, Side) { return ms.V(t, x); };
  data.boundary_polarization = [ms](Point2 x, double t, Side) { return ms.P(t, x); };
  return data;
}

/// Unit square, V prescribed on x2 = 0 and x2 = 1, flux condition on x1 = 0, 1.
inline Mesh manufactured_mesh(int n) {
  return build_rectangle_mesh(1.0, 1.0, n, n, {Side::Bottom, Side::Top}, {Side::Left, Side::Right});
}

struct FieldErrors {
  double V = 0.0, E = 0.0, P = 0.0, U = 0.0;
};

struct ExactFields {
  std::function<double(Point2)> V;
  std::function<Vector2(Point2)> E;
  std::function<Vector2(Point2)> P;
  std::function<std::array<Vector2, 2>(Point2)> U;
};

inline ExactFields exact_fields(const ManufacturedSolution& ms, double t) {
  return {[ms, t](Point2 x) { return ms.V(t, x); }, [ms, t](Point2 x) { return ms.E(t, x); },
          [ms, t](Point2 x) { return ms.P(t, x); }, [ms, t](Point2 x) { return ms.U(t, x); }};
}

/// L2(Omega) errors of V, E, P and U (vector norms over all components).
inline FieldErrors l2_error(const Discretization& d, const StateFields& s, const ExactFields& exact) {
  const Mesh& mesh = d.mesh();
  const auto rule = tensor_quadrature(d.error_rule_1d());
  const int nb = d.nb();
  std::vector<double> phi(nb);
  FieldErrors e2;
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const double J = 0.25 * mesh.cell(c).area();
    for (std::size_t q = 0; q < rule.size(); ++q) {
      d.cell_basis().evaluate(rule.points[q], phi);
      const double w = rule.weights[q] * J;
      const Point2 x = d.cell_point(c, rule.points[q]);
      auto val = [&](int field) { return dot(s.cell_block(d, c, field), phi); };
      if (exact.V) e2.V += w * std::pow(val(block::V) - exact.V(x), 2);
      if (exact.E) {
        const auto E = exact.E(x);
        for (int j = 0; j < 2; ++j) e2.E += w * std::pow(val(block::E(j)) - E[j], 2);
      }
      if (exact.P) {
        const auto P = exact.P(x);
        for (int i = 0; i < 2; ++i) e2.P += w * std::pow(val(block::P(i)) - P[i], 2);
      }
      if (exact.U) {
        const auto U = exact.U(x);
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) e2.U += w * std::pow(val(block::U(i, j)) - U[i][j], 2);
      }
    }
  }
  return {std::sqrt(e2.V), std::sqrt(e2.E), std::sqrt(e2.P), std::sqrt(e2.U)};
}

inline FieldErrors l2_error(const Discretization& d, const StateFields& s, const ManufacturedSolution& ms, double t) {
  return l2_error(d, s, exact_fields(ms, t));
}

struct ConvergenceRow {
  int level = 0;
  double h = 0.0;
  double tau = 0.0;
  std::size_t dofs = 0;
  FieldErrors error;
  FieldErrors order{std::nan(""), std::nan(""), std::nan(""), std::nan("")};
};

struct ConvergenceTable {
  std::vector<ConvergenceRow> rows;
};

inline constexpr double kErrorFloor = 1e-13;

/// log(e_i / e_{i+1}) / log(ratio); NaN when either error is at the floor.
inline double order_between(double e0, double e1, double ratio) {
  if (!(e0 > kErrorFloor) || !(e1 > kErrorFloor)) return std::nan("");
  return std::log(e0 / e1) / std::log(ratio);
}

/// Fills row.order for rows 1.. from consecutive pairs; `ratio` is the
/// refinement factor of the quantity driving the error (h or tau).
inline void observed_order(ConvergenceTable& table, double ratio = 2.0) {
  for (std::size_t r = 1; r < table.rows.size(); ++r) {
    const auto& a = table.rows[r - 1].error;
    const auto& b = table.rows[r].error;
    table.rows[r].order = {order_between(a.V, b.V, ratio), order_between(a.E, b.E, ratio),
                           order_between(a.P, b.P, ratio), order_between(a.U, b.U, ratio)};
  }
}

/// Least-squares slope of log(error) against log(x).
inline double fitted_order(std::span<const double> x, std::span<const double> err) {
  const std::size_t n = x.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lx = std::log(x[i]), ly = std::log(err[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline std::string convergence_csv(const ConvergenceTable& table) {
  std::ostringstream out;
  out << "level,h,tau,dofs,err_V,err_E,err_P,err_U,ord_V,ord_E,ord_P,ord_U\n";
  out << std::setprecision(10);
  auto num = [&](double v) {
    if (std::isnan(v)) out << "";
    else out << v;
  };
  for (const auto& r : table.rows) {
    out << r.level << ',' << r.h << ',' << r.tau << ',' << r.dofs << ',' << r.error.V << ',' << r.error.E << ','
        << r.error.P << ',' << r.error.U << ',';
    num(r.order.V);
    out << ',';
    num(r.order.E);
    out << ',';
    num(r.order.P);
    out << ',';
    num(r.order.U);
    out << '\n';
  }
  return out.str();
}

/// eta_K^2 = sum over facets F of K of diam(K)/24 * int_F [grad V_h . nu]^2,
/// with grad V_h = -E_h; boundary facets contribute nothing.
inline std::vector<double> kelly_estimate(const Discretization& d, const StateFields& s) {
  const Mesh& mesh = d.mesh();
  const auto& rule = d.facet_rule();
  std::vector<double> jump2(mesh.num_facets(), 0.0);
  std::vector<double> normal_grad(mesh.num_facets() * rule.size(), 0.0);
  // Accumulate (-E.n_F) from both sides with the facet's own normal n_F.
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    for (const CellFacet& cf : mesh.cell_facets(c)) {
      const Facet& facet = mesh.facet(cf.facet);
      if (facet.is_boundary()) continue;
      const double sign = (facet.cells[0] == c) ? 1.0 : -1.0;
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const auto ref = d.facet_reference_point(cf, rule.points[q][0]);
        const double En = eval_cell_field(d, s, c, block::E(0), ref) * facet.normal.x +
                          eval_cell_field(d, s, c, block::E(1), ref) * facet.normal.y;
        normal_grad[cf.facet * rule.size() + q] += sign * (-En);
      }
    }
  }
  for (std::size_t f = 0; f < mesh.num_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    if (facet.is_boundary()) continue;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double j = normal_grad[f * rule.size() + q];
      jump2[f] += rule.weights[q] * 0.5 * facet.length * j * j;
    }
  }
  std::vector<double> eta(mesh.num_cells(), 0.0);
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    double s2 = 0.0;
    for (const CellFacet& cf : mesh.cell_facets(c)) s2 += mesh.cell(c).diameter() / 24.0 * jump2[cf.facet];
    eta[c] = std::sqrt(s2);
  }
  return eta;
}

/// The ceil(fraction * #cells) cells with the largest indicator, ties going
/// to the lower id. Cells with eligible[c] == false are never chosen; the
/// count is taken over all cells.
inline std::vector<std::size_t> select_refinement(std::span<const double> eta, double fraction,
                                                  std::span<const bool> eligible = {}) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigurationError("refinement fraction must be in (0, 1]");
  std::vector<std::size_t> ids;
  for (std::size_t c = 0; c < eta.size(); ++c)
    if (eligible.empty() || eligible[c]) ids.push_back(c);
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return eta[a] > eta[b]; });
  const auto count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(eta.size()) - 1e-9));
  ids.resize(std::min(count, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Moves a state to a refined mesh. Cell polynomials restrict exactly from
/// parent to children. Traces on facets contained in an old facet are
/// restricted likewise; traces on new facets are the mean of the adjacent
/// cell values.
inline StateFields transfer(const Discretization& from, const StateFields& s, const Discretization& to) {
  const Mesh& old_mesh = from.mesh();
  const Mesh& new_mesh = to.mesh();
  StateFields out = StateFields::zeros(to);
  const int nb = to.nb(), nk = to.nk();
  for (std::size_t c = 0; c < new_mesh.num_cells(); ++c) {
    const std::size_t p = new_mesh.parents()[c];
    for (int a = 0; a < nb; ++a) {
      const Point2 x = to.cell_point(c, to.cell_basis().node(a));
      const auto ref = from.reference_point(p, x);
      for (int field = 0; field < kCellFields; ++field)
        out.cell_block(to, c, field)[a] = eval_cell_field(from, s, p, field, ref);
    }
  }
  // Old facets by their vertex coordinates; a new facet lies inside an old one
  // when both end points do.
  const auto nodes = to.facet_basis().nodes();
  for (std::size_t f = 0; f < new_mesh.num_facets(); ++f) {
    const Facet& nf = new_mesh.facet(f);
    std::optional<std::size_t> host;
    // Candidate old facets touch a parent cell of an adjacent new cell.
    for (std::size_t q = 0; q < nf.cell_count && !host; ++q) {
      const std::size_t p = new_mesh.parents()[nf.cells[q]];
      for (const CellFacet& cf : old_mesh.cell_facets(p)) {
        const Facet& of = old_mesh.facet(cf.facet);
        if (of.horizontal != nf.horizontal) continue;
        const bool inside = nf.horizontal ? (of.a.y == nf.a.y && of.a.x <= nf.a.x && nf.b.x <= of.b.x)
                                          : (of.a.x == nf.a.x && of.a.y <= nf.a.y && nf.b.y <= of.b.y);
        if (inside) {
          host = cf.facet;
          break;
        }
      }
    }
    for (int k = 0; k < nk; ++k) {
      const Point2 x = to.facet_point(f, nodes[k]);
      for (int T = 0; T < kTraceFields; ++T) {
        double v = 0.0;
        if (host) {
          const Facet& of = old_mesh.facet(*host);
          const double t = of.horizontal ? 2.0 * (x.x - of.a.x) / of.length - 1.0
                                         : 2.0 * (x.y - of.a.y) / of.length - 1.0;
          v = eval_trace_field(from, s, *host, T, t);
        } else {
          const int field = (T == trace::V) ? block::V : block::P(T - 1);
          for (std::size_t q = 0; q < nf.cell_count; ++q) {
            const std::size_t nc = nf.cells[q];
            v += eval_cell_field(to, out, nc, field, to.reference_point(nc, x));
          }
          v /= static_cast<double>(nf.cell_count);
        }
        out.trace_block(to, f, T)[k] = v;
      }
    }
  }
  return out;
}

inline constexpr std::size_t kMonolithicCellLimit = 64;

/// Assembles every cell and free trace unknown into one dense system,
/// without condensation, and solves it directly. The constrained traces are
/// taken from `guess` (which must carry the boundary data).
inline StateFields monolithic_oracle(const Discretization& d, const StepContext& ctx, const StateFields& guess) {
  const Mesh& mesh = d.mesh();
  if (mesh.num_cells() > kMonolithicCellLimit)
    throw ConfigurationError("monolithic oracle is limited to " + std::to_string(kMonolithicCellLimit) + " cells");
  const std::size_t nu = d.num_cell_unknowns();
  const std::size_t n = nu + d.num_free_traces();
  StateFields constrained_src = guess;
  apply_trace_constraints(d, *ctx.data, ctx.time, constrained_src);
  DenseMatrix K(n, n);
  std::vector<double> rhs(n, 0.0);
  auto column = [&](std::size_t slot) -> std::optional<std::size_t> {
    const long g = d.free_index(slot);
    if (g == Discretization::kConstrained) return std::nullopt;
    return nu + static_cast<std::size_t>(g);
  };
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const LocalBlock blk = assemble_local(d, ctx, guess, c);
    const std::size_t off = d.cell_offset(c);
    const std::size_t ncell = blk.A.rows(), nl = blk.D.rows();
    for (std::size_t r = 0; r < ncell; ++r) {
      rhs[off + r] += blk.f[r];
      for (std::size_t k = 0; k < ncell; ++k) K(off + r, off + k) += blk.A(r, k);
      for (std::size_t l = 0; l < nl; ++l) {
        if (auto col = column(blk.trace_slots[l]))
          K(off + r, *col) += blk.B(r, l);
        else
          rhs[off + r] -= blk.B(r, l) * constrained_src.traces[blk.trace_slots[l]];
      }
    }
    for (std::size_t r = 0; r < nl; ++r) {
      const auto row = column(blk.trace_slots[r]);
      if (!row) continue;
      rhs[*row] += blk.g[r];
      for (std::size_t k = 0; k < ncell; ++k) K(*row, off + k) += blk.C(r, k);
      for (std::size_t l = 0; l < nl; ++l) {
        if (auto col = column(blk.trace_slots[l]))
          K(*row, *col) += blk.D(r, l);
        else
          rhs[*row] -= blk.D(r, l) * constrained_src.traces[blk.trace_slots[l]];
      }
    }
  }
  const auto x = dense_lu_solve(K, rhs);
  StateFields out;
  out.cells.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(nu));
  out.traces = constrained_src.traces;
  for (std::size_t i = 0; i < out.traces.size(); ++i)
    if (auto col = column(i)) out.traces[i] = x[*col];
  return out;
}

/// Drop-in linearized solver for the time stepper that bypasses condensation.
inline StateFields monolithic_solver(const Discretization& d, const StepContext& ctx, const StateFields& guess,
                                     const CondensedSystem&) {
  return monolithic_oracle(d, ctx, guess);
}

}  // namespace gld
