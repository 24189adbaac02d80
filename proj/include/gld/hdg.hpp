#pragma once

// HDG discretization of the coupled Poisson / polarization system.
//
// Cell unknowns, per cell, in blocks of (k+1)^2 nodal coefficients:
//   [ V | E1 E2 | P1 P2 | U11 U12 U21 U22 ]     with U_i = -g_i grad P_i
// Trace unknowns, per facet, in blocks of k+1 coefficients:
//   [ V^ | P^1 | P^2 ]
//
// Each cell contributes local equations A u + B lambda = f and its share of
// the skeleton equations C u + D lambda = g. Cell unknowns are eliminated
// locally (static condensation) and only the traces are solved globally.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gld/errors.hpp"
#include "gld/gld_model.hpp"
#include "gld/linalg.hpp"
#include "gld/mesh.hpp"
#include "gld/polybasis.hpp"

namespace gld {

inline constexpr int kCellFields = 9;
inline constexpr int kTraceFields = 3;

namespace block {
inline constexpr int V = 0;
inline constexpr int E(int j) { return 1 + j; }
inline constexpr int P(int i) { return 3 + i; }
inline constexpr int U(int i, int j) { return 5 + 2 * i + j; }
}  // namespace block

namespace trace {
inline constexpr int V = 0;
inline constexpr int P(int i) { return 1 + i; }
}  // namespace trace

using Vector2 = std::array<double, 2>;

/// Source terms and boundary data, all in model units. Empty functions mean zero.
struct ProblemData {
  MaterialParams material;
  std::function<double(Point2, double)> charge;
  std::function<Vector2(Point2, double)> forcing;
  std::function<double(Point2, double, Side)> dirichlet_potential;
  std::function<Vector2(Point2, double, Side)> boundary_polarization;
};

struct Stabilization {
  double tau_V = 1.0;
  double tau_P = 1.0;
};

/// tau_V = eps / diam(Omega), tau_P = 1 / diam(Omega), diam = bounding-box diagonal.
inline Stabilization set_stabilization(const MaterialParams& params, const Mesh& mesh) {
  const double diam = mesh.diameter();
  return {params.epsilon / diam, 1.0 / diam};
}

/// Normal flux of the displacement, (eps E^ + P^).nu, at one point.
inline double numerical_flux_poisson(double epsilon, double tau_V, const Vector2& E, double V,
                                     const Vector2& P_hat, double V_hat, const Point2& nu) {
  return epsilon * (E[0] * nu.x + E[1] * nu.y) + P_hat[0] * nu.x + P_hat[1] * nu.y +
         tau_V * (V - V_hat);
}

/// U^.nu for one polarization component at one point.
inline double numerical_flux_polarization(double tau_P, const Vector2& U, double P, double P_hat,
                                          const Point2& nu) {
  return U[0] * nu.x + U[1] * nu.y + tau_P * (P - P_hat);
}

/// Mass and coupling matrices on one cell side piece (one facet).
struct FacetMatrices {
  std::size_t facet = 0;
  Side side = Side::Left;
  Point2 normal;
  double s0 = -1.0, s1 = 1.0;
  DenseMatrix Mff;  // (phi_a, phi_b)_F
  DenseMatrix Mft;  // (phi_a, psi_c)_F
  DenseMatrix Mtt;  // (psi_c, psi_d)_F
};

struct CellMatrices {
  DenseMatrix M;                   // (phi_a, phi_b)_K
  std::array<DenseMatrix, 2> S;    // S[j](a, b) = (d_j phi_a, phi_b)_K
  std::vector<FacetMatrices> facets;
};

/// Everything that depends only on the mesh and polynomial degree.
class Discretization {
 public:
  Discretization(std::shared_ptr<const Mesh> mesh, int degree, Stabilization stab)
      : mesh_(std::move(mesh)),
        degree_(degree),
        stab_(stab),
        cell_basis_(checked_degree(degree)),
        facet_basis_(degree) {
    nb_ = cell_basis_.dimension();
    nk_ = facet_basis_.dimension();
    linear_ = CellTabulation(cell_basis_, tensor_quadrature(gauss_legendre(degree + 2)));
    nonlinear_ = CellTabulation(cell_basis_, tensor_quadrature(gauss_legendre(3 * degree + 1)));
    facet_rule_ = gauss_legendre(degree + 2);
    data_facet_rule_ = gauss_legendre(3 * degree + 1);
    error_rule_1d_ = gauss_legendre(std::max(3 * degree + 1, degree + 4));

    const Mesh& m = *mesh_;
    free_index_.assign(m.num_facets() * kTraceFields * nk_, kConstrained);
    std::size_t next = 0;
    for (std::size_t f = 0; f < m.num_facets(); ++f) {
      const Facet& facet = m.facet(f);
      for (int T = 0; T < kTraceFields; ++T) {
        bool constrained = false;
        if (facet.is_boundary()) {
          if (facet.marker == BoundaryMarker::Interior)
            throw ConfigurationError("boundary facet " + std::to_string(f) + " has no marker");
          constrained = (T == trace::V) ? facet.marker == BoundaryMarker::DirichletV : true;
        }
        for (int c = 0; c < nk_; ++c)
          free_index_[trace_index(f, T, c)] = constrained ? kConstrained : static_cast<long>(next++);
      }
    }
    num_free_ = next;

    cells_.resize(m.num_cells());
    for (std::size_t c = 0; c < m.num_cells(); ++c) build_cell_matrices(c);
  }

  static constexpr long kConstrained = -1;

  static int checked_degree(int degree) {
    if (degree < 0 || degree > 3) throw ConfigurationError("polynomial degree must be in 0..3");
    return degree;
  }

  const Mesh& mesh() const { return *mesh_; }
  std::shared_ptr<const Mesh> mesh_ptr() const { return mesh_; }
  int degree() const { return degree_; }
  int nb() const { return nb_; }
  int nk() const { return nk_; }
  const Stabilization& stabilization() const { return stab_; }
  const CellBasis& cell_basis() const { return cell_basis_; }
  const FacetBasis& facet_basis() const { return facet_basis_; }
  const CellTabulation& linear_tabulation() const { return linear_; }
  const CellTabulation& nonlinear_tabulation() const { return nonlinear_; }
  const QuadratureRule<1>& facet_rule() const { return facet_rule_; }
  const QuadratureRule<1>& data_facet_rule() const { return data_facet_rule_; }
  const QuadratureRule<1>& error_rule_1d() const { return error_rule_1d_; }
  const CellMatrices& cell_matrices(std::size_t c) const { return cells_[c]; }

  std::size_t cell_dofs() const { return static_cast<std::size_t>(kCellFields) * nb_; }
  std::size_t facet_dofs() const { return static_cast<std::size_t>(kTraceFields) * nk_; }
  std::size_t num_cell_unknowns() const { return mesh_->num_cells() * cell_dofs(); }
  std::size_t num_trace_unknowns() const { return mesh_->num_facets() * facet_dofs(); }
  std::size_t num_free_traces() const { return num_free_; }

  std::size_t cell_offset(std::size_t c) const { return c * cell_dofs(); }
  std::size_t trace_index(std::size_t f, int T, int c) const {
    return (f * kTraceFields + T) * nk_ + c;
  }
  long free_index(std::size_t full_trace_index) const { return free_index_[full_trace_index]; }

  /// Reference point on the cell for facet parameter t in [-1, 1].
  std::array<double, 2> facet_reference_point(const CellFacet& cf, double t) const {
    const double s = cf.s0 + 0.5 * (t + 1.0) * (cf.s1 - cf.s0);
    switch (cf.side) {
      case Side::Left: return {-1.0, s};
      case Side::Right: return {1.0, s};
      case Side::Bottom: return {s, -1.0};
      case Side::Top: return {s, 1.0};
    }
    return {0.0, 0.0};
  }

  Point2 facet_point(std::size_t f, double t) const {
    const Facet& facet = mesh_->facet(f);
    const double r = 0.5 * (t + 1.0);
    return {facet.a.x + r * (facet.b.x - facet.a.x), facet.a.y + r * (facet.b.y - facet.a.y)};
  }

  Point2 cell_point(std::size_t c, const std::array<double, 2>& ref) const {
    const Cell& cell = mesh_->cell(c);
    return {cell.lower.x + 0.5 * (ref[0] + 1.0) * cell.width(),
            cell.lower.y + 0.5 * (ref[1] + 1.0) * cell.height()};
  }

  std::array<double, 2> reference_point(std::size_t c, const Point2& x) const {
    const Cell& cell = mesh_->cell(c);
    return {2.0 * (x.x - cell.lower.x) / cell.width() - 1.0,
            2.0 * (x.y - cell.lower.y) / cell.height() - 1.0};
  }

 private:
  void build_cell_matrices(std::size_t c) {
    const Cell& cell = mesh_->cell(c);
    const double J = 0.25 * cell.width() * cell.height();
    const std::array<double, 2> dref{2.0 / cell.width(), 2.0 / cell.height()};
    CellMatrices& cm = cells_[c];
    cm.M = DenseMatrix(nb_, nb_);
    cm.S = {DenseMatrix(nb_, nb_), DenseMatrix(nb_, nb_)};
    for (std::size_t q = 0; q < linear_.rule.size(); ++q) {
      const double w = linear_.rule.weights[q] * J;
      const auto phi = linear_.values_at(q);
      const auto grad = linear_.gradients_at(q);
      for (int a = 0; a < nb_; ++a)
        for (int b = 0; b < nb_; ++b) {
          cm.M(a, b) += w * phi[a] * phi[b];
          for (int j = 0; j < 2; ++j) cm.S[j](a, b) += w * grad[a][j] * dref[j] * phi[b];
        }
    }
    std::vector<double> phi(nb_), psi(nk_);
    for (const CellFacet& cf : mesh_->cell_facets(c)) {
      const Facet& facet = mesh_->facet(cf.facet);
      FacetMatrices fm;
      fm.facet = cf.facet;
      fm.side = cf.side;
      fm.normal = cf.outward_normal();
      fm.s0 = cf.s0;
      fm.s1 = cf.s1;
      fm.Mff = DenseMatrix(nb_, nb_);
      fm.Mft = DenseMatrix(nb_, nk_);
      fm.Mtt = DenseMatrix(nk_, nk_);
      for (std::size_t q = 0; q < facet_rule_.size(); ++q) {
        const double t = facet_rule_.points[q][0];
        const double w = facet_rule_.weights[q] * 0.5 * facet.length;
        cell_basis_.evaluate(facet_reference_point(cf, t), phi);
        facet_basis_.evaluate(t, psi);
        for (int a = 0; a < nb_; ++a) {
          for (int b = 0; b < nb_; ++b) fm.Mff(a, b) += w * phi[a] * phi[b];
          for (int d = 0; d < nk_; ++d) fm.Mft(a, d) += w * phi[a] * psi[d];
        }
        for (int e = 0; e < nk_; ++e)
          for (int d = 0; d < nk_; ++d) fm.Mtt(e, d) += w * psi[e] * psi[d];
      }
      cm.facets.push_back(std::move(fm));
    }
  }

  std::shared_ptr<const Mesh> mesh_;
  int degree_;
  Stabilization stab_;
  CellBasis cell_basis_;
  FacetBasis facet_basis_;
  int nb_ = 0, nk_ = 0;
  CellTabulation linear_, nonlinear_;
  QuadratureRule<1> facet_rule_, data_facet_rule_, error_rule_1d_;
  std::vector<long> free_index_;
  std::size_t num_free_ = 0;
  std::vector<CellMatrices> cells_;
};

/// Coefficients of all cell and trace unknowns at one time level.
struct StateFields {
  std::vector<double> cells;
  std::vector<double> traces;

  static StateFields zeros(const Discretization& d) {
    return {std::vector<double>(d.num_cell_unknowns(), 0.0),
            std::vector<double>(d.num_trace_unknowns(), 0.0)};
  }

  std::span<const double> cell_block(const Discretization& d, std::size_t c, int field) const {
    return std::span(cells).subspan(d.cell_offset(c) + static_cast<std::size_t>(field) * d.nb(), d.nb());
  }
  std::span<double> cell_block(const Discretization& d, std::size_t c, int field) {
    return std::span(cells).subspan(d.cell_offset(c) + static_cast<std::size_t>(field) * d.nb(), d.nb());
  }
  std::span<const double> trace_block(const Discretization& d, std::size_t f, int field) const {
    return std::span(traces).subspan(d.trace_index(f, field, 0), d.nk());
  }
  std::span<double> trace_block(const Discretization& d, std::size_t f, int field) {
    return std::span(traces).subspan(d.trace_index(f, field, 0), d.nk());
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Value of a cell field at a reference point.
inline double eval_cell_field(const Discretization& d, const StateFields& s, std::size_t c, int field,
                              const std::array<double, 2>& ref) {
  std::array<double, 16> phi{};
  d.cell_basis().evaluate(ref, std::span(phi.data(), d.nb()));
  return dot(s.cell_block(d, c, field), std::span<const double>(phi.data(), d.nb()));
}

inline double eval_trace_field(const Discretization& d, const StateFields& s, std::size_t f, int field, double t) {
  std::array<double, 4> psi{};
  d.facet_basis().evaluate(t, std::span(psi.data(), d.nk()));
  return dot(s.trace_block(d, f, field), std::span<const double>(psi.data(), d.nk()));
}

enum class AssemblyMode {
  TimeStep,  // one semi-implicit step, linearized about the guess
  Initial,   // P and P^ fixed to the given projections; V, E, U completed
};

/// Inputs that define one nonlinear (or initial) solve.
struct StepContext {
  const ProblemData* data = nullptr;
  const StateFields* previous = nullptr;  // P^{n-1}, or the projected P0 in Initial mode
  double tau = 1.0;
  double time = 0.0;
  AssemblyMode mode = AssemblyMode::TimeStep;
};

/// Local equations of one cell: A u + B lambda = f, and the cell's share of
/// the skeleton equations, C u + D lambda = g. Columns of B and D and rows of
/// C, D, g refer to the local trace slots (q * 3 + T) * nk + c.
struct LocalBlock {
  DenseMatrix A, B, C, D;
  std::vector<double> f, g;
  std::vector<std::size_t> trace_slots;  // full trace index per local slot

  LocalBlock() = default;
  LocalBlock(std::size_t nu, std::size_t nl)
      : A(nu, nu), B(nu, nl), C(nl, nu), D(nl, nl), f(nu, 0.0), g(nl, 0.0), trace_slots(nl, 0) {}
};

namespace detail {

inline void add_block(DenseMatrix& target, int nb_r, int nb_c, int row_block, int col_block,
                      const DenseMatrix& m, double scale, bool transpose = false) {
  if (scale == 0.0) return;
  const std::size_t r0 = static_cast<std::size_t>(row_block) * nb_r;
  const std::size_t c0 = static_cast<std::size_t>(col_block) * nb_c;
  const std::size_t nr = transpose ? m.cols() : m.rows();
  const std::size_t nc = transpose ? m.rows() : m.cols();
  for (std::size_t a = 0; a < nr; ++a)
    for (std::size_t b = 0; b < nc; ++b) target(r0 + a, c0 + b) += scale * (transpose ? m(b, a) : m(a, b));
}

inline int slot_block(std::size_t q, int T) { return static_cast<int>(q) * kTraceFields + T; }

}  // namespace detail

inline LocalBlock make_local_block(const Discretization& d, std::size_t c) {
  const auto& cm = d.cell_matrices(c);
  LocalBlock blk(d.cell_dofs(), cm.facets.size() * d.facet_dofs());
  for (std::size_t q = 0; q < cm.facets.size(); ++q)
    for (int T = 0; T < kTraceFields; ++T)
      for (int k = 0; k < d.nk(); ++k)
        blk.trace_slots[detail::slot_block(q, T) * d.nk() + k] = d.trace_index(cm.facets[q].facet, T, k);
  return blk;
}

/// Mixed Poisson equations of one cell and the displacement-flux skeleton rows.
inline void assemble_local_poisson(const Discretization& d, const StepContext& ctx, std::size_t c,
                                   LocalBlock& blk) {
  using detail::add_block;
  const int nb = d.nb(), nk = d.nk();
  const double eps = ctx.data->material.epsilon;
  const double tauV = d.stabilization().tau_V;
  const auto& cm = d.cell_matrices(c);

  for (int j = 0; j < 2; ++j) {
    add_block(blk.A, nb, nb, block::E(j), block::E(j), cm.M, 1.0);
    add_block(blk.A, nb, nb, block::E(j), block::V, cm.S[j], -1.0);
    add_block(blk.A, nb, nb, block::V, block::E(j), cm.S[j], -eps);
    add_block(blk.A, nb, nb, block::V, block::P(j), cm.S[j], -1.0);
  }
  for (std::size_t q = 0; q < cm.facets.size(); ++q) {
    const auto& fm = cm.facets[q];
    const std::array<double, 2> nu{fm.normal.x, fm.normal.y};
    const int sV = detail::slot_block(q, trace::V);
    add_block(blk.A, nb, nb, block::V, block::V, fm.Mff, tauV);
    add_block(blk.B, nb, nk, block::V, sV, fm.Mft, -tauV);
    add_block(blk.C, nk, nb, sV, block::V, fm.Mft, tauV, true);
    add_block(blk.D, nk, nk, sV, sV, fm.Mtt, -tauV);
    for (int j = 0; j < 2; ++j) {
      add_block(blk.A, nb, nb, block::V, block::E(j), fm.Mff, eps * nu[j]);
      add_block(blk.B, nb, nk, block::E(j), sV, fm.Mft, nu[j]);
      add_block(blk.B, nb, nk, block::V, detail::slot_block(q, trace::P(j)), fm.Mft, nu[j]);
      add_block(blk.C, nk, nb, sV, block::E(j), fm.Mft, eps * nu[j], true);
      add_block(blk.D, nk, nk, sV, detail::slot_block(q, trace::P(j)), fm.Mtt, nu[j]);
    }
  }

  if (ctx.data->charge) {
    const auto& tab = d.nonlinear_tabulation();
    const Cell& cell = d.mesh().cell(c);
    const double J = 0.25 * cell.area();
    for (std::size_t qp = 0; qp < tab.rule.size(); ++qp) {
      const double rho = ctx.data->charge(d.cell_point(c, tab.rule.points[qp]), ctx.time);
      const double w = tab.rule.weights[qp] * J * rho;
      const auto phi = tab.values_at(qp);
      for (int a = 0; a < nb; ++a) blk.f[block::V * nb + a] += w * phi[a];
    }
  }
}

/// Mixed gradient-flow equations for both polarization components of one
/// cell and the U-flux skeleton rows. In TimeStep mode the implicit F+ term
/// is linearized about the guess.
inline void assemble_local_polarization(const Discretization& d, const StepContext& ctx,
                                        const StateFields& guess, std::size_t c, LocalBlock& blk) {
  using detail::add_block;
  const int nb = d.nb(), nk = d.nk();
  const double tauP = d.stabilization().tau_P;
  const auto& mat = ctx.data->material;
  const auto& cm = d.cell_matrices(c);
  const auto sc = split(mat);
  const bool initial = ctx.mode == AssemblyMode::Initial;

  for (int i = 0; i < 2; ++i) {
    const double gi = mat[i].g;
    const int Pi = block::P(i);
    for (int j = 0; j < 2; ++j) {
      add_block(blk.A, nb, nb, block::U(i, j), block::U(i, j), cm.M, 1.0);
      add_block(blk.A, nb, nb, block::U(i, j), Pi, cm.S[j], -gi);
    }
    for (std::size_t q = 0; q < cm.facets.size(); ++q) {
      const auto& fm = cm.facets[q];
      const std::array<double, 2> nu{fm.normal.x, fm.normal.y};
      for (int j = 0; j < 2; ++j)
        add_block(blk.B, nb, nk, block::U(i, j), detail::slot_block(q, trace::P(i)), fm.Mft, gi * nu[j]);
    }

    const auto p_prev = ctx.previous->cell_block(d, c, Pi);
    if (initial) {
      add_block(blk.A, nb, nb, Pi, Pi, cm.M, 1.0);
      const auto mp = cm.M.multiply(p_prev);
      for (int a = 0; a < nb; ++a) blk.f[Pi * nb + a] += mp[a];
      for (std::size_t q = 0; q < cm.facets.size(); ++q) {
        const auto& fm = cm.facets[q];
        const int s = detail::slot_block(q, trace::P(i));
        add_block(blk.D, nk, nk, s, s, fm.Mtt, 0.5);
        const auto mt = fm.Mtt.multiply(ctx.previous->trace_block(d, fm.facet, trace::P(i)));
        for (int k = 0; k < nk; ++k) blk.g[s * nk + k] += 0.5 * mt[k];
      }
      continue;
    }

    const double relax = mat[i].rho_v / ctx.tau;
    add_block(blk.A, nb, nb, Pi, Pi, cm.M, relax);
    add_block(blk.A, nb, nb, Pi, block::E(i), cm.M, -1.0);
    for (int j = 0; j < 2; ++j) add_block(blk.A, nb, nb, Pi, block::U(i, j), cm.S[j], -1.0);
    const auto mp = cm.M.multiply(p_prev);
    for (int a = 0; a < nb; ++a) blk.f[Pi * nb + a] += relax * mp[a];

    for (std::size_t q = 0; q < cm.facets.size(); ++q) {
      const auto& fm = cm.facets[q];
      const std::array<double, 2> nu{fm.normal.x, fm.normal.y};
      const int s = detail::slot_block(q, trace::P(i));
      add_block(blk.A, nb, nb, Pi, Pi, fm.Mff, tauP);
      add_block(blk.B, nb, nk, Pi, s, fm.Mft, -tauP);
      add_block(blk.C, nk, nb, s, Pi, fm.Mft, tauP, true);
      add_block(blk.D, nk, nk, s, s, fm.Mtt, -tauP);
      for (int j = 0; j < 2; ++j) {
        add_block(blk.A, nb, nb, Pi, block::U(i, j), fm.Mff, nu[j]);
        add_block(blk.C, nk, nb, s, block::U(i, j), fm.Mft, nu[j], true);
      }
    }

    // Nonlinear and data terms on the high-order rule.
    const auto& tab = d.nonlinear_tabulation();
    const Cell& cell = d.mesh().cell(c);
    const double J = 0.25 * cell.area();
    const auto p_guess = guess.cell_block(d, c, Pi);
    const auto& plus = sc.plus[i];
    const auto& minus = sc.minus[i];
    const std::size_t r0 = static_cast<std::size_t>(Pi) * nb;
    for (std::size_t qp = 0; qp < tab.rule.size(); ++qp) {
      const auto phi = tab.values_at(qp);
      const double w = tab.rule.weights[qp] * J;
      const double ps = dot(p_guess, phi);
      const double pp = dot(p_prev, phi);
      const double d2 = plus.second_derivative(ps);
      double rhs = minus.derivative(pp) - plus.derivative(ps) + d2 * ps;
      if (ctx.data->forcing) rhs += ctx.data->forcing(d.cell_point(c, tab.rule.points[qp]), ctx.time)[i];
      for (int a = 0; a < nb; ++a) {
        blk.f[r0 + a] += w * rhs * phi[a];
        const double wa = w * d2 * phi[a];
        for (int b = 0; b < nb; ++b) blk.A(r0 + a, r0 + b) += wa * phi[b];
      }
    }
  }
}

inline LocalBlock assemble_local(const Discretization& d, const StepContext& ctx, const StateFields& guess,
                                 std::size_t c) {
  LocalBlock blk = make_local_block(d, c);
  assemble_local_poisson(d, ctx, c, blk);
  assemble_local_polarization(d, ctx, guess, c, blk);
  return blk;
}

/// Result of eliminating the cell unknowns of one block.
struct CondensedBlock {
  DenseMatrix schur;               // D - C A^-1 B
  std::vector<double> rhs;         // g - C A^-1 f
  DenseMatrix AinvB;
  std::vector<double> Ainvf;
};

/// Static condensation of one cell. The E and U rows carry the cell mass
/// matrix on their diagonal block and nothing else among E, U columns, so
/// those unknowns are eliminated first with the factorized mass matrix; the
/// remaining (V, P) block is factorized densely.
inline CondensedBlock condense(const LocalBlock& blk, std::size_t cell = 0) {
  using Mat = Eigen::MatrixXd;
  const Eigen::Index nu = static_cast<Eigen::Index>(blk.A.rows());
  const Eigen::Index nl = static_cast<Eigen::Index>(blk.D.rows());
  const Eigen::Index nb = nu / kCellFields;
  const auto A = blk.A.eigen();
  // Permute to [V P1 P2 | E1 E2 U11 U12 U21 U22].
  const std::array<int, kCellFields> order{block::V, block::P(0), block::P(1), block::E(0), block::E(1),
                                           block::U(0, 0), block::U(0, 1), block::U(1, 0), block::U(1, 1)};
  Eigen::VectorXi perm(nu);
  for (int b = 0; b < kCellFields; ++b)
    for (Eigen::Index a = 0; a < nb; ++a) perm[b * nb + a] = static_cast<int>(order[b] * nb + a);
  const Eigen::Index ns = 3 * nb, nm = nu - ns;

  Mat Ap(nu, nu);
  for (Eigen::Index r = 0; r < nu; ++r)
    for (Eigen::Index c = 0; c < nu; ++c) Ap(r, c) = A(perm[r], perm[c]);
  Mat R(nu, 1 + nl);
  for (Eigen::Index r = 0; r < nu; ++r) {
    R(r, 0) = blk.f[perm[r]];
    for (Eigen::Index l = 0; l < nl; ++l) R(r, 1 + l) = blk.B(perm[r], l);
  }

  auto singular = [&](const std::string& what) {
    return AssemblyError("singular local block on cell " + std::to_string(cell) + ": " + what, cell);
  };
  const Mat mass = Ap.block(ns, ns, nb, nb);
  Eigen::PartialPivLU<Mat> mass_lu(mass);
  for (Eigen::Index i = 0; i < nb; ++i)
    if (!(std::abs(mass_lu.matrixLU()(i, i)) > kPivotFloor) || !mass.allFinite()) throw singular("mass matrix");
  Mat Z(nm, ns), Y(nm, 1 + nl);
  for (Eigen::Index b = 0; b < nm / nb; ++b) {
    Z.middleRows(b * nb, nb) = mass_lu.solve(Ap.block(ns + b * nb, 0, nb, ns));
    Y.middleRows(b * nb, nb) = mass_lu.solve(R.middleRows(ns + b * nb, nb));
  }
  const Mat At = Ap.topLeftCorner(ns, ns) - Ap.topRightCorner(ns, nm) * Z;
  const Mat Rt = R.topRows(ns) - Ap.topRightCorner(ns, nm) * Y;
  if (!At.allFinite()) throw singular("non-finite entries");
  Eigen::PartialPivLU<Mat> lu(At);
  for (Eigen::Index i = 0; i < ns; ++i)
    if (!(std::abs(lu.matrixLU()(i, i)) > kPivotFloor)) throw singular("zero pivot in row " + std::to_string(i));
  Mat X(nu, 1 + nl);
  X.topRows(ns) = lu.solve(Rt);
  X.bottomRows(nm) = Y - Z * X.topRows(ns);

  CondensedBlock out;
  out.Ainvf.assign(nu, 0.0);
  out.AinvB = DenseMatrix(nu, nl);
  for (Eigen::Index r = 0; r < nu; ++r) {
    out.Ainvf[perm[r]] = X(r, 0);
    for (Eigen::Index l = 0; l < nl; ++l) out.AinvB(perm[r], l) = X(r, 1 + l);
  }
  const auto C = blk.C.eigen();
  out.schur = blk.D;
  out.schur.eigen() -= C * out.AinvB.eigen();
  out.rhs = blk.g;
  Eigen::Map<const Eigen::VectorXd> af(out.Ainvf.data(), nu);
  Eigen::Map<Eigen::VectorXd>(out.rhs.data(), nl) -= C * af;
  return out;
}

/// L2 projections of the boundary data onto the constrained trace unknowns;
/// all other entries are left untouched.
inline void apply_trace_constraints(const Discretization& d, const ProblemData& data, double t,
                                    StateFields& state) {
  const Mesh& mesh = d.mesh();
  const int nk = d.nk();
  const auto& rule = d.data_facet_rule();
  std::vector<double> psi(nk);
  for (std::size_t f = 0; f < mesh.num_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    if (!facet.is_boundary()) continue;
    const Side side = *facet.boundary_side;
    DenseMatrix Mtt(nk, nk);
    std::array<std::vector<double>, 3> rhs;
    for (auto& r : rhs) r.assign(nk, 0.0);
    const bool dirichlet = facet.marker == BoundaryMarker::DirichletV;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double t_ = rule.points[q][0];
      const double w = rule.weights[q] * 0.5 * facet.length;
      d.facet_basis().evaluate(t_, psi);
      const Point2 x = d.facet_point(f, t_);
      const double v = (dirichlet && data.dirichlet_potential) ? data.dirichlet_potential(x, t, side) : 0.0;
      const Vector2 p = data.boundary_polarization ? data.boundary_polarization(x, t, side) : Vector2{0.0, 0.0};
      for (int a = 0; a < nk; ++a) {
        for (int b = 0; b < nk; ++b) Mtt(a, b) += w * psi[a] * psi[b];
        rhs[0][a] += w * v * psi[a];
        rhs[1][a] += w * p[0] * psi[a];
        rhs[2][a] += w * p[1] * psi[a];
      }
    }
    DenseLU lu(Mtt);
    for (int T = dirichlet ? 0 : 1; T < kTraceFields; ++T) {
      const auto coef = lu.solve(rhs[T]);
      std::copy(coef.begin(), coef.end(), state.trace_block(d, f, T).begin());
    }
  }
}

/// The trace-only system after static condensation, with the data needed to
/// recover the cell unknowns, and the residual of the state it was built at.
struct CondensedSystem {
  SparseMatrix matrix;
  std::vector<double> rhs;
  std::vector<CondensedBlock> blocks;
  std::vector<double> constrained;    // full trace vector holding the constrained values
  std::vector<double> cell_residual;  // A u + B lambda - f at the linearization state
  std::vector<double> trace_residual; // assembled skeleton rows, free unknowns only

  double residual_norm() const {
    double s = 0.0;
    for (double v : cell_residual) s += v * v;
    for (double v : trace_residual) s += v * v;
    return std::sqrt(s);
  }
};

/// Local residuals of a block at the given state.
inline void local_residual(const Discretization& d, const LocalBlock& blk, const StateFields& state,
                           std::size_t c, std::span<double> cell_out, std::span<double> trace_out) {
  const std::size_t nu = blk.A.rows(), nl = blk.D.rows();
  const auto u = std::span<const double>(state.cells).subspan(d.cell_offset(c), nu);
  std::vector<double> lam(nl);
  for (std::size_t l = 0; l < nl; ++l) lam[l] = state.traces[blk.trace_slots[l]];
  for (std::size_t r = 0; r < nu; ++r) {
    double s = -blk.f[r];
    for (std::size_t k = 0; k < nu; ++k) s += blk.A(r, k) * u[k];
    for (std::size_t l = 0; l < nl; ++l) s += blk.B(r, l) * lam[l];
    cell_out[r] = s;
  }
  for (std::size_t r = 0; r < nl; ++r) {
    const long gr = d.free_index(blk.trace_slots[r]);
    if (gr == Discretization::kConstrained) continue;
    double s = -blk.g[r];
    for (std::size_t k = 0; k < nu; ++k) s += blk.C(r, k) * u[k];
    for (std::size_t l = 0; l < nl; ++l) s += blk.D(r, l) * lam[l];
    trace_out[gr] += s;
  }
}

/// Builds the condensed skeleton system linearized at `guess`, and the full
/// residual of `guess` (whose constrained traces must already hold the data).
inline CondensedSystem assemble_global(const Discretization& d, const StepContext& ctx,
                                       const StateFields& guess) {
  const Mesh& mesh = d.mesh();
  CondensedSystem sys;
  sys.constrained.assign(d.num_trace_unknowns(), 0.0);
  {
    StateFields tmp;
    tmp.traces.assign(d.num_trace_unknowns(), 0.0);
    apply_trace_constraints(d, *ctx.data, ctx.time, tmp);
    sys.constrained = std::move(tmp.traces);
  }
  const std::size_t n = d.num_free_traces();
  sys.rhs.assign(n, 0.0);
  sys.cell_residual.assign(d.num_cell_unknowns(), 0.0);
  sys.trace_residual.assign(n, 0.0);
  sys.blocks.resize(mesh.num_cells());
  std::vector<Triplet> triplets;
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const LocalBlock blk = assemble_local(d, ctx, guess, c);
    local_residual(d, blk, guess, c, std::span(sys.cell_residual).subspan(d.cell_offset(c), d.cell_dofs()),
                   sys.trace_residual);
    CondensedBlock cb = condense(blk, c);
    const std::size_t nl = blk.trace_slots.size();
    for (std::size_t r = 0; r < nl; ++r) {
      const long gr = d.free_index(blk.trace_slots[r]);
      if (gr == Discretization::kConstrained) continue;
      double b = cb.rhs[r];
      for (std::size_t m = 0; m < nl; ++m) {
        const long gc = d.free_index(blk.trace_slots[m]);
        const double v = cb.schur(r, m);
        if (gc == Discretization::kConstrained)
          b -= v * sys.constrained[blk.trace_slots[m]];
        else if (v != 0.0)
          triplets.push_back({static_cast<std::size_t>(gr), static_cast<std::size_t>(gc), v});
      }
      sys.rhs[gr] += b;
    }
    sys.blocks[c] = std::move(cb);
  }
  sys.matrix = SparseMatrix(n, n, std::move(triplets));
  return sys;
}

/// Full trace vector from the free solution plus the constrained values.
inline std::vector<double> expand_traces(const Discretization& d, const CondensedSystem& sys,
                                         std::span<const double> free_solution) {
  std::vector<double> full = sys.constrained;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const long g = d.free_index(i);
    if (g != Discretization::kConstrained) full[i] = free_solution[g];
  }
  return full;
}

/// Back-substitution u_K = A^-1 f - A^-1 B lambda_K for every cell.
inline StateFields recover_local(const Discretization& d, const CondensedSystem& sys,
                                 std::vector<double> full_traces) {
  StateFields out;
  out.cells.assign(d.num_cell_unknowns(), 0.0);
  const Mesh& mesh = d.mesh();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const auto& cb = sys.blocks[c];
    const auto& cm = d.cell_matrices(c);
    const std::size_t nu = cb.Ainvf.size();
    std::vector<double> lam;
    lam.reserve(cb.AinvB.cols());
    for (const auto& fm : cm.facets)
      for (int T = 0; T < kTraceFields; ++T)
        for (int k = 0; k < d.nk(); ++k) lam.push_back(full_traces[d.trace_index(fm.facet, T, k)]);
    double* u = out.cells.data() + d.cell_offset(c);
    for (std::size_t r = 0; r < nu; ++r) {
      double s = cb.Ainvf[r];
      for (std::size_t l = 0; l < lam.size(); ++l) s -= cb.AinvB(r, l) * lam[l];
      u[r] = s;
    }
  }
  out.traces = std::move(full_traces);
  return out;
}

/// Solves the condensed system and recovers all unknowns.
inline StateFields solve_condensed(const Discretization& d, const CondensedSystem& sys) {
  const auto lam = sys.matrix.rows() > 0 ? SparseLU(sys.matrix).solve(sys.rhs) : std::vector<double>{};
  return recover_local(d, sys, expand_traces(d, sys, lam));
}

/// Residual norm of `state` with respect to the system linearized at `state`.
inline double full_residual_norm(const Discretization& d, const StepContext& ctx, const StateFields& state) {
  return assemble_global(d, ctx, state).residual_norm();
}

/// Per-facet transmission residuals of a state: the displacement-flux rows
/// ([(eps E^ + P^).nu], xi)_F and the polarization-flux rows ([U^.nu], xi)_F,
/// evaluated directly from the numerical fluxes. Returns, for each facet, the
/// largest absolute entry over its basis functions (zero where no row exists).
struct TransmissionResidual {
  std::vector<double> displacement;
  std::vector<double> polarization;
  double max_interior() const {
    double m = 0.0;
    for (double v : displacement) m = std::max(m, v);
    for (double v : polarization) m = std::max(m, v);
    return m;
  }
};

inline TransmissionResidual transmission_residual(const Discretization& d, const ProblemData& data,
                                                  const StateFields& s) {
  const Mesh& mesh = d.mesh();
  const int nk = d.nk();
  const double eps = data.material.epsilon;
  const auto [tauV, tauP] = d.stabilization();
  std::vector<double> disp(mesh.num_facets() * nk, 0.0);
  std::vector<double> pol(mesh.num_facets() * nk * 2, 0.0);
  std::vector<double> psi(nk);
  const auto& rule = d.facet_rule();
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    for (const CellFacet& cf : mesh.cell_facets(c)) {
      const Facet& facet = mesh.facet(cf.facet);
      if (facet.is_boundary()) continue;
      const Point2 nu = cf.outward_normal();
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double t = rule.points[q][0];
        const double w = rule.weights[q] * 0.5 * facet.length;
        const auto ref = d.facet_reference_point(cf, t);
        d.facet_basis().evaluate(t, psi);
        const Vector2 E{eval_cell_field(d, s, c, block::E(0), ref), eval_cell_field(d, s, c, block::E(1), ref)};
        const double V = eval_cell_field(d, s, c, block::V, ref);
        const Vector2 Ph{eval_trace_field(d, s, cf.facet, trace::P(0), t),
                         eval_trace_field(d, s, cf.facet, trace::P(1), t)};
        const double Vh = eval_trace_field(d, s, cf.facet, trace::V, t);
        const double fd = numerical_flux_poisson(eps, tauV, E, V, Ph, Vh, nu);
        std::array<double, 2> fp{};
        for (int i = 0; i < 2; ++i) {
          const Vector2 U{eval_cell_field(d, s, c, block::U(i, 0), ref),
                          eval_cell_field(d, s, c, block::U(i, 1), ref)};
          fp[i] = numerical_flux_polarization(tauP, U, eval_cell_field(d, s, c, block::P(i), ref), Ph[i], nu);
        }
        for (int k = 0; k < nk; ++k) {
          disp[cf.facet * nk + k] += w * fd * psi[k];
          for (int i = 0; i < 2; ++i) pol[(cf.facet * 2 + i) * nk + k] += w * fp[i] * psi[k];
        }
      }
    }
  }
  TransmissionResidual out;
  out.displacement.assign(mesh.num_facets(), 0.0);
  out.polarization.assign(mesh.num_facets(), 0.0);
  for (std::size_t f = 0; f < mesh.num_facets(); ++f) {
    for (int k = 0; k < nk; ++k) {
      out.displacement[f] = std::max(out.displacement[f], std::abs(disp[f * nk + k]));
      for (int i = 0; i < 2; ++i)
        out.polarization[f] = std::max(out.polarization[f], std::abs(pol[(f * 2 + i) * nk + k]));
    }
  }
  return out;
}

/// Normal displacement flux through one side of the domain,
/// integral over the side of (eps E^ + P^).nu with nu the outward normal.
inline double displacement_flux(const Discretization& d, const ProblemData& data, const StateFields& s,
                                Side side) {
  const Mesh& mesh = d.mesh();
  const double eps = data.material.epsilon;
  const double tauV = d.stabilization().tau_V;
  const auto& rule = d.facet_rule();
  double total = 0.0;
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    for (const CellFacet& cf : mesh.cell_facets(c)) {
      const Facet& facet = mesh.facet(cf.facet);
      if (!facet.is_boundary() || *facet.boundary_side != side) continue;
      const Point2 nu = cf.outward_normal();
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double t = rule.points[q][0];
        const double w = rule.weights[q] * 0.5 * facet.length;
        const auto ref = d.facet_reference_point(cf, t);
        const Vector2 E{eval_cell_field(d, s, c, block::E(0), ref), eval_cell_field(d, s, c, block::E(1), ref)};
        const Vector2 Ph{eval_trace_field(d, s, cf.facet, trace::P(0), t),
                         eval_trace_field(d, s, cf.facet, trace::P(1), t)};
        total += w * numerical_flux_poisson(eps, tauV, E, eval_cell_field(d, s, c, block::V, ref), Ph,
                                            eval_trace_field(d, s, cf.facet, trace::V, t), nu);
      }
    }
  }
  return total;
}

}  // namespace gld
