#pragma once

// Gauss quadrature and nodal Lagrange bases on the reference interval
// [-1, 1] and the reference square [-1, 1]^2.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace gld {

template <int Dim>
struct QuadratureRule {
  std::vector<std::array<double, Dim>> points;
  std::vector<double> weights;
  std::size_t size() const { return weights.size(); }
};

namespace detail {

/// Legendre polynomial P_n and its derivative at x.
inline std::pair<double, double> legendre(int n, double x) {
  if (n == 0) return {1.0, 0.0};
  double p0 = 1.0, p1 = x;
  for (int k = 2; k <= n; ++k) {
    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  // P'_n from the standard identity; the endpoints need the limit form.
  double dp;
  if (std::abs(1.0 - x * x) < 1e-300)
    dp = 0.5 * n * (n + 1.0) * (x > 0 ? 1.0 : (n % 2 == 0 ? -1.0 : 1.0));
  else
    dp = n * (p0 - x * p1) / (1.0 - x * x);
  return {p1, dp};
}

}  // namespace detail

/// n-point Gauss-Legendre rule on [-1, 1]; exact up to degree 2n - 1.
inline QuadratureRule<1> gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  QuadratureRule<1> rule;
  rule.points.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      const auto [p, dp] = detail::legendre(n, x);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double dp = detail::legendre(n, x).second;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.points[i] = {-x};
    rule.points[n - 1 - i] = {x};
    rule.weights[i] = w;
    rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.points[n / 2] = {0.0};
  return rule;
}

/// Gauss-Lobatto-Legendre nodes (n >= 2), ascending; n = 1 gives the midpoint.
inline std::vector<double> gauss_lobatto_nodes(int n) {
  if (n < 1) throw std::invalid_argument("gauss_lobatto_nodes: n must be >= 1");
  if (n == 1) return {0.0};
  const int N = n - 1;
  std::vector<double> x(n);
  for (int i = 0; i < n; ++i) {
    double xi = -std::cos(std::numbers::pi * i / N);
    for (int it = 0; it < 100; ++it) {
      const double pn = detail::legendre(N, xi).first;
      const double pm = detail::legendre(N - 1, xi).first;
      const double dx = (xi * pn - pm) / (n * pn);
      xi -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    x[i] = xi;
  }
  x.front() = -1.0;
  x.back() = 1.0;
  return x;
}

inline QuadratureRule<2> tensor_quadrature(const QuadratureRule<1>& rule1d) {
  QuadratureRule<2> rule;
  const std::size_t n = rule1d.size();
  rule.points.reserve(n * n);
  rule.weights.reserve(n * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i) {
      rule.points.push_back({rule1d.points[i][0], rule1d.points[j][0]});
      rule.weights.push_back(rule1d.weights[i] * rule1d.weights[j]);
    }
  return rule;
}

/// Lagrange interpolation basis through a fixed node set.
class LagrangeBasis1D {
 public:
  explicit LagrangeBasis1D(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    denominators_.resize(nodes_.size());
    for (std::size_t a = 0; a < nodes_.size(); ++a) {
      double d = 1.0;
      for (std::size_t b = 0; b < nodes_.size(); ++b)
        if (b != a) d *= nodes_[a] - nodes_[b];
      denominators_[a] = d;
    }
  }

  std::size_t size() const { return nodes_.size(); }
  std::span<const double> nodes() const { return nodes_; }

  void evaluate(double x, std::span<double> values, std::span<double> derivatives) const {
    const std::size_t n = nodes_.size();
    for (std::size_t a = 0; a < n; ++a) {
      double v = 1.0, dv = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        if (b == a) continue;
        const double t = x - nodes_[b];
        dv = dv * t + v;
        v *= t;
      }
      values[a] = v / denominators_[a];
      if (!derivatives.empty()) derivatives[a] = dv / denominators_[a];
    }
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> denominators_;
};

/// Degree-k nodal basis for trace unknowns on a reference facet [-1, 1].
class FacetBasis {
 public:
  explicit FacetBasis(int degree)
      : degree_(degree), lagrange_(gauss_lobatto_nodes(degree + 1)) {}
  int degree() const { return degree_; }
  int dimension() const { return degree_ + 1; }
  std::span<const double> nodes() const { return lagrange_.nodes(); }
  void evaluate(double s, std::span<double> values, std::span<double> derivatives = {}) const {
    lagrange_.evaluate(s, values, derivatives);
  }

 private:
  int degree_;
  LagrangeBasis1D lagrange_;
};

struct CellBasisValues {
  std::vector<double> values;
  std::vector<std::array<double, 2>> gradients;  // reference-space gradients
};

/// Tensor-product Q_k nodal basis on [-1, 1]^2 (Lagrange on Gauss-Lobatto
/// nodes). Basis function a = i + (k + 1) j is l_i(xi) l_j(eta).
class CellBasis {
 public:
  explicit CellBasis(int degree)
      : degree_(degree), lagrange_(gauss_lobatto_nodes(degree + 1)) {}

  int degree() const { return degree_; }
  int dimension() const { return (degree_ + 1) * (degree_ + 1); }
  std::span<const double> nodes_1d() const { return lagrange_.nodes(); }

  /// Reference coordinates of nodal point a.
  std::array<double, 2> node(int a) const {
    const int n = degree_ + 1;
    return {lagrange_.nodes()[a % n], lagrange_.nodes()[a / n]};
  }

  void evaluate(std::array<double, 2> ref, std::span<double> values,
                std::span<std::array<double, 2>> gradients = {}) const {
    const int n = degree_ + 1;
    std::array<double, 8> lx{}, dlx{}, ly{}, dly{};
    lagrange_.evaluate(ref[0], std::span(lx.data(), n), std::span(dlx.data(), n));
    lagrange_.evaluate(ref[1], std::span(ly.data(), n), std::span(dly.data(), n));
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const int a = i + n * j;
        values[a] = lx[i] * ly[j];
        if (!gradients.empty()) gradients[a] = {dlx[i] * ly[j], lx[i] * dly[j]};
      }
  }

 private:
  int degree_;
  LagrangeBasis1D lagrange_;
};

inline CellBasisValues eval_cell_basis(const CellBasis& basis, std::array<double, 2> ref_point) {
  CellBasisValues out;
  out.values.resize(basis.dimension());
  out.gradients.resize(basis.dimension());
  basis.evaluate(ref_point, out.values, out.gradients);
  return out;
}

/// Basis values and reference gradients at the points of a 2D rule,
/// stored point-major: entry [q * dim + a].
struct CellTabulation {
  QuadratureRule<2> rule;
  int dimension = 0;
  std::vector<double> values;
  std::vector<std::array<double, 2>> gradients;

  CellTabulation() = default;
  CellTabulation(const CellBasis& basis, QuadratureRule<2> r) : rule(std::move(r)) {
    dimension = basis.dimension();
    values.resize(rule.size() * dimension);
    gradients.resize(rule.size() * dimension);
    for (std::size_t q = 0; q < rule.size(); ++q)
      basis.evaluate(rule.points[q], std::span(values).subspan(q * dimension, dimension),
                     std::span(gradients).subspan(q * dimension, dimension));
  }
  std::span<const double> values_at(std::size_t q) const {
    return std::span(values).subspan(q * dimension, dimension);
  }
  std::span<const std::array<double, 2>> gradients_at(std::size_t q) const {
    return std::span(gradients).subspan(q * dimension, dimension);
  }
};

}  // namespace gld
