#include <catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Eigenvalues>

#include "gld/polybasis.hpp"

using namespace gld;
using Catch::Matchers::WithinAbs;

TEST_CASE("Gauss-Legendre rules", "[polybasis]") {
  const auto r1 = gauss_legendre(1);
  REQUIRE(r1.size() == 1);
  CHECK(r1.points[0][0] == 0.0);
  CHECK(r1.weights[0] == 2.0);

  const auto r2 = gauss_legendre(2);
  CHECK_THAT(std::abs(r2.points[0][0]), WithinAbs(1.0 / std::sqrt(3.0), 1e-15));
  CHECK_THAT(r2.points[0][0] + r2.points[1][0], WithinAbs(0.0, 1e-15));
  CHECK_THAT(r2.weights[0], WithinAbs(1.0, 1e-15));
  CHECK_THAT(r2.weights[1], WithinAbs(1.0, 1e-15));

  const auto r3 = gauss_legendre(3);
  double x4 = 0.0;
  for (std::size_t q = 0; q < r3.size(); ++q) x4 += r3.weights[q] * std::pow(r3.points[q][0], 4);
  CHECK_THAT(x4, WithinAbs(0.4, 1e-15));
}

TEST_CASE("quadrature exactness and weight sums", "[polybasis][property]") {
  for (int n = 1; n <= 10; ++n) {
    const auto r = gauss_legendre(n);
    const double wsum = std::accumulate(r.weights.begin(), r.weights.end(), 0.0);
    CHECK_THAT(wsum, WithinAbs(2.0, 1e-14));
    for (int p = 0; p <= 2 * n - 1; ++p) {
      double s = 0.0;
      for (std::size_t q = 0; q < r.size(); ++q) s += r.weights[q] * std::pow(r.points[q][0], p);
      const double exact = (p % 2 == 1) ? 0.0 : 2.0 / (p + 1);
      CHECK_THAT(s, WithinAbs(exact, 1e-13));
    }
    for (double w : r.weights) CHECK(w > 0.0);
    const auto t = tensor_quadrature(r);
    CHECK(t.size() == static_cast<std::size_t>(n * n));
    CHECK_THAT(std::accumulate(t.weights.begin(), t.weights.end(), 0.0), WithinAbs(4.0, 1e-13));
  }
}

TEST_CASE("tensor quadrature", "[polybasis]") {
  const auto t1 = tensor_quadrature(gauss_legendre(1));
  REQUIRE(t1.size() == 1);
  CHECK(t1.points[0][0] == 0.0);
  CHECK(t1.points[0][1] == 0.0);
  CHECK(t1.weights[0] == 4.0);
  const auto t2 = tensor_quadrature(gauss_legendre(2));
  double s = 0.0;
  for (std::size_t q = 0; q < t2.size(); ++q)
    s += t2.weights[q] * t2.points[q][0] * t2.points[q][0] * t2.points[q][1] * t2.points[q][1];
  CHECK_THAT(s, WithinAbs(4.0 / 9.0, 1e-15));
}

TEST_CASE("cell basis evaluation", "[polybasis]") {
  const CellBasis b0(0);
  const auto v0 = eval_cell_basis(b0, {0.3, -0.2});
  REQUIRE(v0.values.size() == 1);
  CHECK(v0.values[0] == 1.0);
  CHECK(v0.gradients[0][0] == 0.0);
  CHECK(v0.gradients[0][1] == 0.0);

  const CellBasis b1(1);
  const auto v1 = eval_cell_basis(b1, {1.0, 1.0});
  for (int a = 0; a < 4; ++a) {
    const auto n = b1.node(a);
    CHECK_THAT(v1.values[a], WithinAbs((n[0] == 1.0 && n[1] == 1.0) ? 1.0 : 0.0, 1e-15));
  }
}

TEST_CASE("cell basis invariants", "[polybasis][property]") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k <= 3; ++k) {
    const CellBasis b(k);
    for (int trial = 0; trial < 20; ++trial) {
      const std::array<double, 2> x{u(rng), u(rng)};
      const auto v = eval_cell_basis(b, x);
      CHECK_THAT(std::accumulate(v.values.begin(), v.values.end(), 0.0), WithinAbs(1.0, 1e-12));
      // Gradients against central differences.
      const double h = 1e-6;
      const auto xp = eval_cell_basis(b, {x[0] + h, x[1]}), xm = eval_cell_basis(b, {x[0] - h, x[1]});
      const auto yp = eval_cell_basis(b, {x[0], x[1] + h}), ym = eval_cell_basis(b, {x[0], x[1] - h});
      for (int a = 0; a < b.dimension(); ++a) {
        CHECK_THAT(v.gradients[a][0], WithinAbs((xp.values[a] - xm.values[a]) / (2 * h), 1e-6));
        CHECK_THAT(v.gradients[a][1], WithinAbs((yp.values[a] - ym.values[a]) / (2 * h), 1e-6));
      }
    }
    // Nodal property.
    for (int a = 0; a < b.dimension(); ++a) {
      const auto v = eval_cell_basis(b, b.node(a));
      for (int c = 0; c < b.dimension(); ++c) CHECK_THAT(v.values[c], WithinAbs(a == c ? 1.0 : 0.0, 1e-13));
    }
  }
}

TEST_CASE("facet basis invariants", "[polybasis][property]") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k <= 3; ++k) {
    const FacetBasis b(k);
    std::vector<double> v(b.dimension()), dv(b.dimension()), vp(b.dimension()), vm(b.dimension());
    for (int trial = 0; trial < 20; ++trial) {
      const double s = u(rng), h = 1e-6;
      b.evaluate(s, v, dv);
      b.evaluate(s + h, vp);
      b.evaluate(s - h, vm);
      CHECK_THAT(std::accumulate(v.begin(), v.end(), 0.0), WithinAbs(1.0, 1e-12));
      for (int a = 0; a < b.dimension(); ++a) CHECK_THAT(dv[a], WithinAbs((vp[a] - vm[a]) / (2 * h), 1e-6));
    }
  }
}

TEST_CASE("mass matrix is SPD and projection reproduces Q_k", "[polybasis][property]") {
  for (int k = 0; k <= 3; ++k) {
    const CellBasis b(k);
    const auto rule = tensor_quadrature(gauss_legendre(k + 1));
    const int n = b.dimension();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    // A degree-k polynomial in each variable.
    auto f = [k](double x, double y) { return std::pow(x, k) * (1.0 + std::pow(y, k)) - 0.5 * std::pow(y, k) + 0.25; };
    const auto rule_hi = tensor_quadrature(gauss_legendre(k + 2));
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const auto v = eval_cell_basis(b, rule.points[q]);
      for (int a = 0; a < n; ++a)
        for (int c = 0; c < n; ++c) M(a, c) += rule.weights[q] * v.values[a] * v.values[c];
    }
    Eigen::MatrixXd Mh = Eigen::MatrixXd::Zero(n, n);
    for (std::size_t q = 0; q < rule_hi.size(); ++q) {
      const auto v = eval_cell_basis(b, rule_hi.points[q]);
      const double fv = f(rule_hi.points[q][0], rule_hi.points[q][1]);
      for (int a = 0; a < n; ++a) {
        rhs(a) += rule_hi.weights[q] * fv * v.values[a];
        for (int c = 0; c < n; ++c) Mh(a, c) += rule_hi.weights[q] * v.values[a] * v.values[c];
      }
    }
    CHECK((M - M.transpose()).norm() <= 1e-15 * M.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    const Eigen::VectorXd coef = Mh.ldlt().solve(rhs);
    for (double x : {-0.9, -0.2, 0.4, 1.0})
      for (double y : {-1.0, 0.1, 0.7}) {
        const auto v = eval_cell_basis(b, {x, y});
        double s = 0.0;
        for (int a = 0; a < n; ++a) s += coef(a) * v.values[a];
        CHECK_THAT(s, WithinAbs(f(x, y), 1e-12));
      }
  }
}
