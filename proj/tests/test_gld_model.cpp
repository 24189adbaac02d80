#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "gld/gld_model.hpp"

using namespace gld;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

MaterialParams monolayer() {
  MaterialParams m;
  m.epsilon = 5 * kVacuumPermittivity;
  for (int i = 0; i < 2; ++i) m[i] = {-1.54e9, -2.65e12, 2.6e15, 1e-8, 10.0, Property::Ferroelectric};
  return m;
}

MaterialParams with_component(double a, double b, double g) {
  MaterialParams m;
  m[0] = {a, b, g, 1.0, 1.0, Property::Ferroelectric};
  m[1] = m[0];
  return m;
}

}  // namespace

TEST_CASE("Landau polynomial values", "[model]") {
  const auto m = monolayer();
  CHECK(landau_F(m, 0, 0.0) == 0.0);
  CHECK_THAT(landau_F(m, 0, 0.1), WithinRel(2.3196e9, 1e-12));
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 20; ++i) {
    const double p = u(rng);
    CHECK(landau_F(m, 0, p) == landau_F(m, 0, -p));
  }
}

TEST_CASE("derivative of the Landau polynomial", "[model][property]") {
  const auto m = monolayer();
  CHECK(dF_times_p(m, 0, 0.0) == 0.0);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double p = u(rng), h = 1e-6 * std::max(1.0, std::abs(p));
    const double fd = (landau_F(m, 0, p + h) - landau_F(m, 0, p - h)) / (2 * h);
    CHECK_THAT(dF_times_p(m, 0, p), WithinRel(fd, 1e-6));
    CHECK(dF_times_p(m, 0, -p) == -dF_times_p(m, 0, p));
  }
}

TEST_CASE("convex splitting", "[model]") {
  const auto m = monolayer();
  const auto s = split(m);
  CHECK(s.plus[0].alpha == 0.0);
  CHECK(s.minus[0].alpha == 1.54e9);
  CHECK(s.plus[0].beta == 0.0);
  CHECK(s.minus[0].beta == 2.65e12);
  CHECK(s.plus[0].gamma == 2.6e15);
  CHECK(s.minus[0].gamma == 0.0);

  const auto pos = split(with_component(1, 2, 3));
  CHECK(pos.minus[0].alpha == 0.0);
  CHECK(pos.minus[0].beta == 0.0);
  CHECK(pos.minus[0].gamma == 0.0);

  CHECK(dF_plus(m, 0, 0.0) == 0.0);
  CHECK(dF_minus(m, 0, 0.0) == 0.0);
  CHECK(d2F_plus(m, 0, 0.0) == 2 * s.plus[0].alpha);
}

TEST_CASE("split parts: identity, monotonicity, convexity", "[model][property]") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> coef(-5.0, 5.0), u(-1.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = with_component(coef(rng), coef(rng), std::abs(coef(rng)));
    const auto s = split(m);
    for (int i = 0; i < 50; ++i) {
      const double p = u(rng);
      const double Fp = s.plus[0].value(p), Fm = s.minus[0].value(p), F = landau_F(m, 0, p);
      CHECK_THAT(Fp - Fm, WithinAbs(F, 1e-12 * std::max({1.0, std::abs(Fp), std::abs(Fm)})));
      CHECK_THAT(dF_plus(m, 0, p) - dF_minus(m, 0, p),
                 WithinAbs(dF_times_p(m, 0, p), 1e-12 * (1.0 + std::abs(dF_plus(m, 0, p)))));
      const double h = 1e-6;
      CHECK_THAT(d2F_plus(m, 0, p),
                 WithinAbs((dF_plus(m, 0, p + h) - dF_plus(m, 0, p - h)) / (2 * h), 1e-6 * (1 + d2F_plus(m, 0, p))));
    }
    double prev_plus = -INFINITY, prev_minus = -INFINITY;
    for (int i = 0; i < 100; ++i) {
      const double p = -1.0 + 2.0 * i / 99.0;
      CHECK(d2F_plus(m, 0, p) >= 0.0);
      CHECK(d2F_minus(m, 0, p) >= 0.0);
      CHECK(dF_plus(m, 0, p) >= prev_plus);
      CHECK(dF_minus(m, 0, p) >= prev_minus);
      prev_plus = dF_plus(m, 0, p);
      prev_minus = dF_minus(m, 0, p);
    }
  }
}

TEST_CASE("monolayer Landau polynomial is a double well", "[model][property]") {
  const auto m = monolayer();
  // F(0) = 0 is a local maximum: dF < 0 just right of 0, and dF > 0 at p = 1.
  CHECK(dF_times_p(m, 0, 1e-3) < 0.0);
  CHECK(dF_times_p(m, 0, 1.0) > 0.0);
  double lo = 1e-3, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (dF_times_p(m, 0, mid) < 0.0 ? lo : hi) = mid;
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
  CHECK(landau_F(m, 0, lo) < 0.0);
}

TEST_CASE("uniqueness conditions", "[model]") {
  CHECK(check_uniqueness_conditions(with_component(1, 1, 0))[0] == UniquenessStatus::Satisfied);
  CHECK(check_uniqueness_conditions(monolayer())[0] == UniquenessStatus::Violated);
  MaterialParams d = with_component(1, 1, 0);
  d[1] = {2.0, 0.0, 0.0, 0.0, 0.0, Property::Dielectric};
  CHECK(check_uniqueness_conditions(d)[1] == UniquenessStatus::NotApplicable);
}

TEST_CASE("material invariants", "[model]") {
  CHECK(monolayer().violations().empty());
  MaterialParams bad = monolayer();
  bad[0].g = 0.0;
  bad[1] = {-1.0, 0.0, 0.0, 0.0, 0.0, Property::Dielectric};
  bad.epsilon = 0.0;
  CHECK(bad.violations().size() == 3);
  CHECK_THROWS_AS(bad.validate(), ConfigurationError);
  MaterialParams d = monolayer();
  d[1] = {3.0, 0.0, 0.0, 0.0, 0.0, Property::Dielectric};
  CHECK(d.violations().empty());
}

TEST_CASE("nondimensionalization", "[model]") {
  const auto si = monolayer();
  Scaling s;
  s.length = std::hypot(80e-9, 40e-9);
  s.time = 160e-9;
  s.polarization = 1.0;
  s.epsilon = si.epsilon;
  const auto m = s.to_model(si);
  CHECK_THAT(m.epsilon, WithinRel(1.0, 1e-15));
  // F scales with P0^2 / eps: F~(p~) = F(p) eps / P0^2.
  for (double p : {-0.3, 0.05, 0.2})
    CHECK_THAT(landau_F(m, 0, p), WithinRel(landau_F(si, 0, p) * si.epsilon, 1e-13));
  CHECK_THAT(m[0].g, WithinRel(1e-8 * si.epsilon / (s.length * s.length), 1e-15));
  CHECK_THAT(m[0].rho_v, WithinRel(10.0 * si.epsilon / 160e-9, 1e-15));
  CHECK_THAT(s.potential(), WithinRel(s.length / si.epsilon, 1e-15));
}
