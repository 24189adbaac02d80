#include <catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <random>

#include "gld/time_stepper.hpp"
#include "gld/verification.hpp"

using namespace gld;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

std::shared_ptr<const Mesh> unit_mesh(int n) { return std::make_shared<const Mesh>(manufactured_mesh(n)); }

Discretization make(std::shared_ptr<const Mesh> mesh, int k, const MaterialParams& m) {
  return Discretization(mesh, k, set_stabilization(m, *mesh));
}

MaterialParams double_well(double g = 0.01, double rho = 1.0) {
  MaterialParams m;
  m.epsilon = 1.0;
  for (int i = 0; i < 2; ++i) m[i] = {-1.0, -1.0, 1.0, g, rho, Property::Ferroelectric};
  return m;
}

Vector2 wavy(Point2 x) { return {0.8 * std::sin(6.0 * x.x), 0.9 * std::cos(5.0 * x.y)}; }

double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace

TEST_CASE("zero data stays zero after one Newton solve", "[stepper]") {
  ProblemData data;
  data.material = double_well();
  const auto d = make(unit_mesh(2), 1, data.material);
  const StateFields z = StateFields::zeros(d);
  NewtonReport rep;
  const auto s = step(d, data, z, 0.1, 0.1, NewtonSettings{}, &rep);
  CHECK(rep.iterations == 1);
  CHECK(max_abs(s.cells) == 0.0);
  CHECK(max_abs(s.traces) == 0.0);
  CHECK(discrete_energy(d, data.material, s) == 0.0);
}

TEST_CASE("quadratic implicit part needs a single Newton solve", "[stepper]") {
  // F+ = p^2 has a linear derivative, so the linearization is exact.
  ProblemData data;
  data.material.epsilon = 1.0;
  for (int i = 0; i < 2; ++i) data.material[i] = {1.0, -1.0, 0.0, 0.05, 1.0, Property::Ferroelectric};
  const auto d = make(unit_mesh(3), 2, data.material);
  const auto s0 = initial_state(d, data, wavy);
  NewtonReport rep;
  step(d, data, s0, 0.05, 0.05, NewtonSettings{}, &rep);
  CHECK(rep.iterations <= 2);
  CHECK(rep.final_residual <= 1e-11 + 1e-10 * rep.initial_residual);
}

TEST_CASE("Newton converges quadratically", "[stepper]") {
  ProblemData data;
  data.material = double_well();
  const auto d = make(unit_mesh(4), 1, data.material);
  const auto s0 = initial_state(d, data, wavy);
  for (double tau : {0.1, 1.0, 10.0}) {
    NewtonReport rep;
    step(d, data, s0, tau, tau, NewtonSettings{}, &rep);
    CHECK(rep.iterations <= 6);
    int checked = 0;
    for (std::size_t j = 0; j + 1 < rep.history.size(); ++j) {
      const double r0 = rep.history[j], r1 = rep.history[j + 1];
      if (r0 < 1e-2 && r1 > 1e-12) {
        CHECK(r1 <= 10.0 * r0 * r0);
        ++checked;
      }
    }
    CHECK(checked >= 1);
  }
}

TEST_CASE("energy of a constant polarization", "[stepper]") {
  const auto m = double_well();
  const Vector2 p{0.1, -0.2};
  for (int k = 0; k <= 2; ++k) {
    const auto d = make(unit_mesh(2), k, m);
    const auto s = project_initial(d, [&](Point2) { return p; });
    const double expected = landau_F(m, 0, p[0]) + landau_F(m, 1, p[1]);
    CHECK_THAT(discrete_energy(d, m, s), WithinRel(expected, 1e-13));
    CHECK_THAT(modified_energy_I(d, m, s), WithinRel(expected, 1e-13));
  }
}

TEST_CASE("a steady state is preserved", "[stepper]") {
  // V = c x2 + v0, P = (0, p2), E = (0, -c), U = 0, balanced by the forcing
  // (DF(0), DF(p2) - E2).
  const double c = 0.4, v0 = 0.1, p2 = 0.3;
  ProblemData data;
  data.material = double_well(0.02, 2.0);
  data.dirichlet_potential = [=](Point2 x, double, Side) { return c * x.y + v0; };
  data.boundary_polarization = [=](Point2, double, Side) { return Vector2{0.0, p2}; };
  data.forcing = [m = data.material, c, p2](Point2, double) { return Vector2{0.0, dF_times_p(m, 1, p2) + c}; };
  const ExactFields exact{[=](Point2 x) { return c * x.y + v0; }, [=](Point2) { return Vector2{0.0, -c}; },
                          [=](Point2) { return Vector2{0.0, p2}; },
                          [](Point2) { return std::array<Vector2, 2>{}; }};
  for (int k = 1; k <= 2; ++k) {
    const auto d = make(std::make_shared<const Mesh>(refine_adaptive(manufactured_mesh(2), std::vector<std::size_t>{3})), k,
                        data.material);
    auto s = initial_state(d, data, [=](Point2) { return Vector2{0.0, p2}; });
    for (int n = 1; n <= 3; ++n) s = step(d, data, s, 0.1 * n, 0.1, NewtonSettings{});
    const auto e = l2_error(d, s, exact);
    CHECK(e.V <= 1e-11);
    CHECK(e.E <= 1e-11);
    CHECK(e.P <= 1e-11);
    CHECK(e.U <= 1e-11);
  }
}

TEST_CASE("modified energy decreases and equals the Gibbs form", "[stepper][property]") {
  std::mt19937 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 6; ++trial) {
    ProblemData data;
    data.material.epsilon = 0.5 + u(rng);
    for (int i = 0; i < 2; ++i)
      data.material[i] = {-0.5 - u(rng), -u(rng), 0.5 + u(rng), 0.005 + 0.05 * u(rng), 0.5 + u(rng),
                          Property::Ferroelectric};
    const double a1 = 4.0 + 4.0 * u(rng), a2 = 4.0 + 4.0 * u(rng);
    const auto P0 = [=](Point2 x) { return Vector2{0.7 * std::sin(a1 * x.x + 0.3), 0.7 * std::cos(a2 * x.y)}; };
    const double tau = trial % 2 ? 0.5 : 0.02;
    const auto d = make(unit_mesh(3), 1 + trial % 2, data.material);
    auto s = initial_state(d, data, P0);
    double prev = modified_energy_I(d, data.material, s);
    const double slack = 1e-12 * (1.0 + std::abs(prev));
    CHECK_THAT(gibbs_energy_G(d, data, s, 0.0), WithinAbs(prev, 1e-12 * (1.0 + std::abs(prev))));
    for (int n = 1; n <= 15; ++n) {
      s = step(d, data, s, n * tau, tau, NewtonSettings{});
      const double I = modified_energy_I(d, data.material, s);
      CHECK(I <= prev + slack);
      CHECK_THAT(gibbs_energy_G(d, data, s, n * tau), WithinAbs(I, 1e-12 * (1.0 + std::abs(I))));
      prev = I;
    }
  }
}

TEST_CASE("condensed and monolithic linear solves give the same step", "[stepper]") {
  const ManufacturedSolution ms;
  const ProblemData data = manufactured_problem(ms);
  const auto d = make(std::make_shared<const Mesh>(refine_adaptive(manufactured_mesh(2), std::vector<std::size_t>{0})), 2,
                      data.material);
  const auto s0 = initial_state(d, data, [&](Point2 x) { return ms.P(0.0, x); });
  const auto m0 = initial_state(d, data, [&](Point2 x) { return ms.P(0.0, x); }, 0.0, monolithic_solver);
  const auto a = step(d, data, s0, 0.01, 0.01, NewtonSettings{});
  const auto b = step(d, data, m0, 0.01, 0.01, NewtonSettings{}, nullptr, monolithic_solver);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.cells.size(); ++i) diff = std::max(diff, std::abs(a.cells[i] - b.cells[i]));
  CHECK(diff <= 1e-10 * max_abs(a.cells));
}

TEST_CASE("run validates its loop settings and reports energies", "[stepper]") {
  ProblemData data;
  data.material = double_well();
  const auto d = make(unit_mesh(2), 1, data.material);
  TimeLoopConfig bad;
  bad.steps = 0;
  CHECK_THROWS_AS(run(d, data, bad, wavy), ConfigurationError);

  TimeLoopConfig cfg;
  cfg.final_time = 0.5;
  cfg.steps = 5;
  // The under-resolved wavy start raises d_h on the first step; the monitor
  // must stop there.
  try {
    run(d, data, cfg, wavy);
    FAIL("expected StabilityViolation");
  } catch (const StabilityViolation& e) {
    CHECK(e.step() == 1);
  }
  cfg.energy_check.enabled = false;
  int calls = 0;
  const auto r = run(d, data, cfg, wavy, [&](int n, double t, const StateFields&, const EnergyRecord& rec) {
    CHECK(rec.step == n);
    CHECK_THAT(t, WithinAbs(0.1 * n, 1e-15));
    ++calls;
  });
  CHECK(calls == 6);
  REQUIRE(r.records.size() == 6);
  for (std::size_t n = 1; n < r.records.size(); ++n) {
    CHECK(r.records[n].newton_iterations >= 1);
    CHECK_THAT(r.records[n].total, WithinRel(r.records[n].energy * d.mesh().area(), 1e-15));
  }
}
