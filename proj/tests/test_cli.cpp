#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gld/gld.hpp"

using namespace gld;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> violations_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigurationError& e) {
    return e.violations();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& v, const std::string& s) {
  for (const auto& x : v)
    if (x.find(s) != std::string::npos) return true;
  return false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gld_test_" + name);
  fs::remove_all(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GLD_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ScenarioConfig tiny_physical(Scenario s, const fs::path& dir) {
  ScenarioConfig c = preset(s);
  c.mesh.nx = 4;
  c.mesh.ny = 2;
  c.discretization.final_time = 10e-9;
  c.discretization.steps = 10;
  c.output.snapshot_times = {5e-9, 10e-9};
  c.output.directory = dir.string();
  if (s == Scenario::Hysteresis) {
    c.mesh.adaptive.every = 2;
    c.mesh.adaptive.max_level = 1;
    c.mesh.adaptive.fraction = 0.25;
    c.output.profile_x = 40e-9;
  }
  return c;
}

}  // namespace

TEST_CASE("empty configuration gives the defaults", "[config]") {
  const auto c = parse_config("");
  CHECK(c.scenario == Scenario::EnergyStability);
  CHECK(c.mesh.width == 80e-9);
  CHECK(c.mesh.height == 40e-9);
  CHECK(c.discretization.degree == 1);
  CHECK(c.discretization.final_time == 160e-9);
  CHECK(c.discretization.steps == 1000);
  CHECK(c.epsilon_b == 5.0);
  CHECK(c.newton.abs_tol == 1e-11);
  CHECK(c.newton.rel_tol == 1e-10);
  CHECK(c.newton.max_iter == 30);
  CHECK(c.initial.kind == InitialKind::Split);
  CHECK(c.initial.value == 0.1);
  CHECK(c.initial.split_x == 40e-9);
  CHECK(to_json(parse_config("{}")) == to_json(preset(Scenario::EnergyStability)));
}

TEST_CASE("monolayer constants", "[config]") {
  const auto m = parse_config("").material();
  CHECK(m.epsilon == kVacuumPermittivity * 5.0);
  for (int i = 0; i < 2; ++i) {
    CHECK(m[i].alpha == -1.54e9);
    CHECK(m[i].beta == -2.65e12);
    CHECK(m[i].gamma == 2.6e15);
    CHECK(m[i].g == 1e-8);
    CHECK(m[i].rho_v == 10.0);
    CHECK(m[i].property == Property::Ferroelectric);
  }
}

TEST_CASE("configuration errors are reported by field", "[config]") {
  auto v = violations_of(R"({"discretization": {"degree": 7}})");
  REQUIRE(v.size() == 1);
  CHECK_THAT(v[0], ContainsSubstring("discretization.degree"));

  v = violations_of(R"({"mesh": {"nxx": 3}})");
  REQUIRE(v.size() == 1);
  CHECK_THAT(v[0], ContainsSubstring("mesh.nxx"));

  v = violations_of(R"({"mesh": {"nx": "four"}})");
  REQUIRE(v.size() == 1);
  CHECK_THAT(v[0], ContainsSubstring("mesh.nx"));

  v = violations_of(R"({"colour": 1, "mesh": {"nx": 2.5}, "newton": {"abs_tol": "x"}})");
  CHECK(v.size() == 3);
  CHECK(any_contains(v, "colour"));
  CHECK(any_contains(v, "mesh.nx"));
  CHECK(any_contains(v, "newton.abs_tol"));

  v = violations_of(R"({"mesh": {"dirichlet": ["bottom"], "neumann": ["left", "right"]}})");
  CHECK(any_contains(v, "top"));

  v = violations_of(R"({"material": {"components": [{"g": 0}, {}]}})");
  CHECK(any_contains(v, "g > 0"));

  CHECK(any_contains(violations_of(R"({"scenario": "nonsense"})"), "scenario"));
  CHECK(!violations_of("{ not json").empty());
  CHECK(!violations_of("[1, 2]").empty());
}

TEST_CASE("presets survive a JSON round trip", "[config][property]") {
  for (Scenario s : kAllScenarios) {
    const auto j = to_json(preset(s));
    const auto c = parse_config(j.dump());
    CHECK(c.scenario == s);
    CHECK(to_json(c) == j);
    CHECK(preset(s).violations().empty());
  }
  const auto c = parse_config(R"({"scenario": "hysteresis", "mesh": {"nx": 6}})");
  CHECK(c.mesh.nx == 6);
  CHECK(c.mesh.ny == 4);
  CHECK(c.mesh.adaptive.enabled);
  CHECK(c.signal.kind == SignalKind::PiecewiseLinear);
}

TEST_CASE("bias waveform", "[signal]") {
  const auto s = triangle_signal();
  CHECK(s.violations().empty());
  CHECK(bias_at(s, 0.0) == 0.0);
  CHECK_THAT(bias_at(s, 20e-9), WithinAbs(100.0, 1e-9));
  CHECK_THAT(bias_at(s, 40e-9), WithinAbs(0.0, 1e-9));
  CHECK_THAT(bias_at(s, 60e-9), WithinAbs(-100.0, 1e-9));
  CHECK_THAT(bias_at(s, 80e-9), WithinAbs(0.0, 1e-9));
  CHECK_THAT(bias_at(s, 10e-9), WithinAbs(50.0, 1e-9));
  CHECK_THAT(bias_at(s, 100e-9), WithinAbs(bias_at(s, 20e-9), 1e-9));
  CHECK_THAT(bias_at(s, 150e-9), WithinAbs(bias_at(s, 70e-9), 1e-9));
  // Lipschitz with the steepest slope, 5 V/ns.
  const double dt = 0.01e-9;
  for (int i = 0; i < 24000; ++i) {
    const double t = i * dt;
    CHECK(std::abs(bias_at(s, t + dt) - bias_at(s, t)) <= 5e9 * dt * (1 + 1e-9));
  }
  BiasSignal once = s;
  once.periodic = false;
  CHECK(bias_at(once, 100e-9) == 0.0);
  BiasSignal bad{{{0.0, 0.0}, {0.0, 1.0}}, true};
  CHECK(bad.violations().size() == 2);
}

TEST_CASE("snapshot output", "[output]") {
  const auto mesh = std::make_shared<const Mesh>(
      build_rectangle_mesh(1.0, 1.0, 1, 1, {Side::Bottom, Side::Top}, {Side::Left, Side::Right}));
  MaterialParams m = ManufacturedSolution{}.material();
  const auto d = make_discretization(mesh, 1, m);
  const auto s = project_initial(d, [](Point2 x) { return Vector2{2 * x.x + x.y, x.x + 2 * x.y}; });
  const auto vtk = vtk_string(d, s, Scaling::identity());
  CHECK_THAT(vtk, ContainsSubstring("POINTS 4 double"));
  CHECK_THAT(vtk, ContainsSubstring("CELLS 1 5"));
  CHECK_THAT(vtk, ContainsSubstring("CELL_TYPES 1\n9\n"));
  CHECK_THAT(vtk, ContainsSubstring("VECTORS P double\n1.5 1.5 0\n"));
  // P is a gradient, so its curl vanishes; a rotation has curl 2.
  CHECK_THAT(cell_means(d, s, 0).curl_P, WithinAbs(0.0, 1e-13));
  const auto r = project_initial(d, [](Point2 x) { return Vector2{-x.y, x.x}; });
  CHECK_THAT(cell_means(d, r, 0).curl_P, WithinAbs(2.0, 1e-13));

  CsvWriter csv({"a", "b"});
  csv.row(1, 0.5);
  csv.row(2, 1e-20);
  CHECK(csv.str() == "a,b\n1,0.5\n2,1e-20\n");
}

TEST_CASE("atomic file writes", "[output]") {
  const auto dir = scratch_dir("atomic");
  const auto path = dir / "sub" / "x.txt";
  write_file_atomic(path, "first");
  write_file_atomic(path, "second");
  CHECK(slurp(path) == "second");
  CHECK(!fs::exists(fs::path(path.string() + ".tmp")));
  fs::remove_all(dir);
}

TEST_CASE("physical setup", "[scenario]") {
  const auto c = preset(Scenario::EnergyStability);
  const auto s = physical_setup(c);
  CHECK_THAT(s.data.material.epsilon, WithinAbs(1.0, 1e-15));
  CHECK_THAT(s.mesh->diameter(), WithinAbs(1.0, 1e-15));
  CHECK(s.mesh->num_cells() == 32u * 16u);
  // The split state projects to +-0.1 on each half.
  const auto d = make_discretization(s.mesh, 1, s.data.material);
  const auto p = project_initial(d, s.P0);
  for (std::size_t cell = 0; cell < s.mesh->num_cells(); ++cell) {
    const double expected = s.mesh->cell(cell).center().x < 0.5 * s.mesh->geometry().width ? 0.1 : -0.1;
    const auto mean = cell_means(d, p, cell);
    CHECK_THAT(mean.P[0], WithinAbs(expected, 1e-14));
    CHECK_THAT(mean.P[1], WithinAbs(expected, 1e-14));
  }
  // The electrode carries the bias in model units.
  auto h = preset(Scenario::Hysteresis);
  const auto hs = physical_setup(h);
  const double t = 20e-9 / hs.scale.time;
  CHECK_THAT(hs.data.dirichlet_potential({0.1, 0.0}, t, Side::Top) * hs.scale.potential(), WithinRel(100.0, 1e-12));
  CHECK(hs.data.dirichlet_potential({0.1, 0.0}, t, Side::Bottom) == 0.0);
}

TEST_CASE("small physical runs write consistent files", "[scenario]") {
  for (Scenario sc : {Scenario::EnergyStability, Scenario::Hysteresis}) {
    const auto dir = scratch_dir(to_string(sc));
    const auto c = tiny_physical(sc, dir);
    const auto r = run_scenario(c, {});
    const auto energy = slurp(dir / "energy.csv");
    CHECK(energy.rfind("step,time,energy,total,newton_iterations,newton_residual\n", 0) == 0);
    CHECK(line_count(energy) == 1 + 11);
    CHECK(r.energy.size() == 11);
    CHECK(fs::exists(dir / "snapshot_5ns.vtk"));
    CHECK(fs::exists(dir / "snapshot_10ns.vtk"));
    CHECK(fs::exists(dir / "summary.json"));
    if (sc == Scenario::Hysteresis) {
      // Rows start at step 1, where the first current is available.
      CHECK(line_count(slurp(dir / "hysteresis.csv")) == 1 + 10);
      CHECK(r.hysteresis.size() == 10);
      CHECK(fs::exists(dir / "profile.csv"));
      CHECK(r.hysteresis.back().cells > 8);
    }
    // Same input, same bytes.
    const auto dir2 = scratch_dir(std::string(to_string(sc)) + "_again");
    auto c2 = c;
    c2.output.directory = dir2.string();
    run_scenario(c2, {});
    CHECK(slurp(dir2 / "energy.csv") == energy);
    fs::remove_all(dir);
    fs::remove_all(dir2);
  }
}

TEST_CASE("invalid configurations are rejected before running", "[scenario]") {
  auto c = preset(Scenario::EnergyStability);
  c.discretization.steps = 0;
  CHECK_THROWS_AS(run_scenario(c, {}), ConfigurationError);
}

TEST_CASE("command line exit codes", "[cli]") {
  const auto dir = scratch_dir("cli");
  fs::create_directories(dir);
  CHECK(run_cli("presets -d " + (dir / "presets").string()) == 0);
  for (Scenario s : kAllScenarios) {
    const auto p = dir / "presets" / (std::string(to_string(s)) + ".json");
    REQUIRE(fs::exists(p));
    CHECK(run_cli("check-config " + p.string()) == 0);
  }
  {
    std::ofstream(dir / "bad.json") << R"({"discretization": {"degree": 7}})";
  }
  CHECK(run_cli("check-config " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("run " + (dir / "bad.json").string()) == 2);
  CHECK(run_cli("run " + (dir / "missing.json").string()) == 2);
  {
    std::ofstream(dir / "tiny.json") << R"({"mesh": {"nx": 2, "ny": 1},
      "discretization": {"final_time": 2e-9, "steps": 2}, "output": {"snapshot_times": []}})";
  }
  CHECK(run_cli("run -q -o " + (dir / "out").string() + " " + (dir / "tiny.json").string()) == 0);
  CHECK(fs::exists(dir / "out" / "energy.csv"));
  // one linear solve cannot reach the Newton tolerance on the first step
  {
    std::ofstream(dir / "newton.json") << R"({"mesh": {"nx": 2, "ny": 1},
      "discretization": {"final_time": 2e-9, "steps": 2}, "newton": {"max_iter": 1},
      "output": {"snapshot_times": []}})";
  }
  CHECK(run_cli("run -q -o " + (dir / "out3").string() + " " + (dir / "newton.json").string()) == 3);
  // a single cell cannot resolve the domain wall, and d_h rises
  {
    std::ofstream(dir / "coarse.json") << R"({"mesh": {"nx": 1, "ny": 1}, "initial": {"value": 0.3},
      "discretization": {"final_time": 20e-9, "steps": 20}, "output": {"snapshot_times": []}})";
  }
  CHECK(run_cli("run -q -o " + (dir / "out4").string() + " " + (dir / "coarse.json").string()) == 4);
  fs::remove_all(dir);
}

TEST_CASE("VTK snapshots re-read with matching counts", "[output]") {
  const auto mesh = std::make_shared<const Mesh>(refine_adaptive(
      build_rectangle_mesh(2.0, 1.0, 2, 1, {Side::Bottom, Side::Top}, {Side::Left, Side::Right}),
      std::vector<std::size_t>{0}));
  const auto d = make_discretization(mesh, 1, ManufacturedSolution{}.material());
  std::istringstream in(vtk_string(d, StateFields::zeros(d), Scaling::identity()));
  std::string line, tok;
  std::getline(in, line);
  CHECK(line == "# vtk DataFile Version 3.0");
  std::size_t points = 0, cells = 0, scalars = 0, vectors = 0;
  while (in >> tok) {
    if (tok == "POINTS") {
      in >> points >> tok;
      double v;
      for (std::size_t i = 0; i < 3 * points; ++i) REQUIRE(in >> v);
    } else if (tok == "CELLS") {
      std::size_t size;
      in >> cells >> size;
      CHECK(size == 5 * cells);
      std::size_t n, id;
      for (std::size_t c = 0; c < cells; ++c) {
        REQUIRE(in >> n);
        CHECK(n == 4);
        for (int a = 0; a < 4; ++a) {
          REQUIRE(in >> id);
          CHECK(id < points);
        }
      }
    } else if (tok == "SCALARS") {
      ++scalars;
    } else if (tok == "VECTORS") {
      ++vectors;
    }
  }
  CHECK(points == mesh->vertices().size());
  CHECK(cells == mesh->num_cells());
  CHECK(cells == 5);
  CHECK(scalars == 3);
  CHECK(vectors == 2);
}

TEST_CASE("zero initial polarization gives a flat zero energy series", "[scenario]") {
  auto c = tiny_physical(Scenario::EnergyStability, scratch_dir("zero"));
  c.initial.kind = InitialKind::Zero;
  const auto r = run_scenario(c, RunOptions{false, {}});
  REQUIRE(r.energy.size() == 11);
  for (const auto& e : r.energy) CHECK(e.energy == 0.0);
}

TEST_CASE("convergence tables start from the 16-cell mesh", "[scenario]") {
  auto c = preset(Scenario::ConvergenceSpace);
  c.mesh.levels = 2;
  const auto r = run_scenario(c, RunOptions{false, {}});
  REQUIRE(r.table.rows.size() == 2);
  CHECK_THAT(r.table.rows[0].h, WithinRel(std::sqrt(2.0) / 4.0, 1e-15));
  CHECK_THAT(r.table.rows[0].tau, WithinRel(0.1, 1e-15));
  CHECK_THAT(r.table.rows[1].tau, WithinRel(0.1 / 4.0, 1e-15));
  CHECK(r.table.rows[1].error.V < r.table.rows[0].error.V);
  // One step (first = middle = last), then steps 1, 2 and 4 of four.
  CHECK(r.diagnostics.size() == 1 + 3);
}
