// Command line front end: gld run | check-config | presets

#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "gld/gld.hpp"

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kSolverError = 3, kAssertionFailure = 4 };

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw gld::ConfigurationError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_violations(const gld::ConfigurationError& e) {
  std::cerr << "configuration error:\n";
  for (const auto& v : e.violations()) std::cerr << "  - " << v << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ginzburg-Landau-Devonshire gradient-flow solver"};
  app.require_subcommand(1);

  std::string config_path, output_dir;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run the scenario described by a configuration file");
  run->add_option("config", config_path, "configuration file (JSON)")->required();
  run->add_option("-o,--output-dir", output_dir, "override output.directory");
  run->add_flag("-q,--quiet", quiet, "no progress messages");

  std::string check_path;
  auto* check = app.add_subcommand("check-config", "validate a configuration file and print it with defaults");
  check->add_option("config", check_path, "configuration file (JSON)")->required();

  std::string preset_dir = "presets";
  auto* presets = app.add_subcommand("presets", "write the packaged scenario presets");
  presets->add_option("-d,--dir", preset_dir, "destination directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*check) {
      const auto cfg = gld::parse_config(read_text(check_path));
      std::cout << gld::to_json(cfg).dump(2) << '\n';
      return kOk;
    }
    if (*presets) {
      for (gld::Scenario s : gld::kAllScenarios) {
        auto cfg = gld::preset(s);
        cfg.output.directory = std::string("out/") + gld::to_string(s);
        const auto path = std::filesystem::path(preset_dir) / (std::string(gld::to_string(s)) + ".json");
        gld::write_file_atomic(path, gld::to_json(cfg).dump(2) + "\n");
        std::cout << path.string() << '\n';
      }
      return kOk;
    }
    auto cfg = gld::parse_config(read_text(config_path));
    if (!output_dir.empty()) cfg.output.directory = output_dir;
    gld::RunOptions opt;
    if (!quiet) opt.log = [](const std::string& m) { std::cerr << m << '\n'; };
    const auto result = gld::run_scenario(cfg, opt);
    for (const auto& f : result.files) std::cout << f << '\n';
    return kOk;
  } catch (const gld::ConfigurationError& e) {
    print_violations(e);
    return kConfigError;
  } catch (const gld::StabilityViolation& e) {
    std::cerr << "stability violation at step " << e.step() << ": " << e.what() << '\n';
    return kAssertionFailure;
  } catch (const gld::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << '\n';
    return kSolverError;
  } catch (const gld::AssemblyError& e) {
    std::cerr << "assembly failure in cell " << e.cell() << ": " << e.what() << '\n';
    return kSolverError;
  } catch (const gld::SingularMatrixError& e) {
    std::cerr << "singular matrix (row " << e.row() << "): " << e.what() << '\n';
    return kSolverError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverError;
  }
}
