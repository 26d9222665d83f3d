#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "mfgm/runner.hpp"

namespace {

std::string default_out(const std::string& scenario_path) {
  namespace fs = std::filesystem;
  const char* root = std::getenv("MFGM_OUT_ROOT");
  fs::path base = root && *root ? fs::path(root) : fs::path("out");
  return (base / fs::path(scenario_path).stem()).string();
}

struct CommonArgs {
  std::string scenario;
  std::string out;
  long long seed = -1;
  int workers = 0;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool with_out) {
  cmd->add_option("scenario", a.scenario, "scenario file")->required();
  if (with_out) cmd->add_option("--out", a.out, "output directory");
  cmd->add_option("--seed", a.seed, "override the scenario seed");
  cmd->add_option("--workers", a.workers, "override the scenario worker count");
  cmd->add_flag("--quiet", a.quiet, "suppress progress output");
}

mfgm::Scenario load(const CommonArgs& a) {
  mfgm::Scenario s = mfgm::load_scenario(a.scenario);
  if (a.seed >= 0) s.seed = static_cast<std::uint64_t>(a.seed);
  if (a.workers > 0) s.workers = a.workers;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite-state major-player mean field game solver suite"};
  app.set_version_flag("--version", std::string(mfgm::kVersion));
  app.require_subcommand(1);

  CommonArgs run_args, check_args, sweep_args;
  CLI::App* cmd_run = app.add_subcommand("run", "execute a scenario");
  add_common(cmd_run, run_args, true);
  CLI::App* cmd_check =
      app.add_subcommand("check", "validate a scenario without running it");
  add_common(cmd_check, check_args, false);
  CLI::App* cmd_sweep =
      app.add_subcommand("sweep", "execute a sweep or refinement scenario");
  add_common(cmd_sweep, sweep_args, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (cmd_check->parsed()) {
      mfgm::Scenario s = load(check_args);
      bool ok = mfgm::check_scenario(s, std::cout);
      return ok ? 0 : 2;
    }
    const bool is_sweep = cmd_sweep->parsed();
    CommonArgs& a = is_sweep ? sweep_args : run_args;
    mfgm::Scenario s = load(a);
    if (is_sweep &&
        s.mode != mfgm::RunMode::LambdaSweep &&
        s.mode != mfgm::RunMode::EpsilonSweep && s.mode != mfgm::RunMode::Refine)
      throw mfgm::ConfigError(
          "sweep: scenario mode must be lambda_sweep, epsilon_sweep or refine");
    std::string out = !a.out.empty() ? a.out
                      : !s.out_dir.empty() ? s.out_dir
                                           : default_out(a.scenario);
    mfgm::run_scenario(s, out, a.quiet);
    if (!a.quiet) std::cout << "artifacts written to " << out << "\n";
    return 0;
  } catch (const mfgm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mfgm::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
