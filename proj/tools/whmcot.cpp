#include "mcot/harness.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

constexpr const char* kCommands[] = {"simulate-nominal", "solve", "evaluate", "mpc",
                                     "online", "gen-drains", "verify"};

struct Options {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Water-heater population control by moment-constrained transport"};
  app.require_subcommand(1);
  Options opt;
  for (const char* name : kCommands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "JSON experiment config (defaults when omitted)");
    sub->add_option("--out", opt.out, "output directory (overrides WHMCOT_OUTPUT_DIR and the config)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { opt.seed = s; opt.seed_set = true; }, "master seed");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    mcot::ExperimentConfig config;
    if (!opt.config.empty()) {
      config = mcot::load_config(opt.config);
    } else {
      config = mcot::config_from_json(nlohmann::json::object());
    }
    if (opt.seed_set) {
      config.seed = opt.seed;
      config.solver.seed = opt.seed;
      config.mpc.solver.seed = opt.seed;
      config.online.seed = opt.seed;
    }
    std::string out = config.output_dir;
    if (const char* env = std::getenv("WHMCOT_OUTPUT_DIR"); env && *env) out = env;
    if (!opt.out.empty()) out = opt.out;

    const auto start = std::chrono::steady_clock::now();
    const bool ok = mcot::run_command(command, config, out);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::ofstream(std::filesystem::path(out) / "timing.json") << "{\"wall_seconds\": " << seconds << "}\n";
    if (!ok) {
      std::cerr << command << ": checks failed, see " << out << "/summary.json\n";
      return 3;
    }
    return 0;
  } catch (const mcot::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mcot::SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
