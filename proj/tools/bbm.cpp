#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"

#include "bbm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Log-barrier bilevel solver"};
  app.require_subcommand(1);

  // Flags are collected as strings and applied after the config file, so
  // command-line values override file values.
  std::map<std::string, std::string> flags;
  std::string config_path;
  bool augment = false;

  const std::map<std::string, std::string> value_flags{
      {"problem", "Problem name or problem config file"},
      {"t", "Barrier parameter"},
      {"t0", "Initial barrier parameter"},
      {"eps", "Target stationarity"},
      {"eps0", "Initial target stationarity"},
      {"rounds", "Path-following rounds or sweep points"},
      {"max-outer", "Outer iteration budget per run"},
      {"x0", "Starting point, comma separated"},
      {"seed", "Seed for generated data and sampling"},
      {"out", "Output file (stdout when omitted)"},
      {"suite", "Verification suite or 'all'"},
      {"inner-variant", "standard or verbatim"},
  };

  for (const char* name : {"solve", "pathfollow", "verify", "sweep-t"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "Config file (key = value)");
    for (const auto& [flag, help] : value_flags) {
      sub->add_option_function<std::string>(
          "--" + flag, [&flags, flag = flag](const std::string& v) { flags[flag] = v; }, help);
    }
    sub->add_flag("--augment-ball", augment, "Append the norm-ball constraint");
  }

  CLI11_PARSE(app, argc, argv);

  bbm::cli::RunConfig cfg;
  cfg.command = app.get_subcommands().front()->get_name();
  try {
    if (!config_path.empty()) bbm::cli::load_config_file(cfg, config_path);
    for (const auto& [k, v] : flags) bbm::cli::apply_setting(cfg, k, v);
    if (augment) cfg.augment_ball = true;
  } catch (const bbm::cli::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  const bool problem_given = flags.count("problem") > 0 || !config_path.empty();
  return bbm::cli::run_command(std::move(cfg), std::cerr, problem_given);
}
