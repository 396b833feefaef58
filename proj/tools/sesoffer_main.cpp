// Command-line front end: loads a scenario file, runs the requested
// decision mode, and writes the report bundle.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "sesoffer/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"network-security informed offer making with storage lease"};

  std::string mode = "mode1";
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  int mc_samples = -1;

  app.add_option("--mode", mode,
                 "centralized | mode1 | mode2 | no-ses | duet")
      ->capture_default_str();
  app.add_option("--config", config_path, "scenario file (JSON)")
      ->required();
  app.add_option("--seed", seed, "override the scenario seed");
  app.add_option("--out", out_dir, "report directory")->capture_default_str();
  app.add_option("--mc-samples", mc_samples,
                 "override the Monte-Carlo validation sample count");

  CLI11_PARSE(app, argc, argv);

  sesoffer::RunMode run_mode;
  try {
    run_mode = sesoffer::parse_mode(mode);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  sesoffer::ScenarioConfig cfg;
  try {
    cfg = sesoffer::load_scenario(config_path);
  } catch (const sesoffer::ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "cannot load config: " << e.what() << "\n";
    return 2;
  }
  if (seed != 0) cfg.seed = seed;
  if (mc_samples >= 0) cfg.mc_samples = mc_samples;

  sesoffer::RunReport report = sesoffer::run_scenario(cfg, run_mode, out_dir);
  std::cout << report.summary;
  if (report.exit_code != 0)
    std::cerr << "exit code " << report.exit_code
              << (report.outputs.message.empty()
                      ? std::string()
                      : ": " + report.outputs.message)
              << "\n";
  return report.exit_code;
}
