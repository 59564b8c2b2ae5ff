#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "muso/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Exact machine unlearning for over-parameterized random-feature models"};
  app.require_subcommand(1);

  std::string config_path;
  std::string report_dir;
  std::string output_override;

  CLI::App* run = app.add_subcommand("run", "Run an experiment config end to end");
  run->add_option("config", config_path, "JSON experiment config")->required();
  run->add_option("--output-dir", output_override, "Override the config's output directory");

  CLI::App* validate = app.add_subcommand("validate", "Validate a config and exit");
  validate->add_option("config", config_path, "JSON experiment config")->required();

  CLI::App* report = app.add_subcommand("report", "Re-render summary.csv from report JSONs");
  report->add_option("dir", report_dir, "Directory holding report_*.json files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (app.got_subcommand(run) || app.got_subcommand(validate)) {
      std::ifstream in(config_path);
      if (!in) {
        std::cerr << "cannot open config: " << config_path << "\n";
        return 1;
      }
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        std::cerr << "config is not valid JSON: " << e.what() << "\n";
        return 1;
      }
      muso::ExperimentConfig cfg;
      try {
        cfg = muso::parse_config(j);
      } catch (const muso::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
      }
      if (app.got_subcommand(validate)) {
        std::cout << "config OK\n";
        return 0;
      }
      if (!output_override.empty()) cfg.output_dir = output_override;
      muso::run_experiment(cfg);
      std::cout << "reports written to " << cfg.output_dir << "\n";
      return 0;
    }
    muso::render_summary(report_dir);
    std::cout << "summary written to " << report_dir << "/summary.csv\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
