#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "app.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"Federated prototype-based domain adaptation simulator"};
  cli.require_subcommand(1);

  std::string run_config;
  auto* run = cli.add_subcommand("run", "Run one experiment from a config file");
  run->add_option("config", run_config, "Config file")->required();

  std::string sweep_config;
  std::string axis;
  std::vector<std::string> values;
  auto* sweep = cli.add_subcommand("sweep", "Repeat an experiment over values of one setting");
  sweep->add_option("config", sweep_config, "Config file")->required();
  sweep->add_option("--axis", axis, "kernel, proto_fraction, transmit or mmd_mode")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required()->delimiter(',');

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : fedproto::app::kConfigFailure;
  }

  fedproto::app::configure_logging();
  if (*run) return fedproto::app::run_command(run_config, std::cerr);
  return fedproto::app::sweep_command(sweep_config, axis, values, std::cerr);
}
