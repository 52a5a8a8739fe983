#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "aprecond/app.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"Consistency-distillation preconditioning lab on Gaussian-mixture teachers"};
  cli.set_version_flag("--version", aprecond::kVersion);
  cli.require_subcommand(1);

  std::string config;
  std::vector<std::string> overrides;
  std::string family;
  bool serial = false;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"tables", "estimate l_t, s_t and write the integrated tables"},
      {"train", "distill a student and write checkpoint + metric log"},
      {"sample", "multistep sampling from a checkpoint"},
      {"eval", "sample distances and trajectory MSE against the teacher"},
      {"bound-check", "consistency gap against its bound on grid pairs"},
      {"coeff-dump", "f(t, s), g(t, s) grids per family"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = cli.add_subcommand(name, help);
    sub->add_option("-c,--config", config, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("overrides", overrides, "dotted key=value overrides, e.g. train.iterations=100");
    sub->add_flag("--serial", serial, "run the serial reference kernels");
    if (name == "coeff-dump") sub->add_option("--family", family, "cm, bcm, ctm, analytic_fwd or analytic_bwd");
  }
  CLI11_PARSE(cli, argc, argv);

  aprecond::AppOptions options;
  options.exec = serial ? aprecond::Exec::serial : aprecond::Exec::parallel;
  if (!family.empty()) options.family = family;
  const std::string subcommand = cli.get_subcommands().front()->get_name();
  return aprecond::run(subcommand, config, overrides, options, std::cout, std::cerr);
}
