#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pdfb/cli.hpp"

int main(int argc, char** argv) {
  using namespace pdfb::cli;
  CLI::App app{"Primal-dual forward-backward experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::string out;
  long seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Config file (flat key=value)")->required();
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Seed for generators and stochastic runs");
    sub->add_option("--jobs", ov.jobs, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--unproven", ov.unproven, "Allow stochastic modes without a rate guarantee");
  };
  CLI::App* run = app.add_subcommand("run", "Run one experiment");
  CLI::App* scan = app.add_subcommand("region-scan", "Scan the step-size plane for convergence");
  CLI::App* gen = app.add_subcommand("gen", "Write a problem bundle");
  CLI::App* ref = app.add_subcommand("reference", "Compute and store a reference solution");
  for (CLI::App* sub : {run, scan, gen, ref}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  CLI::App* chosen = app.get_subcommands().front();
  if (chosen->count("--out")) ov.out = out;
  if (chosen->count("--seed")) ov.seed = seed;

  return run_guarded(
      [&]() -> int {
        Config cfg = Config::parse_file(config_path);
        if (chosen == run) return cmd_run(cfg, ov);
        if (chosen == scan) return cmd_region_scan(cfg, ov);
        if (chosen == gen) return cmd_gen(cfg, ov);
        return cmd_reference(cfg, ov);
      },
      std::cerr);
}
