// epinv: EP and MCMC inversion from the command line.
//
//   epinv <ep|mcmc|compare|synth|mesh> --config FILE [--out DIR] [--seed N] [--threads N]

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "epinv/cli/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Expectation propagation and MCMC for sparsity-promoting inverse problems"};
  app.require_subcommand(1);

  std::string config;
  epinv::cli::RunContext ctx;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  const std::pair<const char*, const char*> commands[] = {
      {"ep", "Run the EP approximation and write mean, std, covariance and trace"},
      {"mcmc", "Run reference Metropolis-Hastings chains"},
      {"compare", "Compare the outputs of an EP run and an MCMC run"},
      {"synth", "Generate synthetic EIT data on a finer mesh"},
      {"mesh", "Generate a disk mesh with electrodes"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config, "Key-value config file")->required();
    sub->add_option("--out", ctx.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Seed; overrides the config");
    sub->add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) ctx.seed = seed;
  ctx.threads = threads;
  const int rc = epinv::cli::run_command(sub->get_name(), config, ctx);
  if (rc != 0) std::cerr << "epinv " << sub->get_name() << ": failed, see " << ctx.out_dir << "/summary.json\n";
  return rc;
}
