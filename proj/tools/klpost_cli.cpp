#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>

#include "klpost/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Constrained posterior learning from a small training set"};
  app.require_subcommand(1);

  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Config file (key = value)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--threads", threads, "Sampler threads (0 = auto)");
  };
  CLI::App* learn = app.add_subcommand("learn", "Solve for lambda and write the posterior ensemble");
  CLI::App* sweep = app.add_subcommand("sweep-j", "J(m, sigma) surface of the Gaussian diagnostic");
  CLI::App* gen = app.add_subcommand("gen", "Write synthetic datasets");
  CLI::App* diag = app.add_subcommand("diagnose", "Print basis and constraint summaries");
  for (CLI::App* sub : {learn, sweep, gen, diag}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : klpost::cli::kExitBadConfig;
  }

  const klpost::cli::Overrides ov{seed, threads};
  if (*learn) return klpost::cli::cmd_learn(config, ov);
  if (*sweep) return klpost::cli::cmd_sweep_j(config, ov);
  if (*gen) return klpost::cli::cmd_gen(config, ov);
  return klpost::cli::cmd_diagnose(config, ov);
}
