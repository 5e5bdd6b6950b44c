// SPDX-License-Identifier: Apache-2.0
//
// Batch CLI for the architecture search engine: supernet search, retraining,
// random-search baseline, evaluation, space counting, and log inspection.

#include <iostream>

#include <CLI11.hpp>

#include "confsearch/commands.hpp"

int main(int argc, char** argv) {
  using confsearch::CliOptions;

  CLI::App app{"Conformer-space differentiable architecture search"};
  app.require_subcommand(1);

  CliOptions opts;
  std::uint64_t seedArg = 0;
  std::size_t epochsArg = 0, trialsArg = 0;

  auto addCommon = [&](CLI::App* cmd, bool needsConfig) {
    auto* c = cmd->add_option("--config", opts.configPath, "run configuration file");
    if (needsConfig) c->required();
    cmd->add_option("--out", opts.outOverride, "output directory (overrides CONFSEARCH_OUT)");
    cmd->add_option("--seed", seedArg, "override train.seed")
        ->each([&](const std::string&) { opts.seed = seedArg; });
    cmd->add_option("--epochs", epochsArg, "override epoch counts")
        ->each([&](const std::string&) { opts.epochs = epochsArg; });
    cmd->add_option("--trials", trialsArg, "override train.trials")
        ->each([&](const std::string&) { opts.trials = trialsArg; });
    cmd->add_flag("--force-one-step", opts.forceOne,
                  "pin the approximation steps at one (plain alternation)");
  };

  auto* search = app.add_subcommand("search", "run the gated bilevel search");
  addCommon(search, true);

  auto* retrain = app.add_subcommand("retrain", "retrain a genotype from scratch");
  addCommon(retrain, true);
  retrain->add_option("--genotype", opts.genotypePath, "genotype file")->required();

  auto* random = app.add_subcommand("random-search", "uniform-sampling baseline");
  addCommon(random, true);

  auto* eval = app.add_subcommand("eval", "evaluate a model checkpoint on a split");
  addCommon(eval, true);
  eval->add_option("--checkpoint", opts.checkpointPrefix, "checkpoint prefix")->required();
  eval->add_option("--split", opts.split, "train|valid|test");

  auto* count = app.add_subcommand("count-space", "print the exact architecture count");
  addCommon(count, false);

  auto* inspect = app.add_subcommand("inspect-alpha", "summarize an alpha log");
  inspect->add_option("--log", opts.logPath, "alpha_log.csv from a search run")->required();

  auto* compare = app.add_subcommand("compare", "gated schedule vs one-step, paired report");
  addCommon(compare, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : confsearch::kExitConfig;
  }

  if (search->parsed()) return confsearch::cmdSearch(opts, std::cout, std::cerr);
  if (retrain->parsed()) return confsearch::cmdRetrain(opts, std::cout, std::cerr);
  if (random->parsed()) return confsearch::cmdRandomSearch(opts, std::cout, std::cerr);
  if (eval->parsed()) return confsearch::cmdEval(opts, std::cout, std::cerr);
  if (count->parsed()) return confsearch::cmdCountSpace(opts, std::cout, std::cerr);
  if (inspect->parsed()) return confsearch::cmdInspectAlpha(opts, std::cout, std::cerr);
  if (compare->parsed()) return confsearch::cmdCompare(opts, std::cout, std::cerr);
  return confsearch::kExitConfig;
}
