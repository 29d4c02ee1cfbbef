#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "kflow/common.hpp"
#include "kflow/config.hpp"
#include "kflow/runner.hpp"

namespace {

struct SubArgs {
  std::string config_path;
  std::string out_dir;
  std::int64_t seed = -1;  // negative means take the config's seed
};

void add_common(CLI::App* sub, SubArgs& args) {
  sub->add_option("--config", args.config_path, "experiment config file")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--out", args.out_dir, "output directory")->required();
  sub->add_option("--seed", args.seed, "override the seed from the config");
}

int run(const SubArgs& args, const std::string& kind) {
  kflow::Config cfg = kflow::Config::parse_file(args.config_path);
  const std::string cfg_kind = cfg.get_or("experiment", "kind", kind);
  kflow::require(cfg_kind == kind, "config is for " + cfg_kind + ", not " + kind);
  std::uint64_t seed;
  if (args.seed >= 0) {
    seed = static_cast<std::uint64_t>(args.seed);
  } else {
    seed = static_cast<std::uint64_t>(cfg.get_long_or("experiment", "seed", 0));
  }
  std::cout << kflow::run_experiment(cfg, seed, args.out_dir) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kronecker flow experiments"};
  app.require_subcommand(1);

  SubArgs sim, train, cert, bandit;
  add_common(app.add_subcommand("simulate-kl", "fit families to dense gaussian targets"), sim);
  add_common(app.add_subcommand("train-snn", "train a stochastic network"), train);
  add_common(app.add_subcommand("certify", "train and certify a generalization bound"), cert);
  add_common(app.add_subcommand("bandit", "run contextual bandit episodes"), bandit);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("simulate-kl")) return run(sim, "simulate-kl");
    if (app.got_subcommand("train-snn")) return run(train, "train-snn");
    if (app.got_subcommand("certify")) return run(cert, "certify");
    return run(bandit, "bandit");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
