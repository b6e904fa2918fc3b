#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "mtm/config.hpp"
#include "mtm/run.hpp"

namespace {

mtm::cfg::RunConfig resolve(const std::string& path, const std::uint64_t* seed, const std::string& out) {
  mtm::cfg::RunConfig config = path.empty() ? mtm::cfg::RunConfig{} : mtm::cfg::load_config(path);
  if (seed) config.seed = *seed;
  if (!out.empty()) config.out_dir = out;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtm: masked-alignment mean-teacher detection transformer on synthetic fog data"};
  app.require_subcommand(1);

  std::string config_path, stage = "all", out, checkpoint, split = "target-val";
  std::uint64_t seed = 0;

  auto* run = app.add_subcommand("run", "train: pretrain, selftrain, all or sweep");
  run->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  run->add_option("--stage", stage, "pretrain|selftrain|all|sweep")
      ->check(CLI::IsMember({"pretrain", "selftrain", "all", "sweep"}));
  auto* run_seed = run->add_option("--seed", seed, "overrides [run] seed");
  run->add_option("--out", out, "overrides [run] out_dir");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "target-val|source|target-like");
  ev->add_option("--config", config_path, "config used to regenerate the data (defaults if omitted)");
  auto* ev_seed = ev->add_option("--seed", seed, "data seed");
  ev->add_option("--out", out, "directory for eval.csv (default: checkpoint directory)");

  auto* gen = app.add_subcommand("gen-data", "write the synthetic splits to disk");
  gen->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  auto* gen_seed = gen->add_option("--seed", seed, "overrides [run] seed");
  gen->add_option("--out", out, "overrides [run] out_dir");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto config = resolve(config_path, run_seed->count() ? &seed : nullptr, out);
      const auto summary = mtm::run::run_stage(config, mtm::run::parse_stage(stage), &std::cerr);
      if (summary.label_reads != 0) {
        std::cerr << "error: target-train labels were read " << summary.label_reads << " times during training\n";
        return 3;
      }
    } else if (ev->parsed()) {
      auto config = resolve(config_path, ev_seed->count() ? &seed : nullptr, "");
      const std::filesystem::path dir = out.empty() ? std::filesystem::path(checkpoint).parent_path() : std::filesystem::path(out);
      mtm::run::run_eval(checkpoint, config, split, dir.empty() ? "." : dir, &std::cout);
    } else if (gen->parsed()) {
      const auto config = resolve(config_path, gen_seed->count() ? &seed : nullptr, out);
      mtm::run::run_gen_data(config, &std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
