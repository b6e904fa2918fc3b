#pragma once

// Command-level orchestration behind the `mtm` executable.
//
// Output directory layout:
//   config.ini            resolved configuration
//   metrics.csv           per-epoch metrics (deterministic)
//   timing.csv            per-epoch wall-clock seconds
//   pretrain.ckpt         pretrained detector + discriminators + optimizer state
//   selftrain.ckpt        best student (by target-val mAP)
//   selftrain_final.ckpt  student after the last epoch, teacher.ckpt its EMA teacher
//   eval.csv              per-class AP on target-val for each produced model
//   bound.csv             bound terms for the pretrained model
//   sweep.csv             theta x eta mAP matrix (sweep stage)

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mtm/config.hpp"

namespace mtm::run {

enum class Stage { Pretrain, Selftrain, All, Sweep };
Stage parse_stage(const std::string& text);

inline constexpr std::array<double, 7> kSweepTheta{0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
inline constexpr std::array<double, 3> kSweepEta{1.0 / 3.0, 0.5, 1.0};

struct Summary {
  double pretrain_map = -1.0;
  double selftrain_best_map = -1.0;
  double selftrain_pretrained_map = -1.0;
  std::size_t label_reads = 0;  // target-train label audit counter
};

// `log` receives human-readable progress lines; may be null.
Summary run_stage(const cfg::RunConfig& config, Stage stage, std::ostream* log);

struct SweepCell {
  double theta = 0.0;
  double eta = 0.0;
  double map = 0.0;
};

std::vector<SweepCell> run_sweep(const cfg::RunConfig& config, std::ostream* log);
std::string sweep_csv(const std::vector<SweepCell>& cells);

// Evaluates a checkpoint on a split ("target-val" or "source") and writes eval.csv to out_dir.
double run_eval(const std::filesystem::path& checkpoint, const cfg::RunConfig& config, const std::string& split,
                const std::filesystem::path& out_dir, std::ostream* log);

// Writes the generated splits as PPM images plus annotation CSVs under out_dir/data.
void run_gen_data(const cfg::RunConfig& config, std::ostream* log);

}  // namespace mtm::run
