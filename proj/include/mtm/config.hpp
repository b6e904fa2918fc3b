#pragma once

// Run configuration: INI-style text with [section] headers and key = value
// lines. '#' and ';' start comments. Every key is optional; unknown sections
// or keys are rejected with the offending line number.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mtm/alignment.hpp"
#include "mtm/data.hpp"
#include "mtm/detector.hpp"

namespace mtm::cfg {

struct PretrainConfig {
  std::size_t epochs = 40;
  double learning_rate = 2e-4;
  std::size_t lr_drop_epoch = 0;  // 0: epochs / 2
  bool use_target_like = true;
  bool alignment = true;
  std::size_t batch = 1;  // images per optimizer step (gradients averaged)
  bool flip = false;      // random horizontal flip of training images

  std::size_t drop_epoch() const { return lr_drop_epoch == 0 ? epochs / 2 : lr_drop_epoch; }
};

struct SelftrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 2e-6;
  double pseudo_threshold = 0.5;
  double ema_momentum = 0.999;
  bool oqkt = true;
  std::size_t oqkt_heads = 16;
  std::size_t oqkt_head_dim = 16;
  bool alignment = true;
  bool dump_pseudo_labels = false;
};

struct AlignConfig {
  align::MaskSpec mask;
  align::LossWeights weights;
  bool mdqfa = true;
  bool mtwfa = true;

  // enc MDQFA, enc MTWFA, dec MDQFA, dec MTWFA
  std::array<bool, 4> active() const { return {mdqfa, mtwfa, mdqfa, mtwfa}; }
};

struct EvalConfig {
  std::size_t hdiv_steps = 300;
  double hdiv_lr = 1e-2;
  double bound_delta = 0.05;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "runs/default";
  bool verbose = false;
  det::ModelConfig model;
  data::DataConfig data;
  AlignConfig align;
  PretrainConfig pretrain;
  SelftrainConfig selftrain;
  EvalConfig eval;

  // Throws ConfigError naming the field.
  void validate() const;
  // Dataset config with the run seed applied.
  data::DataConfig data_config() const;
};

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }
  const std::string& detail() const { return detail_; }

 private:
  std::size_t line_;
  std::string detail_;
};

RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
// Canonical text form; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

}  // namespace mtm::cfg
