#pragma once

// Two-stage training loop (pretraining on source + target-like, mean-teacher
// self-training on source + target), per-epoch metric logging and evaluation
// helpers shared by the CLI and the acceptance suite.

#include <array>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mtm/analysis.hpp"
#include "mtm/checkpoint.hpp"
#include "mtm/config.hpp"
#include "mtm/data.hpp"
#include "mtm/metrics.hpp"

namespace mtm::train {

inline constexpr double kNotApplicable = std::numeric_limits<double>::quiet_NaN();

struct EpochRow {
  std::string stage;
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double det_loss = 0.0;
  std::array<double, 4> adv_loss{};  // enc_mdqfa, enc_mtwfa, dec_mdqfa, dec_mtwfa (per-step mean)
  std::array<double, 4> disc_acc{};  // NaN when the role is inactive
  double val_map = 0.0;              // student on target-val
  double teacher_map = kNotApplicable;
  double alpha = kNotApplicable;
  double pseudo_labels = kNotApplicable;  // mean pseudo-labels per target image
  double seconds = 0.0;                   // wall clock, kept out of metrics.csv
};

/// Append-only, one row per (stage, epoch). metrics.csv excludes wall-clock
/// time so identical runs produce identical bytes; timing.csv carries it.
class MetricsLog {
 public:
  void append(EpochRow row);
  const std::vector<EpochRow>& rows() const { return rows_; }
  std::vector<EpochRow> stage_rows(const std::string& stage) const;

  static std::string header();
  std::string csv() const;
  std::string timing_csv() const;
  void write(const std::filesystem::path& dir) const;

 private:
  std::vector<EpochRow> rows_;
};

using EpochCallback = std::function<void(const EpochRow&)>;

// Throws NumericError after appending a diagnostic row (det_loss = NaN) if a loss goes non-finite.
ckpt::Checkpoint pretrain_stage(const cfg::RunConfig& config, const data::Dataset& dataset, MetricsLog& log,
                                const EpochCallback& on_epoch = {});

struct SelftrainResult {
  // Highest student target-val mAP over epochs 1..E. With OQKT on, det.dec.query_embed
  // holds the enhanced queries used for that evaluation.
  ckpt::Checkpoint best_student;
  ckpt::Checkpoint final_student;
  ckpt::Checkpoint final_teacher;
  std::size_t best_epoch = 0;
  double best_map = 0.0;
  double pretrained_map = 0.0;
};

SelftrainResult selftrain_stage(const cfg::RunConfig& config, const data::Dataset& dataset,
                                const ckpt::Checkpoint& pretrained, MetricsLog& log,
                                const EpochCallback& on_epoch = {});

// -- evaluation helpers -------------------------------------------------------
// query_embed overrides QE (OQKT-enhanced student queries).
std::vector<BoxSet> predict(const det::Detector& model, std::span<const data::Scene> scenes,
                            const ag::Tensor* query_embed = nullptr);
eval::EvalResult evaluate(const det::Detector& model, std::span<const data::Scene> scenes,
                          const ag::Tensor* query_embed = nullptr);
double target_map(const ckpt::Checkpoint& checkpoint, const data::Dataset& dataset);

// Per-image mean of the last encoder layer's patch tokens.
eval::FeatureSet encoder_features(const det::Detector& model, std::span<const data::Scene> scenes);

// (FP + FN) / (TP + FP + FN) at IoU 0.5 over predictions with score >= 0.5; 0 when both sets are empty.
double image_error(const BoxSet& predictions, const BoxSet& ground_truth);

// Domain classifier separability of source vs target-train encoder features.
eval::HdivResult feature_divergence(const ckpt::Checkpoint& checkpoint, const data::Dataset& dataset,
                                    const cfg::RunConfig& config);

// Bound terms for a pretrained model: per-image errors on source and target-like,
// divergence between alpha-mixture and target-train features, gamma_proxy = the
// same model's mean error on source plus on target-like.
eval::BoundReport bound_report(const ckpt::Checkpoint& checkpoint, const data::Dataset& dataset,
                               const cfg::RunConfig& config);

std::string eval_csv_header();
std::string eval_csv_rows(const eval::EvalResult& result, const std::string& model, const std::string& split);
std::string bound_csv(const eval::BoundReport& report);

}  // namespace mtm::train
