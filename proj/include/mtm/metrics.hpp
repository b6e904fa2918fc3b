#pragma once

// Box overlap measures and the AP@IoU evaluator.

#include <cstddef>
#include <span>
#include <vector>

#include "mtm/boxes.hpp"

namespace mtm::eval {

// Both throw ContractError for boxes with non-positive width or height.
double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);

struct PrPoint {
  double recall;
  double precision;
};

struct EvalResult {
  std::vector<double> per_class_ap;        // NaN for classes without ground truth
  std::vector<std::size_t> gt_per_class;
  std::vector<std::vector<PrPoint>> curves;  // raw (unenveloped) PR points per class
  double map = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// Per-class AP at `iou_threshold` with all-point interpolation.
/// `predictions[i]` and `ground_truth[i]` belong to image i; predictions must carry scores.
/// Predictions are processed by descending score (ties by image, then box index),
/// each taking the highest-IoU unmatched ground truth of its class with IoU >= threshold.
/// Throws ContractError when no class has ground truth.
EvalResult average_precision(std::span<const BoxSet> predictions, std::span<const BoxSet> ground_truth,
                             std::size_t num_classes, double iou_threshold = 0.5);

// Area under the precision envelope for a TP/FP sequence already in rank order.
double ap_from_sequence(std::span<const bool> is_true_positive, std::size_t num_gt);

}  // namespace mtm::eval
