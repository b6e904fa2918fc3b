#include "mtm/metrics.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>

#include "mtm/errors.hpp"

namespace mtm::eval {

namespace {

void require_valid(const Box& b) {
  if (!(b.w > 0.0 && b.h > 0.0)) throw ContractError("iou: degenerate box (non-positive width or height)");
}

double intersection(const Box& a, const Box& b) {
  const double w = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double h = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  require_valid(a);
  require_valid(b);
  const double inter = intersection(a, b);
  return inter / (a.area() + b.area() - inter);
}

double giou(const Box& a, const Box& b) {
  require_valid(a);
  require_valid(b);
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x1(), b.x1()) - std::min(a.x0(), b.x0())) *
                      (std::max(a.y1(), b.y1()) - std::min(a.y0(), b.y0()));
  return inter / uni - (hull - uni) / hull;
}

double ap_from_sequence(std::span<const bool> is_true_positive, std::size_t num_gt) {
  if (num_gt == 0) throw ContractError("ap_from_sequence: no ground truth");
  const std::size_t n = is_true_positive.size();
  std::vector<double> precision(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += is_true_positive[i] ? 1 : 0;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (is_true_positive[i]) ap += precision[i] / static_cast<double>(num_gt);
  }
  return ap;
}

EvalResult average_precision(std::span<const BoxSet> predictions, std::span<const BoxSet> ground_truth,
                             std::size_t num_classes, double iou_threshold) {
  if (predictions.size() != ground_truth.size()) {
    throw ContractError("average_precision: prediction and ground-truth image counts differ");
  }
  for (const BoxSet& p : predictions) {
    if (p.scores.size() != p.boxes.size()) throw ContractError("average_precision: predictions must carry scores");
  }

  EvalResult result;
  result.per_class_ap.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  result.gt_per_class.assign(num_classes, 0);
  result.curves.resize(num_classes);

  struct Candidate {
    double score;
    std::size_t image;
    std::size_t index;
  };

  double ap_sum = 0.0;
  std::size_t classes_with_gt = 0;
  std::size_t total_gt = 0;
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    std::vector<Candidate> candidates;
    for (std::size_t img = 0; img < predictions.size(); ++img) {
      const BoxSet& p = predictions[img];
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (static_cast<std::size_t>(p.classes[i]) == cls) candidates.push_back({p.scores[i], img, i});
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      return std::tie(b.score, a.image, a.index) < std::tie(a.score, b.image, b.index);
    });

    std::vector<std::vector<char>> matched(ground_truth.size());
    std::size_t num_gt = 0;
    for (std::size_t img = 0; img < ground_truth.size(); ++img) {
      matched[img].assign(ground_truth[img].size(), 0);
      for (int c : ground_truth[img].classes) num_gt += static_cast<std::size_t>(c) == cls ? 1 : 0;
    }
    result.gt_per_class[cls] = num_gt;
    total_gt += num_gt;

    std::vector<bool> flags;
    flags.reserve(candidates.size());
    for (const Candidate& cand : candidates) {
      const BoxSet& gts = ground_truth[cand.image];
      const Box& pb = predictions[cand.image].boxes[cand.index];
      double best = -1.0;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (static_cast<std::size_t>(gts.classes[j]) != cls || matched[cand.image][j]) continue;
        const double o = iou(pb, gts.boxes[j]);
        if (o > best) {
          best = o;
          best_j = j;
        }
      }
      const bool tp = best >= iou_threshold;
      if (tp) matched[cand.image][best_j] = 1;
      flags.push_back(tp);
      (tp ? result.true_positives : result.false_positives) += 1;
    }

    if (num_gt > 0) {
      std::size_t tp = 0;
      for (std::size_t i = 0; i < flags.size(); ++i) {
        tp += flags[i] ? 1 : 0;
        result.curves[cls].push_back(
            {static_cast<double>(tp) / static_cast<double>(num_gt), static_cast<double>(tp) / static_cast<double>(i + 1)});
      }
      const std::unique_ptr<bool[]> seq(new bool[flags.size()]);
      std::copy(flags.begin(), flags.end(), seq.get());
      result.per_class_ap[cls] = ap_from_sequence(std::span<const bool>(seq.get(), flags.size()), num_gt);
      ap_sum += result.per_class_ap[cls];
      ++classes_with_gt;
    }
  }
  if (classes_with_gt == 0) throw ContractError("average_precision: no ground truth in any class, mAP undefined");
  result.map = ap_sum / static_cast<double>(classes_with_gt);
  result.false_negatives = total_gt - result.true_positives;
  return result;
}

}  // namespace mtm::eval
