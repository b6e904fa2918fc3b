#pragma once

#include <vector>

#include "mtm/autograd.hpp"
#include "mtm/boxes.hpp"
#include "mtm/detector.hpp"
#include "mtm/matching.hpp"

namespace mtm::det {

struct DetLossWeights {
  double cls = 1.0;
  double l1 = 5.0;
  double giou = 2.0;
  double no_object = 0.1;
};

struct DetectionLoss {
  Tensor total;
  Tensor classification;
  Tensor l1;    // mean over matched boxes; zero tensor when there is no ground truth
  Tensor giou;  // mean of (1 - GIoU) over matched boxes
  std::vector<Assignment> matches;
};

// Matching cost [N_dec x N_gt] = -w_cls * p(class) + w_l1 * L1 + w_giou * (1 - GIoU).
std::vector<double> matching_cost(const HeadOutput& heads, const BoxSet& gt, const DetLossWeights& w = {});

// Differentiable GIoU between row-aligned [M x 4] (cx, cy, w, h) tensors, returned as [M x 1].
Tensor giou_rows(const Tensor& a, const Tensor& b);

/// Set-based detection loss: Hungarian match, then weighted cross-entropy over
/// all queries (unmatched -> "no object" with weight `no_object`) plus L1 and
/// GIoU terms on matched pairs.
DetectionLoss detection_loss(const HeadOutput& heads, const BoxSet& gt, const DetLossWeights& w = {});

}  // namespace mtm::det
