#include "mtm/detection_loss.hpp"

#include <array>
#include <cmath>

#include "mtm/errors.hpp"
#include "mtm/metrics.hpp"

namespace mtm::det {

std::vector<double> matching_cost(const HeadOutput& heads, const BoxSet& gt, const DetLossWeights& w) {
  const std::size_t n = heads.class_logits.rows(), k = heads.class_logits.cols();
  const auto probs = class_probabilities(heads);
  const auto boxes = heads.boxes.data();
  std::vector<double> cost(n * gt.size());
  for (std::size_t q = 0; q < n; ++q) {
    const Box pred{boxes[q * 4], boxes[q * 4 + 1], boxes[q * 4 + 2], boxes[q * 4 + 3]};
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const Box& t = gt.boxes[g];
      const double l1 = std::fabs(pred.cx - t.cx) + std::fabs(pred.cy - t.cy) + std::fabs(pred.w - t.w) +
                        std::fabs(pred.h - t.h);
      cost[q * gt.size() + g] = -w.cls * probs[q * k + static_cast<std::size_t>(gt.classes[g])] + w.l1 * l1 +
                                w.giou * (1.0 - eval::giou(pred, t));
    }
  }
  return cost;
}

Tensor giou_rows(const Tensor& a, const Tensor& b) {
  auto corners = [](const Tensor& t) {
    const Tensor cx = ag::slice_cols(t, 0, 1), cy = ag::slice_cols(t, 1, 2);
    const Tensor hw = ag::scale(ag::slice_cols(t, 2, 3), 0.5), hh = ag::scale(ag::slice_cols(t, 3, 4), 0.5);
    return std::array<Tensor, 4>{ag::sub(cx, hw), ag::sub(cy, hh), ag::add(cx, hw), ag::add(cy, hh)};
  };
  const auto [ax0, ay0, ax1, ay1] = corners(a);
  const auto [bx0, by0, bx1, by1] = corners(b);
  const Tensor area_a = ag::mul(ag::sub(ax1, ax0), ag::sub(ay1, ay0));
  const Tensor area_b = ag::mul(ag::sub(bx1, bx0), ag::sub(by1, by0));
  const Tensor iw = ag::relu(ag::sub(ag::minimum(ax1, bx1), ag::maximum(ax0, bx0)));
  const Tensor ih = ag::relu(ag::sub(ag::minimum(ay1, by1), ag::maximum(ay0, by0)));
  const Tensor inter = ag::mul(iw, ih);
  const Tensor uni = ag::sub(ag::add(area_a, area_b), inter);
  const Tensor hull = ag::mul(ag::sub(ag::maximum(ax1, bx1), ag::minimum(ax0, bx0)),
                              ag::sub(ag::maximum(ay1, by1), ag::minimum(ay0, by0)));
  return ag::sub(ag::div(inter, uni), ag::div(ag::sub(hull, uni), hull));
}

DetectionLoss detection_loss(const HeadOutput& heads, const BoxSet& gt, const DetLossWeights& w) {
  if (!heads.class_logits.defined() || heads.class_logits.rows() == 0) {
    throw ContractError("detection_loss: empty prediction set");
  }
  if (gt.classes.size() != gt.boxes.size()) throw ContractError("detection_loss: malformed ground truth");
  const std::size_t n = heads.class_logits.rows(), k = heads.class_logits.cols();
  const std::size_t background = k - 1;
  for (int c : gt.classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= background) throw ContractError("detection_loss: class id out of range");
  }

  DetectionLoss out;
  const auto cost = matching_cost(heads, gt, w);
  out.matches = hungarian_match(cost, n, gt.size());

  std::vector<std::size_t> targets(n, background);
  for (const auto& m : out.matches) targets[m.query] = static_cast<std::size_t>(gt.classes[m.gt]);
  std::vector<double> class_weights(k, 1.0);
  class_weights[background] = w.no_object;
  out.classification = ag::cross_entropy(heads.class_logits, targets, class_weights);

  if (out.matches.empty()) {
    out.l1 = Tensor::scalar(0.0);
    out.giou = Tensor::scalar(0.0);
    out.total = ag::scale(out.classification, w.cls);
    return out;
  }

  std::vector<std::size_t> query_rows;
  std::vector<double> target_boxes;
  for (const auto& m : out.matches) {
    query_rows.push_back(m.query);
    const Box& b = gt.boxes[m.gt];
    target_boxes.insert(target_boxes.end(), {b.cx, b.cy, b.w, b.h});
  }
  const double num_boxes = static_cast<double>(out.matches.size());
  const Tensor pred = ag::gather_rows(heads.boxes, query_rows);
  const Tensor target = Tensor::constant({query_rows.size(), 4}, std::move(target_boxes));
  out.l1 = ag::scale(ag::sum(ag::abs(ag::sub(pred, target))), 1.0 / num_boxes);
  out.giou = ag::scale(ag::sum(ag::add_scalar(ag::scale(giou_rows(pred, target), -1.0), 1.0)), 1.0 / num_boxes);
  out.total = ag::add(ag::add(ag::scale(out.classification, w.cls), ag::scale(out.l1, w.l1)), ag::scale(out.giou, w.giou));
  return out;
}

}  // namespace mtm::det
