#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace mtm {

// Normalized (cx, cy, w, h) box.
struct Box {
  double cx = 0.5, cy = 0.5, w = 0.0, h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double x1() const { return cx + 0.5 * w; }
  double y1() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }

  bool operator==(const Box&) const = default;
};

/// Annotations or predictions for one image. `scores` is empty for ground truth.
struct BoxSet {
  std::vector<Box> boxes;
  std::vector<int> classes;
  std::vector<double> scores;

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
  void push_back(const Box& b, int cls) {
    boxes.push_back(b);
    classes.push_back(cls);
  }
  void push_back(const Box& b, int cls, double score) {
    push_back(b, cls);
    scores.push_back(score);
  }

  // Throws ContractError on unequal lengths, non-positive sizes or coordinates outside [0, 1].
  void validate() const;

  bool operator==(const BoxSet&) const = default;
};

// Mirror horizontally: cx -> 1 - cx.
BoxSet flip_horizontal(const BoxSet& set);

}  // namespace mtm
