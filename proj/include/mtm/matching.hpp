#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mtm::det {

struct Assignment {
  std::size_t query;
  std::size_t gt;
  bool operator==(const Assignment&) const = default;
};

/// Minimum-cost assignment of a distinct query to every ground-truth box.
/// `cost` is row-major [n_queries x n_gt]; requires n_gt <= n_queries and finite
/// entries. Result is sorted by query index. Among equal-cost alternatives the
/// lowest query index wins at each augmentation step.
std::vector<Assignment> hungarian_match(std::span<const double> cost, std::size_t n_queries, std::size_t n_gt);

double assignment_cost(std::span<const double> cost, std::size_t n_gt, std::span<const Assignment> matches);

}  // namespace mtm::det
