#include "mtm/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtm/errors.hpp"

namespace mtm::det {

// Shortest augmenting path with potentials (Kuhn-Munkres), O(n^2 m) for n gt rows
// and m query columns. Indices are 1-based internally; column 0 is a sentinel.
std::vector<Assignment> hungarian_match(std::span<const double> cost, std::size_t n_queries, std::size_t n_gt) {
  if (cost.size() != n_queries * n_gt) throw ShapeError("hungarian_match: cost size does not match dimensions");
  if (n_gt > n_queries) {
    throw ContractError("hungarian_match: " + std::to_string(n_gt) + " ground-truth boxes exceed " +
                        std::to_string(n_queries) + " queries");
  }
  for (double c : cost) {
    if (!std::isfinite(c)) throw NumericError("hungarian_match: non-finite cost");
  }
  if (n_gt == 0) return {};

  const std::size_t n = n_gt, m = n_queries;
  const double inf = std::numeric_limits<double>::infinity();
  auto a = [&](std::size_t row, std::size_t col) { return cost[(col - 1) * n_gt + (row - 1)]; };

  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<Assignment> out;
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) out.push_back({j - 1, owner[j] - 1});
  }
  return out;
}

double assignment_cost(std::span<const double> cost, std::size_t n_gt, std::span<const Assignment> matches) {
  double total = 0.0;
  for (const auto& a : matches) total += cost[a.query * n_gt + a.gt];
  return total;
}

}  // namespace mtm::det
