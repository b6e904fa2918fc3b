#pragma once

// Quantities from the multi-source target-error bound: empirical alpha-weighted
// error, a proxy for the H-divergence between feature distributions, and the
// sample-complexity radical.
//
// The divergence proxy is the proxy-A-distance, 2 (1 - 2 err), of a freshly
// trained domain classifier. It estimates d_H rather than the symmetric-
// difference divergence d_{H delta H} that appears in the bound, so reported
// values are trend indicators, not certified bounds.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace mtm::eval {

struct FeatureSet {
  std::size_t dim = 0;
  std::vector<double> values;  // row-major [n x dim]
  std::size_t count() const { return dim ? values.size() / dim : 0; }
};

struct HdivOptions {
  std::uint64_t seed = 0;
  std::size_t steps = 300;
  double learning_rate = 1e-2;
};

struct HdivResult {
  double proxy = 0.0;
  double holdout_error = 0.5;
  std::size_t classifier_parameters = 0;
};

/// Splits each side into fit/holdout halves, trains a discriminator with the
/// alignment architecture on the fit halves and returns clamp(2 (1 - 2 err), 0, 2).
/// Requires at least 20 samples per side.
HdivResult hdiv_proxy(const FeatureSet& a, const FeatureSet& b, const HdivOptions& options = {});

// clamp(2 (1 - 2 err), 0, 2)
double proxy_from_error(double holdout_error);

// sum_j alpha_j^2 / beta_j
double weight_ratio(std::span<const double> alpha, std::span<const double> beta);

// sqrt(weight_ratio * (d ln(2m) - ln delta) / (2m))
double complexity_term(std::span<const double> alpha, std::span<const double> beta, double m, double d_vc,
                       double delta);

struct BoundReport {
  double eps_alpha_hat = 0.0;
  double div_proxy = 0.0;
  double gamma_proxy = 0.0;
  double complexity = 0.0;
  std::array<double, 2> alpha{0.5, 0.5};
  std::array<double, 2> beta{0.5, 0.5};
  double m = 0.0;
  double d_vc = 0.0;
  double delta = 0.05;

  // eps_alpha_hat + div_proxy / 2 + gamma_proxy + complexity
  double total() const { return eps_alpha_hat + 0.5 * div_proxy + gamma_proxy + complexity; }
};

/// Throws ContractError unless alpha and beta are non-negative and sum to 1,
/// m > 0 and delta in (0, 1).
BoundReport bound_terms(std::span<const double> source_errs, std::span<const double> target_like_errs,
                        std::array<double, 2> alpha, std::array<double, 2> beta, double m, double d_vc, double delta,
                        double div_proxy = 0.0, double gamma_proxy = 0.0);

}  // namespace mtm::eval
