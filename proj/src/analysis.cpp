#include "mtm/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "mtm/alignment.hpp"
#include "mtm/autograd.hpp"
#include "mtm/errors.hpp"
#include "mtm/nn.hpp"
#include "mtm/optim.hpp"

namespace mtm::eval {

double proxy_from_error(double holdout_error) { return std::clamp(2.0 * (1.0 - 2.0 * holdout_error), 0.0, 2.0); }

HdivResult hdiv_proxy(const FeatureSet& a, const FeatureSet& b, const HdivOptions& options) {
  if (a.dim != b.dim || a.dim == 0) throw ContractError("hdiv_proxy: feature dimensions differ");
  if (a.count() < 20 || b.count() < 20) throw ContractError("hdiv_proxy: need at least 20 samples per side");
  const std::size_t d = a.dim;
  Rng rng(options.seed);

  auto split = [&](const FeatureSet& f) {
    std::vector<std::size_t> order(f.count());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span(order));
    const std::size_t half = order.size() / 2;
    return std::pair(std::vector<std::size_t>(order.begin(), order.begin() + half),
                     std::vector<std::size_t>(order.begin() + half, order.end()));
  };
  const auto [fit_a, hold_a] = split(a);
  const auto [fit_b, hold_b] = split(b);

  // Standardize with fit-half statistics.
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  const double n_fit = static_cast<double>(fit_a.size() + fit_b.size());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i : fit_a) mu[j] += a.values[i * d + j];
    for (std::size_t i : fit_b) mu[j] += b.values[i * d + j];
    mu[j] /= n_fit;
    for (std::size_t i : fit_a) sd[j] += std::pow(a.values[i * d + j] - mu[j], 2);
    for (std::size_t i : fit_b) sd[j] += std::pow(b.values[i * d + j] - mu[j], 2);
    sd[j] = std::sqrt(sd[j] / n_fit) + 1e-8;
  }
  auto gather = [&](const FeatureSet& f, const std::vector<std::size_t>& rows) {
    std::vector<double> out(rows.size() * d);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (f.values[rows[r] * d + j] - mu[j]) / sd[j];
    return ag::Tensor::constant({rows.size(), d}, std::move(out));
  };
  const ag::Tensor xa = gather(a, fit_a), xb = gather(b, fit_b);
  const ag::Tensor ha = gather(a, hold_a), hb = gather(b, hold_b);

  if (d < 4) throw ContractError("hdiv_proxy: features need at least 4 dimensions");
  Rng init = rng.split(7);
  align::Discriminator disc(d, init);
  HdivResult result;
  result.classifier_parameters = disc.parameter_count();
  ag::Adam opt(nn::named_parameters(disc, "hdiv"), {options.learning_rate, 0.9, 0.999, 1e-8});
  for (std::size_t step = 0; step < options.steps; ++step) {
    const ag::Tensor loss = ag::add(ag::bce_with_logits(disc(xa), 0.0), ag::bce_with_logits(disc(xb), 1.0));
    loss.backward();
    opt.step();
  }

  ag::NoGradGuard no_grad;
  auto error_rate = [&](const ag::Tensor& x, double label) {
    std::size_t wrong = 0;
    for (double logit : disc(x).data()) wrong += ((logit > 0.0 ? 1.0 : 0.0) != label) ? 1 : 0;
    return static_cast<double>(wrong) / static_cast<double>(x.rows());
  };
  result.holdout_error = 0.5 * (error_rate(ha, 0.0) + error_rate(hb, 1.0));
  result.proxy = proxy_from_error(result.holdout_error);
  return result;
}

namespace {

void require_simplex(std::span<const double> w, const char* name) {
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0)) throw ContractError(std::string("bound: ") + name + " has a negative entry");
    total += v;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ContractError(std::string("bound: ") + name + " must sum to 1");
}

double mean_of(std::span<const double> v) {
  if (v.empty()) throw ContractError("bound: empty error sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double weight_ratio(std::span<const double> alpha, std::span<const double> beta) {
  if (alpha.size() != beta.size()) throw ContractError("bound: alpha and beta lengths differ");
  require_simplex(alpha, "alpha");
  require_simplex(beta, "beta");
  double total = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    if (beta[j] <= 0.0) {
      if (alpha[j] > 0.0) return std::numeric_limits<double>::infinity();
      continue;
    }
    total += alpha[j] * alpha[j] / beta[j];
  }
  return total;
}

double complexity_term(std::span<const double> alpha, std::span<const double> beta, double m, double d_vc,
                       double delta) {
  if (!(m > 0.0)) throw ContractError("bound: m must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ContractError("bound: delta must lie in (0, 1)");
  const double radicand = weight_ratio(alpha, beta) * (d_vc * std::log(2.0 * m) - std::log(delta)) / (2.0 * m);
  return std::sqrt(std::max(radicand, 0.0));
}

BoundReport bound_terms(std::span<const double> source_errs, std::span<const double> target_like_errs,
                        std::array<double, 2> alpha, std::array<double, 2> beta, double m, double d_vc, double delta,
                        double div_proxy, double gamma_proxy) {
  BoundReport r;
  r.alpha = alpha;
  r.beta = beta;
  r.m = m;
  r.d_vc = d_vc;
  r.delta = delta;
  r.complexity = complexity_term(alpha, beta, m, d_vc, delta);
  r.eps_alpha_hat = alpha[0] * mean_of(source_errs) + alpha[1] * mean_of(target_like_errs);
  r.div_proxy = std::clamp(div_proxy, 0.0, 2.0);
  r.gamma_proxy = gamma_proxy;
  return r;
}

}  // namespace mtm::eval
