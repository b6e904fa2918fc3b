#include "doctest.h"

#include <cmath>

#include "mtm/analysis.hpp"
#include "mtm/errors.hpp"
#include "mtm/rng.hpp"

using namespace mtm;
using namespace mtm::eval;

namespace {

FeatureSet gaussian(std::size_t n, std::size_t dim, double shift, Rng& rng) {
  FeatureSet f{dim, {}};
  for (std::size_t i = 0; i < n * dim; ++i) f.values.push_back(rng.normal() + (i % dim == 0 ? shift : 0.0));
  return f;
}

}  // namespace

TEST_CASE("weight ratio is 1 at alpha = beta = (0.5, 0.5)") {
  const double a[] = {0.5, 0.5};
  CHECK(weight_ratio(a, a) == 1.0);
}

TEST_CASE("complexity grid search bottoms out at alpha = beta") {
  const double beta[] = {0.5, 0.5};
  double best = INFINITY, best_alpha = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double a1 = i / 100.0;
    const double alpha[] = {a1, 1.0 - a1};
    const double c = complexity_term(alpha, beta, 800, 673, 0.05);
    if (c < best) {
      best = c;
      best_alpha = a1;
    }
  }
  CHECK(best_alpha == doctest::Approx(0.5));
}

TEST_CASE("weight ratio >= 1 on the simplex grid with equality only on the diagonal") {
  std::size_t violations = 0;
  for (int i = 0; i <= 100; ++i) {
    for (int j = 1; j < 100; ++j) {
      const double alpha[] = {i / 100.0, 1.0 - i / 100.0};
      const double beta[] = {j / 100.0, 1.0 - j / 100.0};
      const double r = weight_ratio(alpha, beta);
      if (i == j) {
        violations += std::fabs(r - 1.0) > 1e-12;
      } else {
        violations += !(r > 1.0);
      }
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("complexity term values") {
  const double alpha[] = {0.3, 0.7}, beta[] = {0.4, 0.6};
  const double ratio = 0.09 / 0.4 + 0.49 / 0.6;
  CHECK(complexity_term(alpha, beta, 1000, 50, 0.1) ==
        doctest::Approx(std::sqrt(ratio * (50 * std::log(2000.0) - std::log(0.1)) / 2000.0)).epsilon(1e-12));
  const double near_one = complexity_term(alpha, beta, 1000, 50, 1.0 - 1e-12);
  CHECK(near_one == doctest::Approx(std::sqrt(50 * std::log(2000.0) / 2000.0) * std::sqrt(ratio)).epsilon(1e-9));
  CHECK(complexity_term(alpha, beta, 1000, 50, 0.05) >= 0.0);
}

TEST_CASE("bound terms assemble the report") {
  const double s[] = {0.1, 0.3}, t[] = {0.5, 0.7, 0.9};
  const auto r = bound_terms(s, t, {0.25, 0.75}, {0.5, 0.5}, 400, 100, 0.05, 0.8, 0.2);
  CHECK(r.eps_alpha_hat == doctest::Approx(0.25 * 0.2 + 0.75 * 0.7));
  CHECK(r.div_proxy == 0.8);
  CHECK(r.gamma_proxy == 0.2);
  CHECK(r.total() == doctest::Approx(r.eps_alpha_hat + 0.4 + 0.2 + r.complexity));
  const double a[] = {0.25, 0.75}, b[] = {0.5, 0.5};
  CHECK(r.complexity == doctest::Approx(complexity_term(a, b, 400, 100, 0.05)));

  CHECK_THROWS_AS(bound_terms(s, t, {0.6, 0.6}, {0.5, 0.5}, 400, 100, 0.05), ContractError);
  CHECK_THROWS_AS(bound_terms(s, t, {0.5, 0.5}, {-0.5, 1.5}, 400, 100, 0.05), ContractError);
  CHECK_THROWS_AS(bound_terms(s, t, {0.5, 0.5}, {0.5, 0.5}, 0, 100, 0.05), ContractError);
  CHECK_THROWS_AS(bound_terms(s, t, {0.5, 0.5}, {0.5, 0.5}, 400, 100, 1.0), ContractError);
}

TEST_CASE("proxy clamps") {
  CHECK(proxy_from_error(0.6) == 0.0);
  CHECK(proxy_from_error(0.0) == 2.0);
  CHECK(proxy_from_error(0.25) == 1.0);
}

TEST_CASE("hdiv proxy: same distribution is small, far clusters are large") {
  double same = 0.0;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    Rng a(100 + rep), b(200 + rep);
    same += hdiv_proxy(gaussian(100, 8, 0.0, a), gaussian(100, 8, 0.0, b), {.seed = rep}).proxy;
  }
  CHECK(same / 5.0 < 0.3);
  double far = 0.0;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    Rng a(300 + rep), b(400 + rep);
    far += hdiv_proxy(gaussian(100, 8, 0.0, a), gaussian(100, 8, 10.0, b), {.seed = rep}).proxy;
  }
  CHECK(far / 5.0 > 1.8);
}

TEST_CASE("hdiv proxy contract") {
  Rng rng(1);
  CHECK_THROWS_AS(hdiv_proxy(gaussian(19, 8, 0, rng), gaussian(50, 8, 0, rng)), ContractError);
  CHECK_THROWS_AS(hdiv_proxy(gaussian(50, 8, 0, rng), gaussian(50, 6, 0, rng)), ContractError);
  CHECK_THROWS_AS(hdiv_proxy(gaussian(50, 3, 0, rng), gaussian(50, 3, 0, rng)), ContractError);
  const auto r = hdiv_proxy(gaussian(40, 8, 0, rng), gaussian(40, 8, 1, rng), {.seed = 3});
  CHECK(r.proxy >= 0.0);
  CHECK(r.proxy <= 2.0);
  CHECK(r.classifier_parameters == 8 * 4 + 4 + 4 * 2 + 2 + 2 + 1);
  const auto again = hdiv_proxy(gaussian(40, 8, 0, rng), gaussian(40, 8, 1, rng), {.seed = 3});
  CHECK(again.classifier_parameters == r.classifier_parameters);
}
