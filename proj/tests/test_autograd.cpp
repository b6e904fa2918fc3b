#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "mtm/autograd.hpp"
#include "mtm/errors.hpp"
#include "mtm/rng.hpp"

using namespace mtm;
using ag::Tensor;

namespace {

Tensor random_param(ag::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ag::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor probe(const Tensor& t) {
  std::vector<double> w(t.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.3 * static_cast<double>(i) + 0.7);
  return ag::sum(ag::mul(t, Tensor::constant(t.shape(), w)));
}

void expect_grad(std::vector<ag::NamedTensor> params, const std::function<Tensor()>& fn) {
  const auto r = gradcheck::run(std::move(params), fn);
  INFO("worst tensor: " << r.worst_name << " err " << r.worst);
  CHECK(r.worst < 1e-6);
}

}  // namespace

TEST_CASE("matmul forward matches a hand product") {
  const Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::constant({3, 2}, {7, 8, 9, 10, 11, 12});
  const Tensor c = ag::matmul(a, b);
  CHECK(c.shape() == ag::Shape{2, 2});
  CHECK(c.at(0, 0) == 58);
  CHECK(c.at(0, 1) == 64);
  CHECK(c.at(1, 0) == 139);
  CHECK(c.at(1, 1) == 154);
  CHECK_THROWS_AS(ag::matmul(a, a), ShapeError);
}

TEST_CASE("gradients of linear algebra ops") {
  Rng rng(1);
  Tensor a = random_param({3, 4}, rng), b = random_param({4, 2}, rng), c = random_param({5, 4}, rng);
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::matmul(a, b)); });
  expect_grad({{"a", a}, {"c", c}}, [&] { return probe(ag::matmul_nt(a, c)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::transpose(a)); });
}

TEST_CASE("gradients of elementwise ops") {
  Rng rng(2);
  Tensor a = random_param({3, 4}, rng), b = random_param({3, 4}, rng, 0.5, 2.0), row = random_param({1, 4}, rng);
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::add(a, b)); });
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::sub(a, b)); });
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::mul(a, b)); });
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::div(a, b)); });
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::minimum(a, b)); });
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::maximum(a, b)); });
  expect_grad({{"a", a}, {"row", row}}, [&] { return probe(ag::add_row(a, row)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::scale(a, -2.5)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::add_scalar(a, 3.0)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::relu(a)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::sigmoid(a)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::abs(a)); });
}

TEST_CASE("gradients of structural ops") {
  Rng rng(3);
  Tensor a = random_param({3, 4}, rng), b = random_param({2, 4}, rng), c = random_param({3, 2}, rng);
  expect_grad({{"a", a}, {"b", b}}, [&] { return probe(ag::concat({a, b}, 0)); });
  expect_grad({{"a", a}, {"c", c}}, [&] { return probe(ag::concat({a, c}, 1)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::slice_rows(a, 1, 3)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::slice_cols(a, 1, 4)); });
  const std::vector<std::size_t> rows{2, 0, 2};
  expect_grad({{"a", a}}, [&] { return probe(ag::gather_rows(a, rows)); });
}

TEST_CASE("gradients of reductions, softmax and layer norm") {
  Rng rng(4);
  Tensor a = random_param({3, 5}, rng, -2, 2), gain = random_param({1, 5}, rng), bias = random_param({1, 5}, rng);
  expect_grad({{"a", a}}, [&] { return ag::scale(ag::sum(ag::mul(a, a)), 0.5); });
  expect_grad({{"a", a}}, [&] { return probe(ag::mean(a)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::softmax(a, 1)); });
  expect_grad({{"a", a}}, [&] { return probe(ag::softmax(a, 0)); });
  expect_grad({{"a", a}, {"gain", gain}, {"bias", bias}}, [&] { return probe(ag::layer_norm(a, gain, bias)); });
}

TEST_CASE("gradients of losses and gradient reversal") {
  Rng rng(5);
  Tensor logits = random_param({4, 3}, rng, -3, 3);
  const std::vector<std::size_t> targets{0, 2, 1, 2};
  const std::vector<double> weights{1.0, 1.0, 0.1};
  expect_grad({{"logits", logits}}, [&] { return ag::bce_with_logits(logits, 1.0); });
  expect_grad({{"logits", logits}}, [&] { return ag::bce_with_logits(logits, 0.0); });
  expect_grad({{"logits", logits}}, [&] { return ag::cross_entropy(logits, targets, weights); });
}

TEST_CASE("softmax rows sum to one and reject non-finite input") {
  const Tensor a = Tensor::constant({2, 3}, {1000, 0, -1000, 1, 2, 3});
  const Tensor s = ag::softmax(a, 1);
  for (std::size_t r = 0; r < 2; ++r) CHECK(s.at(r, 0) + s.at(r, 1) + s.at(r, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(ag::softmax(Tensor::constant({1, 2}, {NAN, 0}), 1), NumericError);
}

TEST_CASE("layer norm rejects zero-length rows") {
  const Tensor x = Tensor::constant({2, 0}, {});
  CHECK_THROWS_AS(ag::layer_norm(x, Tensor::constant({1, 0}, {}), Tensor::constant({1, 0}, {})), ShapeError);
}

TEST_CASE("bce with logits matches the direct formula and stays finite") {
  const Tensor z = Tensor::constant({1, 3}, {-2.0, 0.0, 3.0});
  double expect = 0.0;
  for (double v : {-2.0, 0.0, 3.0}) expect += -std::log(1.0 / (1.0 + std::exp(-v)));
  CHECK(ag::bce_with_logits(z, 1.0).item() == doctest::Approx(expect / 3).epsilon(1e-14));
  CHECK(std::isfinite(ag::bce_with_logits(Tensor::constant({1, 1}, {800.0}), 0.0).item()));
}

TEST_CASE("gradient reversal flips and scales the gradient") {
  Tensor x = Tensor::parameter({1, 3}, {1, 2, 3});
  for (double coef : {0.0, 0.5, 1.0, 2.0}) {
    x.zero_grad();
    const Tensor y = ag::grad_reverse(x, coef);
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{1, 2, 3});
    probe(y).backward();
    Tensor ref = Tensor::parameter({1, 3}, {1, 2, 3});
    probe(ref).backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(-coef * ref.grad()[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward accumulates into leaves and resets interior nodes") {
  Tensor w = Tensor::parameter({1, 2}, {1.0, 2.0});
  const Tensor y = ag::sum(ag::mul(w, w));
  y.backward();
  y.backward();
  CHECK(w.grad()[0] == doctest::Approx(4.0));
  CHECK(w.grad()[1] == doctest::Approx(8.0));
  CHECK_THROWS_AS(ag::mul(w, w).backward(), ContractError);
}

TEST_CASE("no-grad guard records no graph") {
  Tensor w = Tensor::parameter({1, 2}, {1.0, 2.0});
  Tensor y;
  {
    ag::NoGradGuard guard;
    y = ag::sum(ag::mul(w, w));
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(ag::grad_enabled());
}

TEST_CASE("detach and clone copy values without history") {
  Tensor w = Tensor::parameter({1, 2}, {1.0, 2.0});
  const Tensor d = ag::scale(w, 2.0).detach();
  CHECK_FALSE(d.requires_grad());
  Tensor c = w.clone();
  c.mutable_data()[0] = 9.0;
  CHECK(w.data()[0] == 1.0);
  CHECK(c.requires_grad());
}
