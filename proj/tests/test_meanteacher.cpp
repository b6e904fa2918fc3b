#include "doctest.h"

#include <cmath>

#include "mtm/errors.hpp"
#include "mtm/meanteacher.hpp"
#include "mtm/rng.hpp"

using namespace mtm;
using ag::Tensor;

namespace {

det::ModelConfig toy_config() {
  det::ModelConfig c;
  c.embed_dim = 16;
  c.object_queries = 4;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.heads = 2;
  c.ffn_dim = 16;
  c.image_size = 16;
  return c;
}

Image random_image(std::size_t size, Rng& rng) {
  Image im(size, size);
  for (double& v : im.pixels) v = rng.uniform();
  return im;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor named(det::Detector& model, const std::string& name) {
  for (auto& p : model.parameters()) {
    if (p.name == name) return p.tensor;
  }
  FAIL("no parameter " << name);
  return {};
}

}  // namespace

TEST_CASE("k-step EMA against a constant student has the closed form") {
  Rng rng(1);
  for (double m : {0.0, 0.9, 0.999, 1.0}) {
    std::vector<double> t0(12), s(12);
    for (double& v : t0) v = rng.uniform(-1, 1);
    for (double& v : s) v = rng.uniform(-1, 1);
    std::vector<ag::NamedTensor> teacher{{"w", Tensor::parameter({3, 4}, t0)}};
    const std::vector<ag::NamedTensor> student{{"w", Tensor::parameter({3, 4}, s)}};
    const int k = 50;
    for (int i = 0; i < k; ++i) mt::ema_update(teacher, student, m);
    const auto t = teacher[0].tensor.data();
    double worst = 0.0;
    for (std::size_t i = 0; i < 12; ++i) worst = std::max(worst, std::fabs(t[i] - (s[i] + std::pow(m, k) * (t0[i] - s[i]))));
    INFO("m = " << m);
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("EMA rejects mismatched parameter lists") {
  std::vector<ag::NamedTensor> a{{"w", Tensor::zeros({2})}};
  const std::vector<ag::NamedTensor> b{{"v", Tensor::zeros({2})}}, c{{"w", Tensor::zeros({3})}};
  CHECK_THROWS_AS(mt::ema_update(a, b, 0.9), ContractError);
  CHECK_THROWS_AS(mt::ema_update(a, c, 0.9), ContractError);
  CHECK_THROWS_AS(mt::ema_update(a, a, 1.5), ContractError);
  CHECK_THROWS_AS(mt::ema_update(a, {}, 0.9), ContractError);
}

TEST_CASE("EMA over detector parameters moves every tensor") {
  det::Detector teacher(toy_config(), 1), student(toy_config(), 2);
  auto tp = teacher.parameters();
  const auto sp = student.parameters();
  const auto before = values(tp[0].tensor);
  mt::ema_update(tp, sp, 0.5);
  const auto after = values(tp[0].tensor);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(after[i] == doctest::Approx(0.5 * before[i] + 0.5 * sp[0].tensor.data()[i]));
  }
}

TEST_CASE("alpha schedule endpoints") {
  mt::OqktSchedule s{.total_epochs = 10};
  s.current_epoch = 0;
  CHECK(mt::alpha_step(s) == 1.0);
  s.current_epoch = 10;
  CHECK(mt::alpha_step(s) == 0.0);
  CHECK(s.alpha == 0.0);
  s.current_epoch = 5;
  CHECK(mt::alpha_step(s) == 0.5);
  s.current_epoch = 11;
  CHECK_THROWS_AS(mt::alpha_step(s), ContractError);
  mt::OqktSchedule empty{.total_epochs = 0};
  CHECK_THROWS_AS(mt::alpha_step(empty), ContractError);
}

TEST_CASE("alpha = 0 gives bit-identical outputs to the plain student") {
  det::Detector student(toy_config(), 3);
  det::Detector teacher(toy_config(), 4);
  mt::Oqkt oqkt(16, 4, 8, 5);
  for (double& w : oqkt.attention().out_proj.weight.mutable_data()) w = 0.3;
  Rng rng(6);
  const Image im = random_image(16, rng);
  const auto s = mt::queries_of(student, mt::Owner::Student), t = mt::queries_of(teacher, mt::Owner::Teacher);
  const Tensor qe0 = oqkt.enhance(s, t, 0.0);
  const auto plain = student.forward(im), enhanced = student.forward(im, &qe0);
  CHECK(values(plain.heads.class_logits) == values(enhanced.heads.class_logits));
  CHECK(values(plain.heads.boxes) == values(enhanced.heads.boxes));
  const Tensor qe1 = oqkt.enhance(s, t, 1.0);
  CHECK(values(qe1) != values(student.query_embed()));
}

TEST_CASE("fresh OQKT is the identity at any alpha") {
  det::Detector student(toy_config(), 3), teacher(toy_config(), 4);
  mt::Oqkt oqkt(16, 4, 8, 5);
  const Tensor qe = oqkt.enhance(mt::queries_of(student, mt::Owner::Student),
                                 mt::queries_of(teacher, mt::Owner::Teacher), 1.0);
  CHECK(values(qe) == values(student.query_embed()));
}

TEST_CASE("OQKT gradients reach the student and its own weights, never the teacher") {
  det::Detector student(toy_config(), 3), teacher(toy_config(), 4);
  mt::Oqkt oqkt(16, 4, 8, 5);
  for (double& w : oqkt.attention().out_proj.weight.mutable_data()) w = 0.1;
  Rng rng(7);
  const Tensor qe = oqkt.enhance(mt::queries_of(student, mt::Owner::Student),
                                 mt::queries_of(teacher, mt::Owner::Teacher), 0.7);
  ag::sum(ag::mul(qe, qe)).backward();
  CHECK(student.query_embed().has_grad());
  CHECK(oqkt.attention().q_proj.weight.has_grad());
  for (auto& p : teacher.parameters()) CHECK_FALSE(p.tensor.has_grad());
}

TEST_CASE("OQKT attention rows are distributions over teacher queries") {
  det::Detector student(toy_config(), 3), teacher(toy_config(), 4);
  mt::Oqkt oqkt(16, 4, 8, 5);
  std::vector<Tensor> attn;
  oqkt.enhance(mt::queries_of(student, mt::Owner::Student), mt::queries_of(teacher, mt::Owner::Teacher), 1.0, &attn);
  REQUIRE(attn.size() == 4);
  for (const auto& a : attn) {
    CHECK(a.rows() == 4);
    CHECK(a.cols() == 4);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += a.data()[r * 4 + c];
      CHECK(s == doctest::Approx(1.0));
    }
  }
  const auto s = mt::queries_of(student, mt::Owner::Student);
  CHECK_THROWS_AS(oqkt.enhance(s, s, 1.0), ContractError);
  mt::QuerySet small{Tensor::zeros({2, 16}), Tensor::zeros({2, 16}), mt::Owner::Teacher};
  CHECK_THROWS_AS(oqkt.enhance(s, small, 1.0), ContractError);
}

TEST_CASE("pseudo labels keep confident object queries only") {
  det::Detector teacher(toy_config(), 8);
  for (auto& p : teacher.parameters()) {
    if (p.name.rfind("head.class", 0) == 0) {
      auto d = p.tensor.mutable_data();
      std::fill(d.begin(), d.end(), 0.0);
    }
  }
  auto bias = named(teacher, "head.class.bias").mutable_data();
  bias[1] = 2.0;  // p(class 1) = e^2 / (e^2 + 3) ~ 0.711
  Rng rng(9);
  const Image im = random_image(16, rng);
  const auto kept = mt::generate_pseudo_labels(teacher, im, 0.5, 42);
  CHECK(kept.image_id == 42);
  REQUIRE(kept.labels.size() == 4);
  for (int c : kept.labels.classes) CHECK(c == 1);
  for (double s : kept.labels.scores) CHECK(s == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 3.0)));
  CHECK(mt::generate_pseudo_labels(teacher, im, 0.8).labels.empty());

  bias[1] = 0.0;
  bias[3] = 5.0;  // background wins
  CHECK(mt::generate_pseudo_labels(teacher, im, 0.0).labels.empty());
  for (auto& p : teacher.parameters()) CHECK_FALSE(p.tensor.has_grad());
}

TEST_CASE("augmentations") {
  Rng rng(10);
  const Image im = random_image(16, rng);
  const Image twice = mt::flip_horizontal(mt::flip_horizontal(im));
  CHECK(twice.pixels == im.pixels);
  const Image f = mt::flip_horizontal(im);
  CHECK(f.at(3, 0, 1) == im.at(3, 15, 1));

  int flips = 0;
  for (int i = 0; i < 200; ++i) {
    const auto weak = mt::augment(im, mt::Strength::Weak, rng);
    CHECK(weak.image.pixels == (weak.flipped ? f.pixels : im.pixels));
    flips += weak.flipped;
    const auto strong = mt::augment(im, mt::Strength::Strong, rng);
    for (double v : strong.image.pixels) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
  CHECK(flips > 70);
  CHECK(flips < 130);

  Rng a(11), b(11);
  CHECK(mt::augment(im, mt::Strength::Strong, a).image.pixels == mt::augment(im, mt::Strength::Strong, b).image.pixels);
}

TEST_CASE("boxes map between flipped and plain views") {
  BoxSet boxes;
  boxes.push_back({0.2, 0.3, 0.1, 0.2}, 1, 0.9);
  const BoxSet same = mt::map_between_views(boxes, true, true);
  CHECK(same.boxes[0].cx == 0.2);
  const BoxSet moved = mt::map_between_views(boxes, false, true);
  CHECK(moved.boxes[0].cx == doctest::Approx(0.8));
  CHECK(moved.boxes[0].cy == 0.3);
  CHECK(moved.scores == boxes.scores);
  CHECK(mt::map_between_views(moved, true, false).boxes[0].cx == doctest::Approx(0.2));
}
