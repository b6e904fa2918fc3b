#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "mtm/autograd.hpp"
#include "mtm/data.hpp"
#include "mtm/errors.hpp"
#include "mtm/nn.hpp"
#include "mtm/optim.hpp"

using namespace mtm;
using namespace mtm::data;

namespace {

DataConfig small_config(std::uint64_t seed = 1) {
  DataConfig c;
  c.n_source = 40;
  c.n_target_train = 30;
  c.n_target_val = 20;
  c.seed = seed;
  return c;
}

double max_channel(const Image& im, std::size_t y, std::size_t x) {
  return std::max({im.at(y, x, 0), im.at(y, x, 1), im.at(y, x, 2)});
}

bool in_box(const Box& b, std::size_t y, std::size_t x, std::size_t n) {
  const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(n);
  const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(n);
  return cx > b.x0() && cx < b.x1() && cy > b.y0() && cy < b.y1();
}

}  // namespace

TEST_CASE("scenes regenerate identically") {
  const SceneConfig cfg;
  const Scene a = gen_scene(7, 3, cfg), b = gen_scene(7, 3, cfg);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.boxes.boxes.size() == b.boxes.boxes.size());
  CHECK(gen_scene(7, 4, cfg).image.pixels != a.image.pixels);
  CHECK(gen_scene(8, 3, cfg).image.pixels != a.image.pixels);
}

TEST_CASE("bright shape pixels lie inside boxes and boxes are tight, over 1000 scenes") {
  const SceneConfig cfg;
  const std::size_t n = cfg.image_size;
  std::size_t stray = 0, loose = 0, bad_count = 0, bad_box = 0;
  for (std::uint64_t id = 0; id < 1000; ++id) {
    const Scene s = gen_scene(11, id, cfg);
    const auto& boxes = s.boxes.boxes;
    bad_count += boxes.size() < 1 || boxes.size() > 6;
    for (std::size_t k = 0; k < boxes.size(); ++k) {
      const Box& b = boxes[k];
      bad_box += !(b.w > 0 && b.h > 0 && b.x0() >= 0 && b.y0() >= 0 && b.x1() <= 1 + 1e-12 && b.y1() <= 1 + 1e-12);
      bad_box += s.boxes.classes[k] < 0 || s.boxes.classes[k] > 2;
    }
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        if (max_channel(s.image, y, x) < 0.8) continue;
        stray += std::none_of(boxes.begin(), boxes.end(), [&](const Box& b) { return in_box(b, y, x, n); });
      }
    }
    // Each edge row and column of a box carries at least one shape pixel.
    for (const Box& b : boxes) {
      const auto px0 = static_cast<std::size_t>(std::lround(b.x0() * n)), px1 = static_cast<std::size_t>(std::lround(b.x1() * n)) - 1;
      const auto py0 = static_cast<std::size_t>(std::lround(b.y0() * n)), py1 = static_cast<std::size_t>(std::lround(b.y1() * n)) - 1;
      auto row_hit = [&](std::size_t y) {
        for (std::size_t x = px0; x <= px1; ++x) if (max_channel(s.image, y, x) >= 0.8) return true;
        return false;
      };
      auto col_hit = [&](std::size_t x) {
        for (std::size_t y = py0; y <= py1; ++y) if (max_channel(s.image, y, x) >= 0.8) return true;
        return false;
      };
      loose += !(row_hit(py0) && row_hit(py1) && col_hit(px0) && col_hit(px1));
    }
  }
  CHECK(stray == 0);
  CHECK(loose == 0);
  CHECK(bad_count == 0);
  CHECK(bad_box == 0);
}

TEST_CASE("background stays dark") {
  const Scene s = gen_scene(3, 0, SceneConfig{});
  std::size_t dark = 0;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) dark += max_channel(s.image, y, x) < 0.5;
  CHECK(dark > 32 * 32 / 2);
}

TEST_CASE("fog identities") {
  const Scene s = gen_scene(5, 1, SceneConfig{});
  const Scene same = fogify(s, FogParams::identity());
  CHECK(same.image.pixels == s.image.pixels);
  CHECK(same.domain == Domain::TargetLike);

  FogParams full;
  full.beta = 1.0;
  full.haze_color = {0.7, 0.6, 0.5};
  full.blur_radius = 1;
  full.contrast_scale = 0.8;
  const Scene haze = fogify(s, full, Domain::Target);
  for (std::size_t i = 0; i < haze.image.pixels.size(); ++i) CHECK(haze.image.pixels[i] == full.haze_color[i % 3]);
  CHECK(haze.domain == Domain::Target);
  CHECK(haze.boxes.boxes.size() == s.boxes.boxes.size());
  for (std::size_t k = 0; k < s.boxes.size(); ++k) {
    CHECK(haze.boxes.boxes[k].cx == s.boxes.boxes[k].cx);
    CHECK(haze.boxes.boxes[k].w == s.boxes.boxes[k].w);
    CHECK(haze.boxes.classes[k] == s.boxes.classes[k]);
  }

  FogParams bad;
  bad.beta = 1.2;
  CHECK_THROWS_AS(fogify(s, bad), ContractError);
  bad = {};
  bad.contrast_scale = 0.0;
  CHECK_THROWS_AS(fogify(s, bad), ContractError);
}

TEST_CASE("fog formula on one pixel without blur") {
  Scene s;
  s.image = Image(1, 1);
  s.image.pixels = {0.2, 0.5, 0.9};
  FogParams p;
  p.beta = 0.5;
  p.haze_color = {0.8, 0.8, 0.8};
  p.contrast_scale = 0.9;
  const Scene f = fogify(s, p);
  for (std::size_t c = 0; c < 3; ++c) CHECK(f.image.pixels[c] == doctest::Approx(0.9 * s.image.pixels[c] * 0.5 + 0.4));
}

TEST_CASE("splits: sizes, labels, disjointness") {
  const Dataset ds = build_splits(small_config());
  CHECK(ds.source.size() == 40);
  CHECK(ds.target_like.size() == 40);
  CHECK(ds.target_train.size() == 30);
  CHECK(ds.target_val.size() == 20);
  CHECK(ds.target_train_labels.size() == 30);
  for (std::size_t i = 0; i < ds.source.size(); ++i) {
    CHECK(ds.target_like[i].id == ds.source[i].id);
    CHECK(ds.target_like[i].domain == Domain::TargetLike);
    CHECK(ds.target_like[i].boxes.boxes.size() == ds.source[i].boxes.boxes.size());
  }
  std::set<std::uint64_t> ids;
  for (const auto& s : ds.source) ids.insert(s.id);
  for (const auto& s : ds.target_train) {
    CHECK(s.boxes.empty());
    CHECK(s.domain == Domain::Target);
    ids.insert(s.id);
  }
  for (const auto& s : ds.target_val) {
    CHECK(s.domain == Domain::Target);
    ids.insert(s.id);
  }
  CHECK(ids.size() == 90);
  CHECK(ds.target_train_labels.reads() == 0);
  CHECK_FALSE(ds.target_train_labels.for_evaluation(0).empty());
  CHECK(ds.target_train_labels.reads() == 1);
  CHECK_THROWS(build_splits(DataConfig{.n_source = 0}));
}

TEST_CASE("splits regenerate bit-identically and ignore the thread count") {
  setenv("MTM_THREADS", "1", 1);
  CHECK(data_threads() == 1);
  const Dataset a = build_splits(small_config(3));
  setenv("MTM_THREADS", "4", 1);
  CHECK(data_threads() == 4);
  const Dataset b = build_splits(small_config(3));
  unsetenv("MTM_THREADS");
  for (std::size_t i = 0; i < a.source.size(); ++i) {
    CHECK(a.source[i].image.pixels == b.source[i].image.pixels);
    CHECK(a.target_like[i].image.pixels == b.target_like[i].image.pixels);
  }
  for (std::size_t i = 0; i < a.target_train.size(); ++i) CHECK(a.target_train[i].image.pixels == b.target_train[i].image.pixels);
  for (std::size_t i = 0; i < a.target_val.size(); ++i) CHECK(a.target_val[i].image.pixels == b.target_val[i].image.pixels);
  const Dataset c = build_splits(small_config(4));
  CHECK(c.source[0].image.pixels != a.source[0].image.pixels);
}

TEST_CASE("batch iterator contracts") {
  const Dataset ds = build_splits(small_config());
  for (Stage stage : {Stage::Pretrain, Stage::Selftrain}) {
    BatchIterator it(ds, stage, 9);
    for (int epoch = 0; epoch < 2; ++epoch) {
      std::multiset<std::uint64_t> seen;
      std::size_t steps = 0;
      while (auto b = it.next()) {
        ++steps;
        seen.insert(b->source.scene->id);
        CHECK(b->source.domain == 0.0);
        CHECK(b->counterpart.domain == 1.0);
        if (stage == Stage::Pretrain) {
          CHECK(b->counterpart.scene->domain == Domain::TargetLike);
          CHECK(b->counterpart.boxes != nullptr);
        } else {
          CHECK(b->counterpart.scene->domain == Domain::Target);
          CHECK(b->counterpart.boxes == nullptr);
        }
      }
      CHECK(steps == 40);
      CHECK(seen.size() == 40);
      CHECK(std::set<std::uint64_t>(seen.begin(), seen.end()).size() == 40);
    }
    CHECK(it.epoch() == 2);
  }
  CHECK(ds.target_train_labels.reads() == 0);
}

TEST_CASE("a small discriminator on raw pixels separates source from target") {
  DataConfig cfg = small_config(6);
  cfg.n_source = 250;
  cfg.n_target_train = 250;
  const Dataset ds = build_splits(cfg);
  const std::size_t d = 32 * 32 * 3;
  auto stack = [&](const std::vector<Scene>& scenes, std::size_t from, std::size_t to) {
    std::vector<double> x;
    for (std::size_t i = from; i < to; ++i) x.insert(x.end(), scenes[i].image.pixels.begin(), scenes[i].image.pixels.end());
    return ag::Tensor::constant({to - from, d}, std::move(x));
  };
  const auto src_train = stack(ds.source, 0, 100), tgt_train = stack(ds.target_train, 0, 100);
  const auto src_test = stack(ds.source, 100, 250), tgt_test = stack(ds.target_train, 100, 250);
  Rng rng(6);
  nn::Linear l1(d, 16, rng), l2(16, 1, rng);
  auto disc = [&](const ag::Tensor& x) { return l2(ag::relu(l1(x))); };
  ag::Adam opt(nn::named_parameters(l1, "l1"), {.learning_rate = 1e-2});
  ag::Adam opt2(nn::named_parameters(l2, "l2"), {.learning_rate = 1e-2});
  for (int i = 0; i < 100; ++i) {
    ag::add(ag::bce_with_logits(disc(src_train), 0.0), ag::bce_with_logits(disc(tgt_train), 1.0)).backward();
    opt.step();
    opt2.step();
  }
  std::size_t correct = 0;
  const ag::Tensor zs = disc(src_test), zt = disc(tgt_test);
  for (double z : zs.data()) correct += z <= 0.0;
  for (double z : zt.data()) correct += z > 0.0;
  CHECK(static_cast<double>(correct) / 300.0 > 0.9);
}

TEST_CASE("PPM round trip and dataset cache") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "mtm_test_data";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Image im(4, 5);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) im.pixels[i] = static_cast<double>((i * 37) % 256) / 255.0;
  write_ppm(im, dir / "a.ppm");
  const Image back = read_ppm(dir / "a.ppm");
  CHECK(back.height == 4);
  CHECK(back.width == 5);
  CHECK(back.pixels == im.pixels);
  std::ofstream(dir / "bad.ppm") << "P5\n1 1\n255\n";
  CHECK_THROWS_AS(read_ppm(dir / "bad.ppm"), FormatError);
  std::ofstream(dir / "short.ppm") << "P6\n2 2\n255\nab";
  CHECK_THROWS_AS(read_ppm(dir / "short.ppm"), FormatError);

  DataConfig cfg = small_config();
  cfg.n_source = 3;
  cfg.n_target_train = 2;
  cfg.n_target_val = 2;
  const Dataset ds = build_splits(cfg);
  save_dataset(ds, dir / "cache");
  std::ifstream manifest(dir / "cache" / "manifest.txt");
  std::size_t lines = 0;
  for (std::string line; std::getline(manifest, line);) lines += line.rfind('#', 0) != 0;
  CHECK(lines == 3 + 3 + 2 + 2);
  const Image first = read_ppm(dir / "cache" / "images" / "source" / "0.ppm");
  for (std::size_t i = 0; i < first.pixels.size(); ++i) CHECK(std::fabs(first.pixels[i] - ds.source[0].image.pixels[i]) <= 0.5 / 255 + 1e-12);
  CHECK(fs::exists(dir / "cache" / "annotations_target_train.csv"));
  fs::remove_all(dir);
}
