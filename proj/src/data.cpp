#include "mtm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "mtm/errors.hpp"

namespace mtm::data {

namespace {

enum Stream : std::uint64_t {
  kSourceScenes = 1,
  kTargetLikeFog = 2,
  kTargetScenes = 3,
  kTargetFog = 4,
  kValScenes = 5,
  kValFog = 6,
};

constexpr std::uint64_t kTargetIdBase = 1'000'000;
constexpr std::uint64_t kValIdBase = 2'000'000;

Rng stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return Rng(mix_seed(mix_seed(seed) ^ mix_seed(stream * 0x100000001b3ULL + index)));
}

bool inside_shape(int cls, double px, double py, double x0, double y0, double s) {
  switch (cls) {
    case 0: {  // circle
      const double r = 0.5 * s, dx = px - (x0 + r), dy = py - (y0 + r);
      return dx * dx + dy * dy <= r * r;
    }
    case 1:  // square
      return px >= x0 && px <= x0 + s && py >= y0 && py <= y0 + s;
    default: {  // upward triangle, apex at top centre
      if (py < y0 || py > y0 + s) return false;
      const double half = 0.5 * s * (py - y0) / s;
      return std::fabs(px - (x0 + 0.5 * s)) <= half;
    }
  }
}

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive pixel extents
};

bool overlaps(const PixelBox& a, const PixelBox& b, int margin) {
  return !(a.x1 + margin < b.x0 || b.x1 + margin < a.x0 || a.y1 + margin < b.y0 || b.y1 + margin < a.y0);
}

template <typename F>
void parallel_for(std::size_t n, F&& fn) {
  const std::size_t threads = std::min(data_threads(), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

const char* domain_name(Domain d) {
  switch (d) {
    case Domain::Source: return "source";
    case Domain::Target: return "target";
    case Domain::TargetLike: return "target_like";
  }
  return "unknown";
}

void FogParams::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("FogParams: beta must lie in [0, 1]");
  if (!(contrast_scale > 0.0 && contrast_scale <= 1.0)) throw ContractError("FogParams: contrast_scale must lie in (0, 1]");
}

FogParams FogDistribution::sample(Rng& rng) const {
  FogParams p;
  p.beta = rng.uniform(beta_min, beta_max);
  const double gray = rng.uniform(haze_min, haze_max);
  for (double& c : p.haze_color) c = std::clamp(gray + rng.uniform(-haze_tint, haze_tint), 0.0, 1.0);
  p.blur_radius = blur_radius;
  p.contrast_scale = rng.uniform(contrast_min, contrast_max);
  return p;
}

Scene gen_scene(std::uint64_t seed, std::uint64_t id, const SceneConfig& config) {
  Rng rng = stream_rng(seed, kSourceScenes, id);
  const std::size_t n = config.image_size;
  Scene scene;
  scene.id = id;
  scene.domain = Domain::Source;
  scene.image = Image(n, n, 3);

  // Background: dark base colour, a gentle linear gradient and pixel noise.
  std::array<double, 3> base{};
  for (double& b : base) b = rng.uniform(0.0, 0.35);
  const double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double ramp = gx * (static_cast<double>(x) / n - 0.5) + gy * (static_cast<double>(y) / n - 0.5);
      for (std::size_t c = 0; c < 3; ++c) {
        scene.image.at(y, x, c) = std::clamp(base[c] + ramp + rng.uniform(-0.04, 0.04), 0.0, 1.0);
      }
    }
  }

  const int wanted = rng.integer(config.min_objects, config.max_objects);
  std::vector<PixelBox> placed;
  for (int k = 0; k < wanted; ++k) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int cls = rng.integer(0, 2);
      const double s = rng.uniform(config.min_object_px, config.max_object_px);
      const double x0 = rng.uniform(0.0, static_cast<double>(n) - s);
      const double y0 = rng.uniform(0.0, static_cast<double>(n) - s);

      std::vector<std::pair<std::size_t, std::size_t>> pixels;
      PixelBox pb{static_cast<int>(n), static_cast<int>(n), -1, -1};
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          if (inside_shape(cls, x + 0.5, y + 0.5, x0, y0, s)) {
            pixels.emplace_back(y, x);
            pb.x0 = std::min(pb.x0, static_cast<int>(x));
            pb.y0 = std::min(pb.y0, static_cast<int>(y));
            pb.x1 = std::max(pb.x1, static_cast<int>(x));
            pb.y1 = std::max(pb.y1, static_cast<int>(y));
          }
        }
      }
      if (pixels.size() < 4) continue;
      if (std::any_of(placed.begin(), placed.end(), [&](const PixelBox& o) { return overlaps(pb, o, 1); })) continue;

      // Bright colour: one saturated channel, the others anywhere in the upper range.
      std::array<double, 3> color{};
      for (std::size_t c = 0; c < 3; ++c) color[c] = rng.uniform(0.3, 1.0);
      color[static_cast<std::size_t>(rng.integer(0, 2))] = rng.uniform(0.85, 1.0);
      for (const auto& [y, x] : pixels)
        for (std::size_t c = 0; c < 3; ++c) scene.image.at(y, x, c) = color[c];

      const double inv = 1.0 / static_cast<double>(n);
      scene.boxes.push_back(Box::from_corners(pb.x0 * inv, pb.y0 * inv, (pb.x1 + 1) * inv, (pb.y1 + 1) * inv), cls);
      placed.push_back(pb);
      break;
    }
  }
  return scene;
}

Scene fogify(const Scene& scene, const FogParams& params, Domain domain) {
  params.validate();
  Scene out = scene;
  out.domain = domain;
  const Image& src = scene.image;
  const std::size_t h = src.height, w = src.width, ch = src.channels;
  const int r = static_cast<int>(params.blur_radius);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < ch; ++c) {
        double v;
        if (r == 0) {
          v = src.at(y, x, c);
        } else {
          double acc = 0.0;
          int count = 0;
          for (int dy = -r; dy <= r; ++dy) {
            for (int dx = -r; dx <= r; ++dx) {
              const int yy = static_cast<int>(y) + dy, xx = static_cast<int>(x) + dx;
              if (yy < 0 || xx < 0 || yy >= static_cast<int>(h) || xx >= static_cast<int>(w)) continue;
              acc += src.at(yy, xx, c);
              ++count;
            }
          }
          v = acc / count;
        }
        const double haze = c < 3 ? params.haze_color[c] : 0.0;
        out.image.at(y, x, c) = params.contrast_scale * v * (1.0 - params.beta) + haze * params.beta;
      }
    }
  }
  return out;
}

std::size_t data_threads() {
  if (const char* env = std::getenv("MTM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset build_splits(const DataConfig& config) {
  if (config.n_source == 0 || config.n_target_train == 0 || config.n_target_val == 0) {
    throw ContractError("build_splits: split sizes must be at least 1");
  }
  Dataset ds;
  ds.source.resize(config.n_source);
  ds.target_like.resize(config.n_source);
  ds.target_train.resize(config.n_target_train);
  ds.target_val.resize(config.n_target_val);
  std::vector<BoxSet> quarantined(config.n_target_train);

  parallel_for(config.n_source, [&](std::size_t i) {
    ds.source[i] = gen_scene(config.seed, i, config.scene);
    Rng fog_rng = stream_rng(config.seed, kTargetLikeFog, i);
    ds.target_like[i] = fogify(ds.source[i], config.fog.sample(fog_rng), Domain::TargetLike);
  });
  parallel_for(config.n_target_train, [&](std::size_t i) {
    const Scene clean = gen_scene(mix_seed(config.seed ^ kTargetScenes), kTargetIdBase + i, config.scene);
    Rng fog_rng = stream_rng(config.seed, kTargetFog, i);
    Scene s = fogify(clean, config.fog.sample(fog_rng), Domain::Target);
    quarantined[i] = std::move(s.boxes);
    s.boxes = BoxSet{};
    ds.target_train[i] = std::move(s);
  });
  parallel_for(config.n_target_val, [&](std::size_t i) {
    const Scene clean = gen_scene(mix_seed(config.seed ^ kValScenes), kValIdBase + i, config.scene);
    Rng fog_rng = stream_rng(config.seed, kValFog, i);
    ds.target_val[i] = fogify(clean, config.fog.sample(fog_rng), Domain::Target);
  });
  ds.target_train_labels = QuarantinedLabels(std::move(quarantined));
  return ds;
}

BatchIterator::BatchIterator(const Dataset& dataset, Stage stage, std::uint64_t seed)
    : dataset_(&dataset), stage_(stage), rng_(seed) {
  const auto& counterpart = stage_ == Stage::Pretrain ? dataset_->target_like : dataset_->target_train;
  if (dataset_->source.empty() || counterpart.empty()) throw ContractError("BatchIterator: empty split");
  source_order_.resize(dataset_->source.size());
  counterpart_order_.resize(counterpart.size());
  reshuffle();
}

void BatchIterator::reshuffle() {
  std::iota(source_order_.begin(), source_order_.end(), std::size_t{0});
  std::iota(counterpart_order_.begin(), counterpart_order_.end(), std::size_t{0});
  rng_.shuffle(std::span(source_order_));
  rng_.shuffle(std::span(counterpart_order_));
}

std::optional<PairedBatch> BatchIterator::next() {
  if (position_ == source_order_.size()) {
    position_ = 0;
    ++epoch_;
    reshuffle();
    return std::nullopt;
  }
  const std::size_t i = position_++;
  PairedBatch batch;
  const Scene& src = dataset_->source[source_order_[i]];
  batch.source = {&src, &src.boxes, 0.0};
  const std::size_t j = counterpart_order_[i % counterpart_order_.size()];
  if (stage_ == Stage::Pretrain) {
    const Scene& tl = dataset_->target_like[j];
    batch.counterpart = {&tl, &tl.boxes, 1.0};
  } else {
    batch.counterpart = {&dataset_->target_train[j], nullptr, 1.0};
  }
  return batch;
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 3) throw ShapeError("write_ppm: only 3-channel images are supported");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_ppm: cannot open " + path.string());
  os << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (double v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    os.put(static_cast<char>(byte));
  }
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_ppm: cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255 || w == 0 || h == 0) throw FormatError("read_ppm: unsupported header in " + path.string());
  is.get();
  Image img(h, w, 3);
  for (double& v : img.pixels) {
    const int byte = is.get();
    if (byte == EOF) throw FormatError("read_ppm: truncated pixel data in " + path.string());
    v = static_cast<double>(byte) / 255.0;
  }
  return img;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  manifest << "# split scene_id image\n";
  auto dump = [&](const std::string& split, const std::vector<Scene>& scenes, auto labels_of) {
    fs::create_directories(dir / "images" / split);
    std::ofstream csv(dir / ("annotations_" + split + ".csv"));
    csv << "scene_id,class_id,cx,cy,w,h\n";
    char line[160];
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const Scene& s = scenes[i];
      const fs::path rel = fs::path("images") / split / (std::to_string(s.id) + ".ppm");
      write_ppm(s.image, dir / rel);
      manifest << split << ' ' << s.id << ' ' << rel.generic_string() << '\n';
      const BoxSet& boxes = labels_of(i);
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        const Box& b = boxes.boxes[k];
        std::snprintf(line, sizeof line, "%llu,%d,%.9g,%.9g,%.9g,%.9g\n", static_cast<unsigned long long>(s.id),
                      boxes.classes[k], b.cx, b.cy, b.w, b.h);
        csv << line;
      }
    }
  };
  dump("source", dataset.source, [&](std::size_t i) -> const BoxSet& { return dataset.source[i].boxes; });
  dump("target_like", dataset.target_like, [&](std::size_t i) -> const BoxSet& { return dataset.target_like[i].boxes; });
  dump("target_train", dataset.target_train,
       [&](std::size_t i) -> const BoxSet& { return dataset.target_train_labels.for_evaluation(i); });
  dump("target_val", dataset.target_val, [&](std::size_t i) -> const BoxSet& { return dataset.target_val[i].boxes; });
}

}  // namespace mtm::data
