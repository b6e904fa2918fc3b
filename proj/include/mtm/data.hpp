#pragma once

// Synthetic shapes world with two domains: clear "source" scenes and foggy
// "target" scenes. Target-like scenes are fogged copies of source scenes that
// keep the source annotations.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mtm/boxes.hpp"
#include "mtm/image.hpp"
#include "mtm/rng.hpp"

namespace mtm::data {

enum class Domain { Source, Target, TargetLike };
const char* domain_name(Domain d);

inline constexpr std::array<const char*, 3> kClassNames{"circle", "square", "triangle"};

struct Scene {
  Image image;
  BoxSet boxes;
  Domain domain = Domain::Source;
  std::uint64_t id = 0;
};

struct SceneConfig {
  std::size_t image_size = 32;
  int min_objects = 1;
  int max_objects = 6;
  double min_object_px = 7.0;
  double max_object_px = 13.0;
};

struct FogParams {
  double beta = 0.0;  // haze intensity in [0, 1]
  std::array<double, 3> haze_color{0.0, 0.0, 0.0};
  std::size_t blur_radius = 0;
  double contrast_scale = 1.0;  // in (0, 1]

  void validate() const;
  static FogParams identity() { return {}; }
};

// Distribution from which target and target-like fog parameters are drawn.
struct FogDistribution {
  double beta_min = 0.45, beta_max = 0.65;
  double haze_min = 0.60, haze_max = 0.80;
  double haze_tint = 0.03;
  std::size_t blur_radius = 1;
  double contrast_min = 0.70, contrast_max = 0.90;

  FogParams sample(Rng& rng) const;
};

// Deterministic in (seed, id).
Scene gen_scene(std::uint64_t seed, std::uint64_t id, const SceneConfig& config);

// image' = contrast_scale * blur(image) * (1 - beta) + haze_color * beta; boxes copied.
Scene fogify(const Scene& scene, const FogParams& params, Domain domain = Domain::TargetLike);

// Target-train annotations, reachable only through an audited accessor.
class QuarantinedLabels {
 public:
  QuarantinedLabels() = default;
  explicit QuarantinedLabels(std::vector<BoxSet> labels) : labels_(std::move(labels)) {}

  const BoxSet& for_evaluation(std::size_t index) const {
    ++reads_;
    return labels_.at(index);
  }
  std::size_t reads() const { return reads_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::vector<BoxSet> labels_;
  mutable std::size_t reads_ = 0;
};

struct DataConfig {
  SceneConfig scene;
  FogDistribution fog;
  std::size_t n_source = 400;
  std::size_t n_target_train = 400;
  std::size_t n_target_val = 200;
  std::uint64_t seed = 1;
};

struct Dataset {
  std::vector<Scene> source;
  std::vector<Scene> target_like;   // fogify(source[i]), labels retained
  std::vector<Scene> target_train;  // boxes stripped
  QuarantinedLabels target_train_labels;
  std::vector<Scene> target_val;    // labels kept for evaluation
};

// Parallelism is capped by MTM_THREADS (default: hardware concurrency).
Dataset build_splits(const DataConfig& config);
std::size_t data_threads();

enum class Stage { Pretrain, Selftrain };

struct DomainBatch {
  const Scene* scene = nullptr;
  const BoxSet* boxes = nullptr;  // null for unlabeled target images
  double domain = 0.0;
};

struct PairedBatch {
  DomainBatch source;
  DomainBatch counterpart;
};

/// One pass over the source split per epoch, each source scene paired with a
/// counterpart scene (target-like for pretraining, target for self-training).
/// Both orders are reshuffled every epoch.
class BatchIterator {
 public:
  BatchIterator(const Dataset& dataset, Stage stage, std::uint64_t seed);

  // nullopt marks the end of the epoch; the next call starts a new epoch.
  std::optional<PairedBatch> next();
  std::size_t epoch() const { return epoch_; }
  std::size_t steps_per_epoch() const { return dataset_->source.size(); }

 private:
  void reshuffle();

  const Dataset* dataset_;
  Stage stage_;
  Rng rng_;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> counterpart_order_;
  std::size_t position_ = 0;
  std::size_t epoch_ = 0;
};

// -- on-disk cache -----------------------------------------------------------
void write_ppm(const Image& image, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);
// Writes images/<split>/<id>.ppm, annotations_<split>.csv and manifest.txt.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace mtm::data
