#pragma once

// Mean-teacher self-training pieces: EMA teacher updates, weak/strong
// augmentation, pseudo-label filtering and object-query knowledge transfer.

#include <cstdint>
#include <span>
#include <string>

#include "mtm/autograd.hpp"
#include "mtm/boxes.hpp"
#include "mtm/detector.hpp"
#include "mtm/image.hpp"
#include "mtm/nn.hpp"
#include "mtm/rng.hpp"

namespace mtm::mt {

using ag::Tensor;

inline constexpr double kDefaultEmaMomentum = 0.999;
inline constexpr double kDefaultPseudoThreshold = 0.50;

// theta_t <- m * theta_t + (1 - m) * theta_s, matched by name and shape.
void ema_update(std::span<ag::NamedTensor> teacher, std::span<const ag::NamedTensor> student, double momentum);

enum class Owner { Teacher, Student };

struct QuerySet {
  Tensor qe;  // N_dec x C query embeddings
  Tensor pe;  // N_dec x C query positional embeddings
  Owner owner = Owner::Student;
};

QuerySet queries_of(const det::Detector& model, Owner owner);

struct OqktSchedule {
  std::size_t total_epochs = 1;
  std::size_t current_epoch = 0;
  double alpha = 1.0;
  std::size_t heads = 16;
  std::size_t head_dim = 16;
};

// alpha = clamp(1 - current_epoch / total_epochs, 0, 1); stored in the schedule and returned.
double alpha_step(OqktSchedule& schedule);

/// Multi-head attention from student queries (Query = QE_s + PE_s) to teacher
/// queries (Key = QE_t + PE_t, Value = QE_t), added to QE_s scaled by alpha.
/// Projections carry no bias; the output projection starts at zero.
class Oqkt {
 public:
  Oqkt() = default;
  Oqkt(std::size_t embed_dim, std::size_t heads, std::size_t head_dim, std::uint64_t seed);

  // Teacher tensors are detached before use.
  Tensor enhance(const QuerySet& student, const QuerySet& teacher, double alpha,
                 std::vector<Tensor>* attention_out = nullptr) const;

  nn::MultiHeadAttention& attention() { return attn_; }

  template <typename F>
  void for_each_param(const std::string& p, F&& fn) {
    attn_.for_each_param(p + "oqkt", fn);
  }

 private:
  nn::MultiHeadAttention attn_;
};

struct PseudoLabelSet {
  BoxSet labels;
  std::uint64_t image_id = 0;
};

/// Teacher inference without gradient tracking. Keeps queries whose argmax is an
/// object class and whose probability is >= threshold.
PseudoLabelSet generate_pseudo_labels(const det::Detector& teacher, const Image& weak_image, double threshold,
                                      std::uint64_t image_id = 0);

enum class Strength { Weak, Strong };

struct Augmented {
  Image image;
  bool flipped = false;
};

Image flip_horizontal(const Image& image);

/// Weak: horizontal flip with p = 0.5. Strong: flip, brightness and contrast
/// jitter of +-0.3, Gaussian noise (sigma 0.05), grayscale with p = 0.2; clamped to [0, 1].
Augmented augment(const Image& image, Strength strength, Rng& rng);

// Maps boxes predicted on a (possibly flipped) teacher view into the student view.
BoxSet map_between_views(const BoxSet& boxes, bool from_flipped, bool to_flipped);

}  // namespace mtm::mt
