#include "mtm/meanteacher.hpp"

#include <algorithm>

#include "mtm/errors.hpp"

namespace mtm::mt {

void ema_update(std::span<ag::NamedTensor> teacher, std::span<const ag::NamedTensor> student, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) throw ContractError("ema_update: momentum must lie in [0, 1]");
  if (teacher.size() != student.size()) throw ContractError("ema_update: parameter lists differ in length");
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    if (teacher[k].name != student[k].name) {
      throw ContractError("ema_update: parameter name mismatch '" + teacher[k].name + "' vs '" + student[k].name + "'");
    }
    if (teacher[k].tensor.shape() != student[k].tensor.shape()) {
      throw ContractError("ema_update: shape mismatch for '" + teacher[k].name + "'");
    }
  }
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    auto t = teacher[k].tensor.mutable_data();
    const auto s = student[k].tensor.data();
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = momentum * t[i] + (1.0 - momentum) * s[i];
  }
}

QuerySet queries_of(const det::Detector& model, Owner owner) {
  return {model.query_embed(), model.query_pos(), owner};
}

double alpha_step(OqktSchedule& schedule) {
  if (schedule.total_epochs == 0) throw ContractError("alpha_step: total_epochs must be positive");
  if (schedule.current_epoch > schedule.total_epochs) throw ContractError("alpha_step: epoch beyond schedule");
  const double ratio = static_cast<double>(schedule.current_epoch) / static_cast<double>(schedule.total_epochs);
  schedule.alpha = std::clamp(1.0 - ratio, 0.0, 1.0);
  return schedule.alpha;
}

Oqkt::Oqkt(std::size_t embed_dim, std::size_t heads, std::size_t head_dim, std::uint64_t seed) {
  Rng rng(seed);
  attn_ = nn::MultiHeadAttention(embed_dim, heads, head_dim, rng, /*with_bias=*/false);
  for (double& w : attn_.out_proj.weight.mutable_data()) w = 0.0;
  // q/k/v start at half the Xavier scale.
  for (auto* proj : {&attn_.q_proj, &attn_.k_proj, &attn_.v_proj}) {
    for (double& w : proj->weight.mutable_data()) w *= 0.5;
  }
}

Tensor Oqkt::enhance(const QuerySet& student, const QuerySet& teacher, double alpha,
                     std::vector<Tensor>* attention_out) const {
  if (student.qe.shape() != student.pe.shape() || teacher.qe.shape() != teacher.pe.shape() ||
      student.qe.shape() != teacher.qe.shape()) {
    throw ContractError("oqkt: query set shapes differ");
  }
  if (student.owner != Owner::Student || teacher.owner != Owner::Teacher) {
    throw ContractError("oqkt: query sets passed in the wrong roles");
  }
  const Tensor query = ag::add(student.qe, student.pe);
  const Tensor key = ag::add(teacher.qe, teacher.pe).detach();
  const Tensor value = teacher.qe.detach();
  return ag::add(student.qe, ag::scale(attn_(query, key, value, attention_out), alpha));
}

PseudoLabelSet generate_pseudo_labels(const det::Detector& teacher, const Image& weak_image, double threshold,
                                      std::uint64_t image_id) {
  if (!(threshold >= 0.0 && threshold < 1.0)) throw ContractError("generate_pseudo_labels: threshold must lie in [0, 1)");
  ag::NoGradGuard no_grad;
  const auto out = teacher.forward(weak_image);
  BoxSet candidates = det::to_boxset(out.heads, /*keep_background_argmax=*/false);
  PseudoLabelSet result;
  result.image_id = image_id;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates.scores[i] >= threshold) {
      result.labels.push_back(candidates.boxes[i], candidates.classes[i], candidates.scores[i]);
    }
  }
  return result;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
  return out;
}

Augmented augment(const Image& image, Strength strength, Rng& rng) {
  Augmented out;
  out.flipped = rng.bernoulli(0.5);
  out.image = out.flipped ? flip_horizontal(image) : image;
  if (strength == Strength::Weak) return out;

  auto& px = out.image.pixels;
  const double brightness = rng.uniform(-0.3, 0.3);
  const double contrast = rng.uniform(0.7, 1.3);
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= static_cast<double>(std::max<std::size_t>(px.size(), 1));
  for (double& v : px) v = (v - mean) * contrast + mean + brightness + rng.normal(0.0, 0.05);
  if (rng.bernoulli(0.2) && out.image.channels == 3) {
    for (std::size_t i = 0; i + 2 < px.size(); i += 3) {
      const double g = 0.299 * px[i] + 0.587 * px[i + 1] + 0.114 * px[i + 2];
      px[i] = px[i + 1] = px[i + 2] = g;
    }
  }
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
  return out;
}

BoxSet map_between_views(const BoxSet& boxes, bool from_flipped, bool to_flipped) {
  return from_flipped == to_flipped ? boxes : mtm::flip_horizontal(boxes);
}

}  // namespace mtm::mt
