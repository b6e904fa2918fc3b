#include "mtm/detector.hpp"

#include <algorithm>
#include <cmath>

#include "mtm/errors.hpp"

namespace mtm::det {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("ModelConfig: ") + name + " must be at least 1");
  };
  positive(embed_dim, "embed_dim");
  positive(object_queries, "object_queries");
  positive(encoder_layers, "encoder_layers");
  positive(decoder_layers, "decoder_layers");
  positive(heads, "heads");
  positive(num_classes, "num_classes");
  positive(patch_size, "patch_size");
  positive(image_size, "image_size");
  positive(ffn_dim, "ffn_dim");
  positive(channels, "channels");
  if (embed_dim % heads != 0) throw ContractError("ModelConfig: embed_dim must be divisible by heads");
  if (image_size % patch_size != 0) throw ContractError("ModelConfig: image_size must be divisible by patch_size");
  if (embed_dim < 4) throw ContractError("ModelConfig: embed_dim must be at least 4");
}

namespace {

// 2-D sinusoidal table for the patch grid; row 0 (domain-query slot) stays zero.
std::vector<double> sine_positions(std::size_t grid, std::size_t width) {
  std::vector<double> out((1 + grid * grid) * width, 0.0);
  const std::size_t quarter = std::max<std::size_t>(width / 4, 1);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      double* row = out.data() + (1 + gy * grid + gx) * width;
      for (std::size_t k = 0; k < quarter && 4 * k + 3 < width; ++k) {
        const double freq = std::pow(100.0, -static_cast<double>(k) / static_cast<double>(quarter));
        const double py = (static_cast<double>(gy) + 0.5) / static_cast<double>(grid) * 2.0 * M_PI * freq;
        const double px = (static_cast<double>(gx) + 0.5) / static_cast<double>(grid) * 2.0 * M_PI * freq;
        row[4 * k + 0] = std::sin(py);
        row[4 * k + 1] = std::cos(py);
        row[4 * k + 2] = std::sin(px);
        row[4 * k + 3] = std::cos(px);
      }
    }
  }
  return out;
}

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

Detector::Detector(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const std::size_t c = config_.embed_dim;
  const std::size_t head_dim = c / config_.heads;
  const std::size_t n_enc = config_.tokens();
  const std::size_t n_dec = config_.object_queries;

  patch_proj_ = nn::Linear(config_.patch_dim(), c, rng);
  enc_domain_query_ = nn::normal_param({1, c}, 1.0, rng);
  enc_pos_ = Tensor::parameter({1 + n_enc, c}, sine_positions(config_.image_size / config_.patch_size, c));
  enc_level_ = nn::normal_param({1, c}, 0.02, rng);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    EncoderLayer layer;
    layer.norm1 = nn::LayerNorm(c);
    layer.attn = nn::MultiHeadAttention(c, config_.heads, head_dim, rng);
    layer.norm2 = nn::LayerNorm(c);
    layer.ffn = nn::FeedForward(c, config_.ffn_dim, rng);
    enc_layers_.push_back(std::move(layer));
  }
  enc_norm_ = nn::LayerNorm(c);

  dec_domain_query_ = nn::normal_param({1, c}, 1.0, rng);
  query_embed_ = nn::normal_param({n_dec, c}, 1.0, rng);
  dec_pos_ = nn::normal_param({1 + n_dec, c}, 1.0, rng);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    DecoderLayer layer;
    layer.norm1 = nn::LayerNorm(c);
    layer.self_attn = nn::MultiHeadAttention(c, config_.heads, head_dim, rng);
    layer.norm2 = nn::LayerNorm(c);
    layer.cross_attn = nn::MultiHeadAttention(c, config_.heads, head_dim, rng);
    layer.norm3 = nn::LayerNorm(c);
    layer.ffn = nn::FeedForward(c, config_.ffn_dim, rng);
    dec_layers_.push_back(std::move(layer));
  }
  dec_norm_ = nn::LayerNorm(c);
  class_head_ = nn::Linear(c, config_.num_classes + 1, rng);
  box_head1_ = nn::Linear(c, c, rng);
  box_head2_ = nn::Linear(c, c, rng);
  box_head3_ = nn::Linear(c, 4, rng);
  std::vector<double> anchors(n_dec * 4);
  for (std::size_t i = 0; i < n_dec; ++i) {
    anchors[i * 4 + 0] = logit(rng.uniform(0.1, 0.9));
    anchors[i * 4 + 1] = logit(rng.uniform(0.1, 0.9));
    anchors[i * 4 + 2] = logit(0.3);
    anchors[i * 4 + 3] = logit(0.3);
  }
  box_anchor_ = Tensor::parameter({n_dec, 4}, std::move(anchors));
}

Tensor Detector::patch_embed(const Image& image) const {
  const std::size_t p = config_.patch_size;
  if (image.channels != config_.channels) throw ShapeError("patch_embed: channel count mismatch");
  if (image.height % p != 0 || image.width % p != 0) {
    throw ShapeError("patch_embed: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = image.height / p, gw = image.width / p;
  const std::size_t dim = p * p * image.channels;
  std::vector<double> patches(gh * gw * dim);
  for (std::size_t by = 0; by < gh; ++by) {
    for (std::size_t bx = 0; bx < gw; ++bx) {
      double* dst = patches.data() + (by * gw + bx) * dim;
      for (std::size_t y = 0; y < p; ++y) {
        const double* src = &image.pixels[((by * p + y) * image.width + bx * p) * image.channels];
        std::copy_n(src, p * image.channels, dst + y * p * image.channels);
      }
    }
  }
  return patch_proj_(Tensor::constant({gh * gw, dim}, std::move(patches)));
}

EncoderState Detector::encode(const Tensor& tokens, bool keep_attention) const {
  if (tokens.rank() != 2 || tokens.rows() != config_.tokens() || tokens.cols() != config_.embed_dim) {
    throw ShapeError("encode: expected " + std::to_string(config_.tokens()) + "x" +
                     std::to_string(config_.embed_dim) + " tokens, got " + ag::shape_str(tokens.shape()));
  }
  EncoderState state;
  state.input = ag::add_row(ag::add(ag::concat({enc_domain_query_, tokens}, 0), enc_pos_), enc_level_);
  Tensor z = state.input;
  for (const EncoderLayer& layer : enc_layers_) {
    std::vector<Tensor> attn;
    const Tensor h = layer.norm1(z);
    const Tensor qk = ag::add(h, enc_pos_);
    z = ag::add(z, layer.attn(qk, qk, h, keep_attention ? &attn : nullptr));
    z = ag::add(z, layer.ffn(layer.norm2(z)));
    state.layers.push_back(z);
    if (keep_attention) state.attention.push_back(std::move(attn));
  }
  return state;
}

Tensor Detector::decoder_input(const Tensor& query_embed) const {
  if (query_embed.rank() != 2 || query_embed.rows() != config_.object_queries ||
      query_embed.cols() != config_.embed_dim) {
    throw ShapeError("decoder_input: query embedding has shape " + ag::shape_str(query_embed.shape()));
  }
  return ag::add(ag::concat({dec_domain_query_, query_embed}, 0), dec_pos_);
}

DecoderState Detector::decode(const Tensor& z_final, const Tensor& queries) const {
  if (queries.rank() != 2 || queries.rows() != 1 + config_.object_queries || queries.cols() != config_.embed_dim) {
    throw ShapeError("decode: expected (1 + N_dec) x C queries, got " + ag::shape_str(queries.shape()));
  }
  if (z_final.rank() != 2 || z_final.rows() < 2 || z_final.cols() != config_.embed_dim) {
    throw ShapeError("decode: encoder output has shape " + ag::shape_str(z_final.shape()));
  }
  const Tensor memory = enc_norm_(ag::slice_rows(z_final, 1, z_final.rows()));
  const Tensor memory_keys = ag::add(memory, ag::slice_rows(enc_pos_, 1, enc_pos_.rows()));
  DecoderState state;
  state.input = queries;
  Tensor q = queries;
  for (const DecoderLayer& layer : dec_layers_) {
    const Tensor h = layer.norm1(q);
    const Tensor qk = ag::add(h, dec_pos_);
    q = ag::add(q, layer.self_attn(qk, qk, h));
    q = ag::add(q, layer.cross_attn(ag::add(layer.norm2(q), dec_pos_), memory_keys, memory));
    q = ag::add(q, layer.ffn(layer.norm3(q)));
    state.layers.push_back(q);
  }
  return state;
}

HeadOutput Detector::predict(const Tensor& q_last) const {
  const Tensor h = dec_norm_(ag::slice_rows(q_last, 1, q_last.rows()));
  HeadOutput out;
  out.class_logits = class_head_(h);
  out.boxes = ag::sigmoid(ag::add(box_head3_(ag::relu(box_head2_(ag::relu(box_head1_(h))))), box_anchor_));
  return out;
}

DetectorOutput Detector::forward(const Image& image, const Tensor* query_embed) const {
  DetectorOutput out;
  out.encoder = encode(patch_embed(image));
  out.decoder = decode(out.encoder.layers.back(), decoder_input(query_embed ? *query_embed : query_embed_));
  out.heads = predict(out.decoder.layers.back());
  return out;
}

Tensor Detector::query_pos() const { return ag::slice_rows(dec_pos_, 1, dec_pos_.rows()); }

std::vector<ag::NamedTensor> Detector::parameters() { return nn::named_parameters(*this, ""); }

Detector Detector::clone() const {
  Detector copy = *this;
  nn::detach_parameters(copy);
  return copy;
}

std::vector<double> class_probabilities(const HeadOutput& heads) {
  const std::size_t n = heads.class_logits.rows(), k = heads.class_logits.cols();
  const auto logits = heads.class_logits.data();
  std::vector<double> probs(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += (probs[i * k + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] /= z;
  }
  return probs;
}

BoxSet to_boxset(const HeadOutput& heads, bool keep_background_argmax) {
  const std::size_t n = heads.class_logits.rows(), k = heads.class_logits.cols();
  const std::size_t background = k - 1;
  const auto probs = class_probabilities(heads);
  const auto boxes = heads.boxes.data();
  BoxSet out;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = probs.data() + i * k;
    const std::size_t best = static_cast<std::size_t>(std::max_element(p, p + background) - p);
    if (!keep_background_argmax && p[background] > p[best]) continue;
    const double* b = boxes.data() + i * 4;
    const double x0 = std::clamp(b[0] - 0.5 * b[2], 0.0, 1.0);
    const double y0 = std::clamp(b[1] - 0.5 * b[3], 0.0, 1.0);
    const double x1 = std::clamp(b[0] + 0.5 * b[2], 0.0, 1.0);
    const double y1 = std::clamp(b[1] + 0.5 * b[3], 0.0, 1.0);
    if (!(x1 > x0 && y1 > y0)) continue;
    out.push_back(Box::from_corners(x0, y0, x1, y1), static_cast<int>(best), p[best]);
  }
  return out;
}

}  // namespace mtm::det
