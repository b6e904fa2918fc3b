#pragma once

// DETR-style detector at toy scale: linear patch embedding, pre-norm
// transformer encoder with a prepended domain query, decoder over learned
// object queries with its own domain query, and class/box heads.

#include <cstdint>
#include <string>
#include <vector>

#include "mtm/autograd.hpp"
#include "mtm/boxes.hpp"
#include "mtm/image.hpp"
#include "mtm/nn.hpp"

namespace mtm::det {

using ag::Tensor;

struct ModelConfig {
  std::size_t embed_dim = 64;       // C
  std::size_t object_queries = 20;  // N_dec
  std::size_t encoder_layers = 3;   // L_enc
  std::size_t decoder_layers = 3;   // L_dec
  std::size_t heads = 4;
  std::size_t num_classes = 3;
  std::size_t patch_size = 8;
  std::size_t image_size = 32;
  std::size_t ffn_dim = 128;
  std::size_t channels = 3;

  // Throws ContractError naming the offending field.
  void validate() const;
  std::size_t tokens() const { return (image_size / patch_size) * (image_size / patch_size); }  // N_enc
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t background_class() const { return num_classes; }

  bool operator==(const ModelConfig&) const = default;
};

// Z_0 .. Z_L, each (1 + N_enc) x C; row 0 is the domain-query slot.
struct EncoderState {
  Tensor input;
  std::vector<Tensor> layers;
  // Per layer, per head: (1 + N_enc) x (1 + N_enc) attention weights. Filled on request.
  std::vector<std::vector<Tensor>> attention;
};

// Q_0 .. Q_L, each (1 + N_dec) x C; row 0 is the domain-query slot.
struct DecoderState {
  Tensor input;
  std::vector<Tensor> layers;
};

struct HeadOutput {
  Tensor class_logits;  // N_dec x (num_classes + 1), last column is "no object"
  Tensor boxes;         // N_dec x 4, (cx, cy, w, h) in (0, 1)
};

struct DetectorOutput {
  EncoderState encoder;
  DecoderState decoder;
  HeadOutput heads;
};

struct EncoderLayer {
  nn::LayerNorm norm1, norm2;
  nn::MultiHeadAttention attn;
  nn::FeedForward ffn;

  template <typename F>
  void for_each_param(const std::string& p, F&& fn) {
    norm1.for_each_param(p + ".norm1", fn);
    attn.for_each_param(p + ".attn", fn);
    norm2.for_each_param(p + ".norm2", fn);
    ffn.for_each_param(p + ".ffn", fn);
  }
};

struct DecoderLayer {
  nn::LayerNorm norm1, norm2, norm3;
  nn::MultiHeadAttention self_attn, cross_attn;
  nn::FeedForward ffn;

  template <typename F>
  void for_each_param(const std::string& p, F&& fn) {
    norm1.for_each_param(p + ".norm1", fn);
    self_attn.for_each_param(p + ".self_attn", fn);
    norm2.for_each_param(p + ".norm2", fn);
    cross_attn.for_each_param(p + ".cross_attn", fn);
    norm3.for_each_param(p + ".norm3", fn);
    ffn.for_each_param(p + ".ffn", fn);
  }
};

class Detector {
 public:
  Detector(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Non-overlapping patches, flattened (row, col, channel) and projected to C.
  Tensor patch_embed(const Image& image) const;
  // Z_0 = [q_enc; tokens] + E_pos + E_level, then L_enc pre-norm layers.
  // E_pos is added again to attention queries and keys in every layer.
  EncoderState encode(const Tensor& tokens, bool keep_attention = false) const;
  // [q_dec; QE] + E'_pos.
  Tensor decoder_input(const Tensor& query_embed) const;
  // Self-attention over all rows, cross-attention into Z_final rows 1..N_enc.
  // E'_pos is re-added to attention queries and E_pos to cross-attention keys.
  DecoderState decode(const Tensor& z_final, const Tensor& queries) const;
  // Heads on rows 1..N_dec of the last decoder layer.
  HeadOutput predict(const Tensor& q_last) const;

  // query_embed overrides QE (used by OQKT); defaults to the learned embedding.
  DetectorOutput forward(const Image& image, const Tensor* query_embed = nullptr) const;

  // QE and PE (rows 1..N_dec of E'_pos).
  const Tensor& query_embed() const { return query_embed_; }
  Tensor query_pos() const;

  std::vector<ag::NamedTensor> parameters();
  // Deep copy with independent parameter storage.
  Detector clone() const;

  template <typename F>
  void for_each_param(const std::string& p, F&& fn) {
    patch_proj_.for_each_param(p + "patch", fn);
    fn(p + "enc.domain_query", enc_domain_query_);
    fn(p + "enc.pos", enc_pos_);
    fn(p + "enc.level", enc_level_);
    for (std::size_t l = 0; l < enc_layers_.size(); ++l) enc_layers_[l].for_each_param(p + "enc." + std::to_string(l), fn);
    enc_norm_.for_each_param(p + "enc.norm", fn);
    fn(p + "dec.domain_query", dec_domain_query_);
    fn(p + "dec.query_embed", query_embed_);
    fn(p + "dec.pos", dec_pos_);
    for (std::size_t l = 0; l < dec_layers_.size(); ++l) dec_layers_[l].for_each_param(p + "dec." + std::to_string(l), fn);
    dec_norm_.for_each_param(p + "dec.norm", fn);
    class_head_.for_each_param(p + "head.class", fn);
    box_head1_.for_each_param(p + "head.box1", fn);
    box_head2_.for_each_param(p + "head.box2", fn);
    box_head3_.for_each_param(p + "head.box3", fn);
    fn(p + "head.anchor", box_anchor_);
  }

 private:
  ModelConfig config_;
  nn::Linear patch_proj_;
  Tensor enc_domain_query_;  // q_enc, 1 x C
  Tensor enc_pos_;           // E_pos, (1 + N_enc) x C
  Tensor enc_level_;         // E_level, 1 x C
  std::vector<EncoderLayer> enc_layers_;
  nn::LayerNorm enc_norm_;
  Tensor dec_domain_query_;  // q_dec, 1 x C
  Tensor query_embed_;       // QE, N_dec x C
  Tensor dec_pos_;           // E'_pos, (1 + N_dec) x C
  std::vector<DecoderLayer> dec_layers_;
  nn::LayerNorm dec_norm_;
  nn::Linear class_head_;
  nn::Linear box_head1_, box_head2_, box_head3_;
  Tensor box_anchor_;  // N_dec x 4 per-query box prior, pre-sigmoid
};

/// Converts head output to scored boxes: class = argmax over object classes,
/// score = its softmax probability. Boxes are clipped to the unit square.
/// `keep_background_argmax` = false drops queries whose overall argmax is "no object".
BoxSet to_boxset(const HeadOutput& heads, bool keep_background_argmax = true);

// Softmax class probabilities, N_dec x (num_classes + 1).
std::vector<double> class_probabilities(const HeadOutput& heads);

}  // namespace mtm::det
