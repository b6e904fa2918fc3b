#include "mtm/nn.hpp"

#include <cmath>

#include "mtm/errors.hpp"

namespace mtm::nn {

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Tensor::parameter({fan_in, fan_out}, std::move(w));
}

Tensor normal_param(ag::Shape shape, double stddev, Rng& rng) {
  std::vector<double> w(ag::numel(shape));
  for (double& v : w) v = rng.normal(0.0, stddev);
  return Tensor::parameter(std::move(shape), std::move(w));
}

Tensor zeros_param(ag::Shape shape) {
  const std::size_t n = ag::numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor ones_param(ag::Shape shape) {
  const std::size_t n = ag::numel(shape);
  return Tensor::parameter(std::move(shape), std::vector<double>(n, 1.0));
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(xavier_uniform(in, out, rng)) {
  if (with_bias) bias = zeros_param({1, out});
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = ag::matmul(x, weight);
  return bias.defined() ? ag::add_row(y, bias) : y;
}

LayerNorm::LayerNorm(std::size_t width) : gain(ones_param({1, width})), bias(zeros_param({1, width})) {}

MultiHeadAttention::MultiHeadAttention(std::size_t model_dim, std::size_t heads_, std::size_t head_dim_,
                                       Rng& rng, bool with_bias)
    : heads(heads_), head_dim(head_dim_) {
  if (heads == 0 || head_dim == 0) throw ContractError("MultiHeadAttention: heads and head_dim must be positive");
  const std::size_t inner = heads * head_dim;
  q_proj = Linear(model_dim, inner, rng, with_bias);
  k_proj = Linear(model_dim, inner, rng, with_bias);
  v_proj = Linear(model_dim, inner, rng, with_bias);
  out_proj = Linear(inner, model_dim, rng, with_bias);
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                                      std::vector<Tensor>* attention_out) const {
  if (key.rows() != value.rows()) throw ShapeError("attention: key and value lengths differ");
  const Tensor q = q_proj(query);
  const Tensor k = k_proj(key);
  const Tensor v = v_proj(value);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    const Tensor scores = ag::scale(ag::matmul_nt(ag::slice_cols(q, lo, hi), ag::slice_cols(k, lo, hi)), inv_sqrt);
    const Tensor weights = ag::softmax(scores, 1);
    if (attention_out) attention_out->push_back(weights);
    outputs.push_back(heads == 1 ? ag::matmul(weights, v) : ag::matmul(weights, ag::slice_cols(v, lo, hi)));
  }
  return out_proj(heads == 1 ? outputs.front() : ag::concat(outputs, 1));
}

FeedForward::FeedForward(std::size_t width, std::size_t hidden, Rng& rng)
    : fc1(width, hidden, rng), fc2(hidden, width, rng) {}

}  // namespace mtm::nn
