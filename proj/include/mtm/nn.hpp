#pragma once

// Small building blocks shared by the detector, the discriminators and OQKT.
// Every block exposes for_each_param(prefix, fn) so owners can enumerate,
// clone and serialize parameters by name.

#include <string>
#include <vector>

#include "mtm/autograd.hpp"
#include "mtm/optim.hpp"
#include "mtm/rng.hpp"

namespace mtm::nn {

using ag::NamedTensor;
using ag::Tensor;

Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_param(ag::Shape shape, double stddev, Rng& rng);
Tensor zeros_param(ag::Shape shape);
Tensor ones_param(ag::Shape shape);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]; undefined when constructed without bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& fn) {
    fn(prefix + ".weight", weight);
    if (bias.defined()) fn(prefix + ".bias", bias);
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Tensor operator()(const Tensor& x) const { return ag::layer_norm(x, gain, bias, eps); }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& fn) {
    fn(prefix + ".gain", gain);
    fn(prefix + ".bias", bias);
  }
};

/// Scaled dot-product attention with `heads` heads of width `head_dim`,
/// projecting from and back to `model_dim`.
struct MultiHeadAttention {
  Linear q_proj, k_proj, v_proj, out_proj;
  std::size_t heads = 1;
  std::size_t head_dim = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t model_dim, std::size_t heads, std::size_t head_dim, Rng& rng,
                     bool with_bias = true);

  // attention_out, when given, receives one [Nq, Nk] weight matrix per head.
  Tensor operator()(const Tensor& query, const Tensor& key, const Tensor& value,
                    std::vector<Tensor>* attention_out = nullptr) const;

  template <typename F>
  void for_each_param(const std::string& prefix, F&& fn) {
    q_proj.for_each_param(prefix + ".q", fn);
    k_proj.for_each_param(prefix + ".k", fn);
    v_proj.for_each_param(prefix + ".v", fn);
    out_proj.for_each_param(prefix + ".o", fn);
  }
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, Rng& rng);

  Tensor operator()(const Tensor& x) const { return fc2(ag::relu(fc1(x))); }

  template <typename F>
  void for_each_param(const std::string& prefix, F&& fn) {
    fc1.for_each_param(prefix + ".fc1", fn);
    fc2.for_each_param(prefix + ".fc2", fn);
  }
};

// Collects named handles; the returned tensors alias the module's parameters.
template <typename Module>
std::vector<NamedTensor> named_parameters(Module& module, const std::string& prefix) {
  std::vector<NamedTensor> out;
  module.for_each_param(prefix, [&](const std::string& name, Tensor& t) { out.push_back({name, t}); });
  return out;
}

// Replaces every parameter with an independent copy.
template <typename Module>
void detach_parameters(Module& module) {
  module.for_each_param("", [](const std::string&, Tensor& t) { t = t.clone(); });
}

}  // namespace mtm::nn
