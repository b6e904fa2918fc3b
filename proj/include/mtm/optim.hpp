#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtm/autograd.hpp"

namespace mtm::ag {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct AdamOptions {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moment buffers are keyed by position in the parameter
/// list handed to the constructor.
class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamOptions options);

  // Applies one update from the accumulated gradients, then clears them.
  // Throws ContractError if any parameter has no gradient.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  double learning_rate() const { return options_.learning_rate; }
  std::int64_t step_count() const { return step_count_; }

  const std::vector<NamedTensor>& params() const { return params_; }

  // Serialization hooks.
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::int64_t step_count, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  std::vector<NamedTensor> params_;
  AdamOptions options_;
  std::int64_t step_count_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace mtm::ag
