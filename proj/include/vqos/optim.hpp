#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vqos/rng.hpp"
#include "vqos/tensor.hpp"

namespace vqos {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one parameter list, in the list's order.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam_state(std::span<const Tensor> params, AdamConfig config);

/// One bias-corrected Adam update using each parameter's accumulated grad.
void adam_step(std::span<Tensor> params, AdamState& state);

/// He-uniform: U(-b, b) with b = sqrt(6 / fan_in). For ReLU-family layers.
void he_uniform(Tensor& t, std::size_t fan_in, Rng& rng);
/// Xavier-uniform: b = sqrt(6 / (fan_in + fan_out)). For sigmoid/tanh heads.
void xavier_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace vqos
