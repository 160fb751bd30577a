#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adasample/ndarray.hpp"

namespace adasample {

struct Parameter {
  std::string name;
  NdArray value;
};

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

struct AdamState {
  std::vector<NdArray> first_moment;
  std::vector<NdArray> second_moment;
  std::int64_t step = 0;

  static AdamState for_params(std::span<const Parameter> params);
};

// One bias-corrected Adam update of every parameter. Throws NumericError
// naming the parameter if any gradient entry is non-finite; in that case no
// parameter is modified.
void adam_step(std::span<Parameter> params, std::span<const NdArray> grads, AdamState& state, float lr,
               const AdamConfig& config = {});

// Uniform in +-sqrt(1/fan_in).
void init_uniform_fan_in(NdArray& weights, int fan_in, std::uint64_t seed);

}  // namespace adasample
