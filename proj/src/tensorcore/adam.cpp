#include "adasample/adam.hpp"

#include <cmath>

#include "adasample/random.hpp"

namespace adasample {

AdamState AdamState::for_params(std::span<const Parameter> params) {
  AdamState s;
  for (const auto& p : params) {
    s.first_moment.push_back(NdArray::zeros_like(p.value));
    s.second_moment.push_back(NdArray::zeros_like(p.value));
  }
  return s;
}

void adam_step(std::span<Parameter> params, std::span<const NdArray> grads, AdamState& state, float lr,
               const AdamConfig& config) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state holds " + std::to_string(state.first_moment.size()) +
                     " parameters, expected " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i].value, grads[i], ("adam_step gradient for " + params[i].name).c_str());
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for parameter " + params[i].name);
  }

  state.step += 1;
  const double b1 = config.beta1, b2 = config.beta2;
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    NdArray& p = params[i].value;
    NdArray& m = state.first_moment[i];
    NdArray& v = state.second_moment[i];
    const NdArray& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = b1 * m[j] + (1.0 - b1) * gj;
      const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double mhat = mj / corr1;
      const double vhat = vj / corr2;
      p[j] = static_cast<float>(p[j] - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

void init_uniform_fan_in(NdArray& weights, int fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = std::sqrt(1.0 / std::max(fan_in, 1));
  for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace adasample
