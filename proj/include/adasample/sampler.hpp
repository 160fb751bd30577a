#pragma once

#include <cstdint>
#include <vector>

#include "adasample/ndarray.hpp"
#include "adasample/patterns.hpp"
#include "adasample/tape.hpp"

namespace adasample {

struct NormalizationParams {
  float mean = 0.05f;         // target sample fraction
  float lower = 0.002f;       // minimal sampling probability, lower <= mean
  float epsilon = 1e-7f;

  void validate() const;
};

struct SamplerConfig {
  float alpha = 50.0f;  // sigmoid steepness

  static constexpr float kMaxAlpha = 100.0f;
  void validate() const;
};

// Forward quantities the sampler adjoint needs.
struct SamplerForward {
  int height = 0, width = 0;
  std::vector<float> importance;   // I
  std::vector<float> normalized;   // I'
  double importance_mean = 0.0;    // mu_I
  NormalizationParams params;
};

// I' = min(1, l + I (mu - l) / (mu_I + eps)). importance is [H,W] or [1,H,W].
NdArray normalize_importance(const NdArray& importance, const NormalizationParams& params);
SamplerForward normalize_importance_saved(const NdArray& importance, const NormalizationParams& params);

struct HardSamples {
  NdArray samples;             // [C,H,W], taken * target
  std::vector<std::uint8_t> taken;  // H*W
  std::size_t count() const;
};

// taken = 1{I' - P > 0}. normalized is [H,W] or [1,H,W]; target [C,H,W].
HardSamples sample_hard(const NdArray& normalized, const SamplePattern& pattern, const NdArray& target);
std::vector<std::uint8_t> select_pixels(const NdArray& normalized, const SamplePattern& pattern);

struct SmoothSamples {
  NdArray mask;     // [1,H,W], sig(alpha (I' - P))
  NdArray samples;  // [C,H,W], mask * target
};

SmoothSamples sample_smooth(const NdArray& normalized, const SamplePattern& pattern, const NdArray& target,
                            float alpha);

struct SamplerGradients {
  NdArray importance;  // dI, [1,H,W]
  NdArray pattern;     // dP, computed and not propagated further
  NdArray target;      // dT
};

// Reverse pass of normalize + smooth selection. grad_samples is [C,H,W];
// grad_mask is the adjoint of the fractional mask output ([1,H,W], may be
// empty). The mean term treats mu_I as a function of I.
SamplerGradients sampler_backward(const NdArray& grad_samples, const NdArray& grad_mask,
                                  const SamplerForward& forward, const SamplePattern& pattern,
                                  const NdArray& target, float alpha);

// Tape versions. importance has shape [1,H,W].
Var normalize_importance(const Var& importance, const NormalizationParams& params);

struct SmoothSampleVars {
  Var mask;     // [1,H,W]
  Var samples;  // [C,H,W]
};
// normalized must come from normalize_importance on the same tape.
SmoothSampleVars sample_smooth(const Var& normalized, const SamplePattern& pattern, const NdArray& target,
                               float alpha);

}  // namespace adasample
