#include "adasample/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace adasample {

void NormalizationParams::validate() const {
  if (!(mean > 0.0f && mean <= 1.0f)) throw std::invalid_argument("normalization: mean must lie in (0,1]");
  if (!(lower > 0.0f || lower == 0.0f) || lower > mean) {
    throw std::invalid_argument("normalization: lower bound must satisfy 0 <= l <= mean");
  }
  if (!(epsilon > 0.0f)) throw std::invalid_argument("normalization: epsilon must be positive");
}

void SamplerConfig::validate() const {
  if (!(alpha > 0.0f)) throw std::invalid_argument("sampler: alpha must be positive");
  if (alpha > kMaxAlpha) throw std::invalid_argument("sampler: alpha above 100 is not supported");
}

namespace {

struct Plane {
  int h, w;
};

Plane plane_of(const NdArray& map, const char* what) {
  if (map.rank() == 2) return {map.dim(0), map.dim(1)};
  if (map.rank() == 3 && map.dim(0) == 1) return {map.dim(1), map.dim(2)};
  throw ShapeError(std::string(what) + ": expected [H,W] or [1,H,W], got " + shape_string(map.shape()));
}

void require_pattern(const SamplePattern& pattern, Plane p, const char* what) {
  if (pattern.height() != p.h) throw ShapeError(std::string(what) + ": pattern height differs from dimension 1");
  if (pattern.width() != p.w) throw ShapeError(std::string(what) + ": pattern width differs from dimension 2");
}

void require_target(const NdArray& target, Plane p, const char* what) {
  require_rank(target, 3, what);
  if (target.dim(1) != p.h) throw ShapeError(std::string(what) + ": target dimension 1 (height) differs");
  if (target.dim(2) != p.w) throw ShapeError(std::string(what) + ": target dimension 2 (width) differs");
}

inline float selection_weight(float normalized, float threshold, float alpha) {
  const double z = static_cast<double>(alpha) * (static_cast<double>(normalized) - threshold);
  return static_cast<float>(1.0 / (1.0 + std::exp(-z)));
}

// Adjoint of I' -> I through the clamp and the mean mu_I.
NdArray normalize_backward(const NdArray& grad_normalized, const SamplerForward& fwd) {
  const std::size_t n = fwd.importance.size();
  const double denom = fwd.importance_mean + fwd.params.epsilon;
  const double scale = (static_cast<double>(fwd.params.mean) - fwd.params.lower) / denom;
  const double mean_coeff = (static_cast<double>(fwd.params.lower) - fwd.params.mean) / (denom * denom);
  NdArray grad({1, fwd.height, fwd.width});
  double grad_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (fwd.normalized[i] < 1.0f) {
      grad[i] = static_cast<float>(scale * grad_normalized[i]);
      grad_mean += fwd.importance[i] * mean_coeff * grad_normalized[i];
    }
  }
  const float shared = static_cast<float>(grad_mean / static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) grad[i] += shared;
  return grad;
}

}  // namespace

SamplerForward normalize_importance_saved(const NdArray& importance, const NormalizationParams& params) {
  params.validate();
  const Plane p = plane_of(importance, "normalize_importance");
  SamplerForward fwd;
  fwd.height = p.h;
  fwd.width = p.w;
  fwd.params = params;
  fwd.importance.assign(importance.data(), importance.data() + importance.size());
  fwd.importance_mean = mean(importance.values());
  const double scale = (static_cast<double>(params.mean) - params.lower) / (fwd.importance_mean + params.epsilon);
  fwd.normalized.resize(importance.size());
  for (std::size_t i = 0; i < importance.size(); ++i) {
    fwd.normalized[i] = static_cast<float>(std::min(1.0, params.lower + importance[i] * scale));
  }
  return fwd;
}

NdArray normalize_importance(const NdArray& importance, const NormalizationParams& params) {
  SamplerForward fwd = normalize_importance_saved(importance, params);
  return NdArray({1, fwd.height, fwd.width}, std::move(fwd.normalized));
}

std::size_t HardSamples::count() const {
  std::size_t n = 0;
  for (auto t : taken) n += t;
  return n;
}

std::vector<std::uint8_t> select_pixels(const NdArray& normalized, const SamplePattern& pattern) {
  const Plane p = plane_of(normalized, "select_pixels");
  require_pattern(pattern, p, "select_pixels");
  std::vector<std::uint8_t> taken(normalized.size());
  for (std::size_t i = 0; i < taken.size(); ++i) taken[i] = normalized[i] - pattern.thresholds()[i] > 0.0f ? 1 : 0;
  return taken;
}

HardSamples sample_hard(const NdArray& normalized, const SamplePattern& pattern, const NdArray& target) {
  const Plane p = plane_of(normalized, "sample_hard");
  require_target(target, p, "sample_hard");
  HardSamples out;
  out.taken = select_pixels(normalized, pattern);
  out.samples = NdArray::zeros_like(target);
  const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
  for (int c = 0; c < target.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (out.taken[i]) out.samples[c * plane + i] = target[c * plane + i];
    }
  }
  return out;
}

SmoothSamples sample_smooth(const NdArray& normalized, const SamplePattern& pattern, const NdArray& target,
                            float alpha) {
  const Plane p = plane_of(normalized, "sample_smooth");
  require_pattern(pattern, p, "sample_smooth");
  require_target(target, p, "sample_smooth");
  SmoothSamples out;
  out.mask = NdArray({1, p.h, p.w});
  const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
  for (std::size_t i = 0; i < plane; ++i) out.mask[i] = selection_weight(normalized[i], pattern.thresholds()[i], alpha);
  out.samples = NdArray::zeros_like(target);
  for (int c = 0; c < target.dim(0); ++c) {
    for (std::size_t i = 0; i < plane; ++i) out.samples[c * plane + i] = out.mask[i] * target[c * plane + i];
  }
  return out;
}

SamplerGradients sampler_backward(const NdArray& grad_samples, const NdArray& grad_mask,
                                  const SamplerForward& forward, const SamplePattern& pattern,
                                  const NdArray& target, float alpha) {
  const Plane p{forward.height, forward.width};
  require_target(target, p, "sampler_backward");
  require_same_shape(grad_samples, target, "sampler_backward grad_samples");
  const std::size_t plane = static_cast<std::size_t>(p.h) * p.w;
  const int channels = target.dim(0);

  SamplerGradients g;
  g.target = NdArray::zeros_like(target);
  g.pattern = NdArray({1, p.h, p.w});
  NdArray grad_normalized({1, p.h, p.w});
  for (std::size_t i = 0; i < plane; ++i) {
    const float s = selection_weight(forward.normalized[i], pattern.thresholds()[i], alpha);
    const double dsig = static_cast<double>(s) * (1.0 - s);
    double dot = grad_mask.empty() ? 0.0 : grad_mask[i];
    for (int c = 0; c < channels; ++c) {
      g.target[c * plane + i] = s * grad_samples[c * plane + i];
      dot += static_cast<double>(target[c * plane + i]) * grad_samples[c * plane + i];
    }
    grad_normalized[i] = static_cast<float>(alpha * dsig * dot);
    g.pattern[i] = -grad_normalized[i];
  }
  g.importance = normalize_backward(grad_normalized, forward);
  return g;
}

Var normalize_importance(const Var& importance, const NormalizationParams& params) {
  auto fwd = std::make_shared<SamplerForward>(normalize_importance_saved(importance.value(), params));
  NdArray out({1, fwd->height, fwd->width}, fwd->normalized);
  const int in_id = importance.id();
  return importance.tape()->record(OpKind::NormalizeImportance, std::move(out), {importance},
                                   [in_id, fwd](Tape& t, int self) {
                                     if (!t.requires_grad(in_id)) return;
                                     const NdArray gi = normalize_backward(t.grad(self), *fwd);
                                     NdArray& dst = t.grad(in_id);
                                     for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gi[i];
                                   });
}

SmoothSampleVars sample_smooth(const Var& normalized, const SamplePattern& pattern, const NdArray& target,
                               float alpha) {
  SmoothSamples fwd = sample_smooth(normalized.value(), pattern, target, alpha);
  Tape* tape = normalized.tape();
  const int in_id = normalized.id();
  Var mask = tape->record(OpKind::SampleSmooth, fwd.mask, {normalized}, [in_id, alpha](Tape& t, int self) {
    if (!t.requires_grad(in_id)) return;
    const NdArray& s = t.value(self);
    const NdArray& g = t.grad(self);
    NdArray& gi = t.grad(in_id);
    for (std::size_t i = 0; i < gi.size(); ++i) {
      gi[i] += static_cast<float>(alpha * static_cast<double>(s[i]) * (1.0 - s[i]) * g[i]);
    }
  });

  const int mask_id = mask.id();
  auto target_copy = std::make_shared<NdArray>(target);
  Var samples = tape->record(OpKind::Mul, std::move(fwd.samples), {mask}, [mask_id, target_copy](Tape& t, int self) {
    if (!t.requires_grad(mask_id)) return;
    const NdArray& g = t.grad(self);
    const NdArray& tgt = *target_copy;
    NdArray& gm = t.grad(mask_id);
    const std::size_t plane = gm.size();
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (int c = 0; c < tgt.dim(0); ++c) dot += static_cast<double>(tgt[c * plane + i]) * g[c * plane + i];
      gm[i] += static_cast<float>(dot);
    }
  });
  return {mask, samples};
}

}  // namespace adasample
