#include <cmath>

#include "adasample/ops.hpp"
#include "adasample/sampler.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace adasample;

namespace {

// Double-precision reference of normalize + smooth selection, projected on r.
double reference_objective(const std::vector<double>& imp, const SamplePattern& p, const NdArray& target,
                           const NdArray& r, const NormalizationParams& prm, double alpha) {
  const std::size_t n = imp.size();
  double mu_i = 0.0;
  for (double v : imp) mu_i += v;
  mu_i /= static_cast<double>(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ip = std::min(1.0, prm.lower + imp[i] * (static_cast<double>(prm.mean) - prm.lower) /
                                                   (mu_i + static_cast<double>(prm.epsilon)));
    const double s = 1.0 / (1.0 + std::exp(-alpha * (ip - p.thresholds()[i])));
    for (int c = 0; c < target.dim(0); ++c) total += r[c * n + i] * s * target[c * n + i];
  }
  return total;
}

std::vector<double> reference_gradient(const NdArray& imp, const SamplePattern& p, const NdArray& target,
                                       const NdArray& r, const NormalizationParams& prm, double alpha) {
  std::vector<double> x(imp.values().begin(), imp.values().end());
  std::vector<double> g(x.size());
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = reference_objective(x, p, target, r, prm, alpha);
    x[i] = orig - h;
    const double fm = reference_objective(x, p, target, r, prm, alpha);
    x[i] = orig;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

double normwise_rel(const NdArray& a, const std::vector<double>& b) {
  double e = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    e += (a[i] - b[i]) * (a[i] - b[i]);
    na += static_cast<double>(a[i]) * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(e / std::max({na, nb, 1e-300}));
}

NdArray importance_map(int h, int w, std::uint64_t seed, double hi = 1.0) {
  return fdtest::random_array({1, h, w}, seed, 0.0, hi);
}

}  // namespace

TEST_CASE("normalization examples") {
  NormalizationParams prm;
  NdArray ones({1, 4, 4}, 1.0f);
  const NdArray a = normalize_importance(ones, prm);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - 0.05f) < 1e-7);

  NormalizationParams half{0.5f, 0.0f, 1e-7f};
  const NdArray b = normalize_importance(NdArray({2, 2}, std::vector<float>{0, 0, 0, 4}), half);
  CHECK(b[0] == 0.0f);
  CHECK(b[3] == 1.0f);

  const NdArray c = normalize_importance(NdArray({1, 3, 3}), prm);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(0.002).epsilon(1e-6));
}

TEST_CASE("parameter validation") {
  CHECK_THROWS(NormalizationParams{0.05f, 0.1f, 1e-7f}.validate());
  CHECK_THROWS(NormalizationParams{0.0f, 0.0f, 1e-7f}.validate());
  CHECK_THROWS(SamplerConfig{150.0f}.validate());
  CHECK_THROWS(SamplerConfig{0.0f}.validate());
  CHECK_NOTHROW(SamplerConfig{100.0f}.validate());
}

TEST_CASE("scale invariance and monotonicity of normalization") {
  NormalizationParams prm;
  NdArray imp = importance_map(8, 8, 3);
  NdArray scaled = imp;
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= 7.5f;
  const NdArray a = normalize_importance(imp, prm), b = normalize_importance(scaled, prm);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));

  NdArray bumped = imp;
  bumped[10] += 0.3f;
  CHECK(normalize_importance(bumped, prm)[10] >= a[10]);
}

TEST_CASE("hard selection examples") {
  const SamplePattern p = pattern_plastic(4, 4);
  const NdArray target = fdtest::random_array({5, 4, 4}, 1);
  HardSamples all = sample_hard(NdArray({1, 4, 4}, 1.0f), p, target);
  CHECK(all.count() == 16);
  CHECK(all.samples == target);
  HardSamples none = sample_hard(NdArray({1, 4, 4}, 0.0f), p, target);
  CHECK(none.count() == 0);
  CHECK(none.samples == NdArray::zeros_like(target));
  CHECK(sample_hard(NdArray({1, 4, 4}, 0.25f), p, target).count() == 4);
  // tie I' == P is not taken
  CHECK(select_pixels(p.as_array(), p) == std::vector<std::uint8_t>(16, 0));
}

TEST_CASE("smooth selection examples") {
  const SamplePattern p = pattern_random(4, 4, 2);
  const NdArray target = fdtest::random_array({2, 4, 4}, 3);
  SmoothSamples s = sample_smooth(p.as_array(), p, target, 50.0f);
  for (std::size_t i = 0; i < s.samples.size(); ++i) CHECK(s.samples[i] == doctest::Approx(0.5 * target[i]));

  NdArray shifted = p.as_array();
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.1f;
  SmoothSamples t = sample_smooth(shifted, p, target, 50.0f);
  CHECK(t.mask[0] == doctest::Approx(0.993307).epsilon(1e-5));
}

TEST_CASE("steep sigmoid converges to hard selection") {
  NormalizationParams prm;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SamplePattern p = pattern_plastic(32, 32);
    const NdArray norm = normalize_importance(importance_map(32, 32, seed), prm);
    const NdArray target = fdtest::random_array({3, 32, 32}, seed + 50, 0.0, 1.0);
    const HardSamples hard = sample_hard(norm, p, target);
    const SmoothSamples smooth = sample_smooth(norm, p, target, 1e4f);
    double worst = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 1024; ++i) {
        if (std::abs(norm[i] - p.thresholds()[i]) <= 1e-3) continue;
        worst = std::max(worst, std::abs(static_cast<double>(smooth.samples[c * 1024 + i]) - hard.samples[c * 1024 + i]));
      }
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("budget property over random importance maps") {
  NormalizationParams prm;
  const SamplePattern p = pattern_plastic(64, 64);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const NdArray norm = normalize_importance(importance_map(64, 64, 100 + seed), prm);
    std::size_t taken = 0;
    for (auto t : select_pixels(norm, p)) taken += t;
    const double frac = static_cast<double>(taken) / 4096.0;
    CHECK(frac >= 0.8 * prm.mean);
    CHECK(frac <= 1.2 * prm.mean);
  }
}

TEST_CASE("sampler backward: zero adjoint and clamp case split") {
  NormalizationParams prm{0.5f, 0.0f, 1e-7f};
  const SamplePattern p = pattern_random(2, 2, 1);
  const NdArray target({1, 2, 2}, 1.0f);
  const NdArray imp({1, 2, 2}, std::vector<float>{0.2f, 0.4f, 0.6f, 3.0f});
  const SamplerForward fwd = normalize_importance_saved(imp, prm);
  CHECK(fwd.normalized[3] == 1.0f);
  CHECK(fwd.normalized[0] < 1.0f);

  const SamplerGradients zero = sampler_backward(NdArray({1, 2, 2}), NdArray(), fwd, p, target, 50.0f);
  CHECK(zero.importance == NdArray({1, 2, 2}));

  NdArray gs({1, 2, 2}, 1.0f);
  const SamplerGradients g = sampler_backward(gs, NdArray(), fwd, p, target, 50.0f);
  // hand evaluation of the three stages
  const double mu_i = (0.2 + 0.4 + 0.6 + 3.0) / 4.0, denom = mu_i + 1e-7;
  double mean_adj = 0.0;
  std::vector<double> ip_adj(4);
  for (int i = 0; i < 4; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-50.0 * (fwd.normalized[i] - p.thresholds()[i])));
    ip_adj[i] = 50.0 * s * (1.0 - s);
    if (fwd.normalized[i] < 1.0f) mean_adj += imp[i] * (0.0 - 0.5) / (denom * denom) * ip_adj[i];
  }
  CHECK(g.importance[3] == doctest::Approx(mean_adj / 4.0).epsilon(1e-4));
  CHECK(g.importance[0] == doctest::Approx(0.5 / denom * ip_adj[0] + mean_adj / 4.0).epsilon(1e-4));
}

TEST_CASE("sampler backward matches a double-precision finite-difference oracle") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double hi : {1.0, 40.0}) {  // unclamped and partially clamped regimes
      NormalizationParams prm{0.3f, 0.002f, 1e-7f};
      const SamplePattern p = pattern_random(8, 8, seed);
      NdArray x = importance_map(8, 8, seed + 20, 1.0);
      if (hi > 1.0) x[5] = x[17] = static_cast<float>(hi);
      const NdArray target = fdtest::random_array({3, 8, 8}, seed + 30, 0.0, 1.0);
      const NdArray r = fdtest::random_array({3, 8, 8}, seed + 40);
      const SamplerForward fwd = normalize_importance_saved(x, prm);
      if (hi > 1.0) {
        CHECK(fwd.normalized[5] == 1.0f);
      }
      const SamplerGradients g = sampler_backward(r, NdArray(), fwd, p, target, 50.0f);
      CHECK(normwise_rel(g.importance, reference_gradient(x, p, target, r, prm, 50.0)) < 1e-3);
    }
  }
}

TEST_CASE("tape sampler agrees with the standalone backward and finite differences") {
  NormalizationParams prm{0.2f, 0.002f, 1e-7f};
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const SamplePattern p = pattern_plastic(8, 8).shifted(static_cast<int>(seed), 0);
    const NdArray target = fdtest::random_array({2, 8, 8}, seed, 0.0, 1.0);
    const NdArray x = importance_map(8, 8, seed + 3);
    const NdArray r = fdtest::random_array({2, 8, 8}, seed + 4);
    Tape t;
    Var iv = t.leaf(x, true);
    SmoothSampleVars sv = sample_smooth(normalize_importance(iv, prm), p, target, 50.0f);
    t.backward(sv.samples, r);
    const SamplerForward fwd = normalize_importance_saved(x, prm);
    const SamplerGradients g = sampler_backward(r, NdArray(), fwd, p, target, 50.0f);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(iv.grad()[i] == doctest::Approx(g.importance[i]).epsilon(1e-4));

    auto graph = [&](Tape&, const std::vector<Var>& v) {
      return sample_smooth(normalize_importance(v[0], prm), p, target, 50.0f).samples;
    };
    CHECK(fdtest::check(graph, {x}, 0, seed).max_rel < 1e-3);
    auto mask_graph = [&](Tape&, const std::vector<Var>& v) {
      return sample_smooth(normalize_importance(v[0], prm), p, target, 50.0f).mask;
    };
    CHECK(fdtest::check(mask_graph, {x}, 0, seed).max_rel < 1e-3);
  }
}
