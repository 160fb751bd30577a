#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "adasample/ndarray.hpp"
#include "adasample/tape.hpp"

namespace adasample {

struct LossWeights {
  float mask = 5.0f;      // L1 on the mask channel
  float normal = 50.0f;   // L1 on the normal channels
  float depth = 5.0f;     // L1 on the depth channel
  float bce = 5.0f;
  float bounds = 0.01f;
  float prior = 0.1f;

  void validate() const;
};

// Mean |O - T| over channels [begin, begin+count). Subgradient 0 at ties.
Var l1_channel(const Var& out, const NdArray& target, int begin, int count = 1);

constexpr float kBceClamp = 1e-6f;
// -mean(T log O + (1-T) log(1-O)) with O clamped to [delta, 1-delta].
Var bce_mask(const Var& out_mask, const NdArray& target_mask);

// mean max(0, (2 O - 1)^2 - 1).
Var bounds_loss(const Var& out_mask);

// (1 - mean I)^2.
Var importance_prior(const Var& importance);

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

// Mean local SSIM over channels [begin, begin+count) of [C,H,W] arrays.
// Gaussian windows are truncated at the border and renormalized.
double ssim(const NdArray& a, const NdArray& b, const SsimParams& params = {});
double ssim(const NdArray& a, const NdArray& b, int begin, int count, const SsimParams& params = {});

// 1 - ssim, differentiable in out.
Var ssim_loss(const Var& out, const NdArray& target, int begin, int count, const SsimParams& params = {});

// -10 log10(MSE); +infinity when identical.
double psnr(const NdArray& a, const NdArray& b);

struct LossTerms {
  Var total;
  // unweighted term values for logging
  std::vector<std::pair<std::string, float>> parts;
};

// Iso layout: 0 mask, 1..3 normal, 4 depth.
LossTerms total_loss_iso(const Var& out, const NdArray& target, const Var& importance, const LossWeights& weights);

// L1 on rgba plus (1 - SSIM) on rgb.
LossTerms total_loss_dvr(const Var& out, const NdArray& target);

struct MetricRecord {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Quartiles {
  double q25 = 0.0, median = 0.0, q75 = 0.0;
};

// Linear interpolation between order statistics.
Quartiles quartiles(std::vector<double> values);

struct MetricReport {
  std::vector<MetricRecord> records;

  Quartiles psnr_summary() const;
  Quartiles ssim_summary() const;
};

// "id psnr ssim" per record (psnr may be "inf"), then lines
// "summary psnr|ssim q25 median q75".
void write_report(std::ostream& out, const MetricReport& report);
void write_report(const std::string& path, const MetricReport& report);
MetricReport read_report(const std::string& path);

}  // namespace adasample
