#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "adasample/random.hpp"
#include "adasample/render.hpp"
#include "adasample/volume.hpp"

namespace adasample {

// Counts over [0,1] with right-open bins; the last bin is closed. Values
// outside [0,1] are ignored.
std::vector<std::size_t> histogram(const VolumeGrid& volume, int bins);
std::vector<std::size_t> histogram(const std::vector<float>& values, int bins);

struct GmmComponent {
  double weight = 0.0, mean = 0.0, stddev = 0.0;
};

struct Gmm1D {
  std::vector<GmmComponent> components;
  double log_likelihood = 0.0;
  double bic = 0.0;
  int iterations = 0;
  std::vector<double> trace;  // log-likelihood after every EM iteration

  int k() const { return static_cast<int>(components.size()); }
  double pdf(double x) const;
  // Draws a component by weight, then a normal value from it.
  double sample(Rng& rng) const;
};

struct EmOptions {
  int max_iterations = 100;
  double tolerance = 1e-6;  // relative log-likelihood change
  double min_stddev = 1e-4;
};

// EM from a k-means++ seeding. Throws std::logic_error if an iteration
// lowers the log-likelihood.
Gmm1D fit_gmm(const std::vector<double>& samples, int k, std::uint64_t seed, const EmOptions& options = {});

// Fits k = 1..max_k and keeps the lowest BIC = -2 logL + (3k - 1) ln n.
// Needs at least 10 max_k samples.
Gmm1D fit_gmm_bic(const std::vector<double>& samples, int max_k, std::uint64_t seed, const EmOptions& options = {},
                  std::vector<double>* bics = nullptr);

// Up to max_count voxel densities above empty_below, subsampled without
// replacement.
std::vector<double> density_samples(const VolumeGrid& volume, std::size_t max_count, std::uint64_t seed,
                                    float empty_below = 1e-3f);

struct Colormap {
  std::string name;
  std::vector<std::array<float, 4>> stops;  // position, r, g, b

  std::array<float, 3> operator()(float t) const;
};

const std::vector<Colormap>& builtin_colormaps();
const Colormap& colormap_by_name(const std::string& name);

struct TfPeak {
  float density = 0.0f;
  float width = 0.0f;  // half-width of the opacity tent
  float opacity = 0.0f;
};

struct RandomTf {
  std::vector<TfPeak> peaks;
  TransferFunction tf;
  std::string colormap;
};

// 3 to 5 tent-shaped opacity peaks at GMM-drawn densities, width in
// [0.005, 0.03], height in [0.1, 1]; overlapping tents combine by max.
// A null colormap picks one of the built-ins from the seed.
RandomTf sample_random_tf(const Gmm1D& gmm, const Colormap* colormap, std::uint64_t seed);

// Exact piecewise-linear form of the max of the tents, colored by the map.
TransferFunction tents_to_tf(const std::vector<TfPeak>& peaks, const Colormap& colormap);

}  // namespace adasample
