#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "adasample/ndarray.hpp"

namespace adasample {

enum class PatternKind { Random, Regular, Halton, Plastic };

PatternKind parse_pattern_kind(const std::string& name);
std::string to_string(PatternKind kind);

// Threshold field P. Every pixel holds k / (H W) for a distinct integer k,
// so the flattened values are a permutation of {0, 1/HW, ..., (HW-1)/HW}.
class SamplePattern {
 public:
  SamplePattern() = default;
  // ranks: pixel -> k, row-major, must be a permutation of 0..HW-1.
  SamplePattern(int height, int width, std::vector<int> ranks);

  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<int>& ranks() const { return ranks_; }
  const std::vector<float>& thresholds() const { return thresholds_; }
  float operator()(int y, int x) const { return thresholds_[static_cast<std::size_t>(y) * width_ + x]; }

  NdArray as_array() const;  // [1,H,W]

  // Cyclic shift; still a permutation field.
  SamplePattern shifted(int dy, int dx) const;

 private:
  int height_ = 0, width_ = 0;
  std::vector<int> ranks_;
  std::vector<float> thresholds_;
};

SamplePattern pattern_random(int height, int width, std::uint64_t seed);
SamplePattern pattern_regular(int height, int width);
SamplePattern pattern_halton(int height, int width);
SamplePattern pattern_plastic(int height, int width);
SamplePattern make_pattern(PatternKind kind, int height, int width, std::uint64_t seed = 0);

// Digit-reversal of n in the given base.
double radical_inverse(std::uint64_t n, int base);
// Real root of x^3 = x + 1 by Newton iteration.
double plastic_number();

// Assigns ranks to pixels by visiting continuous points in [0,1)^2 in order;
// a point whose pixel is already claimed takes the nearest unclaimed pixel,
// searching square rings of growing radius in scanline order.
std::vector<int> rank_by_sequence(int height, int width,
                                  const std::function<std::pair<double, double>(std::uint64_t)>& point_at);

bool is_permutation_field(const SamplePattern& pattern);

}  // namespace adasample
