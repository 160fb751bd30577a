#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace adasample {

// Operand shapes disagree. The message names the offending dimension.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced or received a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File missing, unreadable, truncated or malformed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_string(const std::vector<int>& shape);

// Dense row-major float32 array.
class NdArray {
 public:
  NdArray() = default;
  explicit NdArray(std::vector<int> shape, float fill = 0.0f);
  NdArray(std::vector<int> shape, std::vector<float> values);

  static NdArray zeros_like(const NdArray& other) { return NdArray(other.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // [C,H,W] accessors.
  float& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x]; }
  float at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  // Pointer to channel c of a [C,H,W] array.
  float* channel(int c) { return data_.data() + static_cast<std::size_t>(c) * shape_[1] * shape_[2]; }
  const float* channel(int c) const {
    return data_.data() + static_cast<std::size_t>(c) * shape_[1] * shape_[2];
  }

  NdArray reshaped(std::vector<int> shape) const;
  void fill(float v);
  bool all_finite() const;

  bool operator==(const NdArray& other) const = default;

 private:
  std::vector<int> shape_;
  std::vector<float> data_;
};

// Throws ShapeError unless a and b have identical shapes.
void require_same_shape(const NdArray& a, const NdArray& b, const char* what);
// Throws ShapeError unless x has the given rank.
void require_rank(const NdArray& x, int rank, const char* what);

// Sum in float64 using pairwise blocks; the order is fixed so the result
// does not depend on threading.
double sum(std::span<const float> values);
double mean(std::span<const float> values);

}  // namespace adasample
