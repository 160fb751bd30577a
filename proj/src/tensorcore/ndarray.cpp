#include "adasample/ndarray.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace adasample {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] < 0) throw ShapeError("negative extent in dimension " + std::to_string(i));
    n *= static_cast<std::size_t>(shape[i]);
  }
  return n;
}

}  // namespace

NdArray::NdArray(std::vector<int> shape, float fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

NdArray::NdArray(std::vector<int> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(data_.size()) +
                     " values");
  }
}

int NdArray::dim(int axis) const {
  if (axis < 0 || axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

NdArray NdArray::reshaped(std::vector<int> shape) const { return NdArray(std::move(shape), data_); }

void NdArray::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

bool NdArray::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const NdArray& a, const NdArray& b, const char* what) {
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(what) + ": rank mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  for (int i = 0; i < a.rank(); ++i) {
    if (a.shape()[i] != b.shape()[i]) {
      throw ShapeError(std::string(what) + ": dimension " + std::to_string(i) + " differs (" +
                       std::to_string(a.shape()[i]) + " vs " + std::to_string(b.shape()[i]) + ")");
    }
  }
}

void require_rank(const NdArray& x, int rank, const char* what) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_string(x.shape()));
  }
}

double sum(std::span<const float> values) {
  constexpr std::size_t kBlock = 256;
  if (values.size() <= kBlock) {
    double s = 0.0;
    for (float v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return sum(values.first(half)) + sum(values.subspan(half));
}

double mean(std::span<const float> values) {
  return values.empty() ? 0.0 : sum(values) / static_cast<double>(values.size());
}

}  // namespace adasample
