#pragma once

#include <utility>
#include <vector>

#include "adasample/tape.hpp"

namespace adasample {

enum class UnaryKind { Relu, Sigmoid, Softplus, Clamp01 };
enum class BinaryKind { Add, Mul };
enum class ResampleKind { BilinearUp, AvgPoolDown, MaxPoolDown };

// Zero-padded 3x3 cross-correlation, stride one.
// input [Cin,H,W], weights [Cout,Cin,3,3], bias [Cout] -> [Cout,H,W].
Var conv3x3(const Var& input, const Var& weights, const Var& bias);

Var elementwise(const Var& input, UnaryKind kind);
Var elementwise(const Var& a, const Var& b, BinaryKind kind);

inline Var relu(const Var& x) { return elementwise(x, UnaryKind::Relu); }
inline Var sigmoid(const Var& x) { return elementwise(x, UnaryKind::Sigmoid); }
inline Var softplus(const Var& x) { return elementwise(x, UnaryKind::Softplus); }
inline Var clamp01(const Var& x) { return elementwise(x, UnaryKind::Clamp01); }
inline Var add(const Var& a, const Var& b) { return elementwise(a, b, BinaryKind::Add); }
inline Var mul(const Var& a, const Var& b) { return elementwise(a, b, BinaryKind::Mul); }

Var scale(const Var& x, float factor);

// [C,H,W] resampling by a factor of two. Bilinear upsampling places fine
// samples at the quarter points of each coarse cell (weights 3/4, 1/4,
// replicated borders). Pooling of odd extents replicates the last row or
// column.
Var resample2x(const Var& input, ResampleKind kind);

inline Var upsample2x(const Var& x) { return resample2x(x, ResampleKind::BilinearUp); }
inline Var avg_pool2x(const Var& x) { return resample2x(x, ResampleKind::AvgPoolDown); }
inline Var max_pool2x(const Var& x) { return resample2x(x, ResampleKind::MaxPoolDown); }

// Channel-axis concatenation and slicing of [C,H,W] arrays.
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, int begin, int count);

// Scales channels [begin, begin+count) of every pixel to unit length.
// Pixels whose vector norm is below 1e-6 are passed through unchanged.
Var unit_normalize(const Var& x, int begin, int count);

// Scalar [1] reductions.
Var sum(const Var& x);
Var weighted_sum(const std::vector<std::pair<float, Var>>& terms);

// Plain forward kernels, shared with non-differentiable callers.
namespace kernels {
void conv3x3_forward(const NdArray& input, const NdArray& weights, const NdArray& bias, NdArray& out);
NdArray upsample2x(const NdArray& input);
NdArray avg_pool2x(const NdArray& input);
}  // namespace kernels

}  // namespace adasample
