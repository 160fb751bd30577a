#pragma once

#include <vector>

#include "adasample/ndarray.hpp"
#include "adasample/tape.hpp"

namespace adasample {

// Sparse image with a per-pixel confidence. mask is [1,H,W] with values in
// [0,1] (fractional while training, binary at validation); data is [C,H,W].
struct SparseImage {
  NdArray mask;
  NdArray data;
};

// One level of the mipmap hierarchy as seen by the forward pass.
struct PullPushLevel {
  int height = 0, width = 0;
  NdArray mask_in;  // [1,h,w]
  NdArray data_in;  // [C,h,w]
  bool terminal = false;

  // pull results on the coarse grid (non-terminal levels only)
  int coarse_height = 0, coarse_width = 0;
  std::vector<float> weight_sum;  // sum of child masks per coarse pixel
  std::vector<int> argmax;        // flat fine index of the max child, -1 if empty
  NdArray mask_low, data_low;     // after pull, before recursion
  NdArray mask_filled, data_filled;  // coarse level after recursion
};

struct PullPushState {
  std::vector<PullPushLevel> levels;  // finest first
};

struct PullPushResult {
  NdArray mask;  // [1,H,W]
  NdArray data;  // [C,H,W]
  PullPushState state;
};

// Weighted pull-push inpainting. Pull: max-pool the mask and take the
// mask-weighted mean of the data over each 2x2 cell. Recursion stops at 1x1
// or once every mask value reaches 1. Push: weighted bilinear gather
// (9,3,3,1)/16 from the coarse level, blended with the fine level by the
// fine mask. Odd extents are padded with zero-mask pixels.
PullPushResult pullpush_forward(const SparseImage& sparse);

struct PullPushGradients {
  NdArray mask;  // [1,H,W]
  NdArray data;  // [C,H,W]
};

// Reverse pass: adjoint of the finest push, recursion, then each pull.
// Max-pool adjoints go to the first maximal child in row-major order.
PullPushGradients pullpush_backward(const NdArray& grad_mask_out, const NdArray& grad_data_out,
                                    const PullPushState& state);

struct PullPushVars {
  Var mask;
  Var data;
};

PullPushVars pullpush(const Var& mask, const Var& data);

}  // namespace adasample
