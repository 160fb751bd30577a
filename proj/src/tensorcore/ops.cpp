#include "adasample/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "adasample/parallel.hpp"

namespace adasample {

namespace {

struct Chw {
  int c, h, w;
};

Chw chw_of(const NdArray& x, const char* what) {
  require_rank(x, 3, what);
  return {x.dim(0), x.dim(1), x.dim(2)};
}

inline float sigmoid_scalar(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

inline float softplus_scalar(float x) { return std::max(x, 0.0f) + std::log1p(std::exp(-std::abs(x))); }

// Eight independent lanes so the compiler can vectorize without reassociation.
inline float dot_lanes(const float* a, const float* b, int n) {
  float lane[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lane[0] + lane[4]) + (lane[1] + lane[5])) + ((lane[2] + lane[6]) + (lane[3] + lane[7])) + tail;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv3x3

namespace kernels {

void conv3x3_forward(const NdArray& input, const NdArray& weights, const NdArray& bias, NdArray& out) {
  const auto [cin, h, w] = chw_of(input, "conv3x3 input");
  require_rank(weights, 4, "conv3x3 weights");
  const int cout = weights.dim(0);
  if (weights.dim(1) != cin) {
    throw ShapeError("conv3x3: weights dimension 1 (input channels) is " + std::to_string(weights.dim(1)) +
                     " but input has " + std::to_string(cin) + " channels");
  }
  if (weights.dim(2) != 3 || weights.dim(3) != 3) throw ShapeError("conv3x3: weights dimensions 2,3 must be 3x3");
  require_rank(bias, 1, "conv3x3 bias");
  if (bias.dim(0) != cout) {
    throw ShapeError("conv3x3: bias dimension 0 is " + std::to_string(bias.dim(0)) + ", expected " +
                     std::to_string(cout));
  }
  if (h < 1 || w < 1) throw ShapeError("conv3x3: spatial dimensions must be >= 1");

  out = NdArray({cout, h, w});
  parallel_for(0, cout, [&](int co) {
    float* o = out.channel(co);
    std::fill(o, o + static_cast<std::size_t>(h) * w, bias[co]);
    for (int ci = 0; ci < cin; ++ci) {
      const float* x = input.channel(ci);
      const float* k = weights.data() + (static_cast<std::size_t>(co) * cin + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          const float kv = k[ky * 3 + kx];
          for (int y = y0; y < y1; ++y) {
            float* orow = o + static_cast<std::size_t>(y) * w;
            const float* xrow = x + static_cast<std::size_t>(y + dy) * w + dx;
            for (int xx = x0; xx < x1; ++xx) orow[xx] += kv * xrow[xx];
          }
        }
      }
    }
  });
}

NdArray upsample2x(const NdArray& input) {
  const auto [c, h, w] = chw_of(input, "upsample2x");
  NdArray out({c, 2 * h, 2 * w});
  parallel_for(0, c, [&](int ch) {
    for (int y = 0; y < 2 * h; ++y) {
      const int iy = y / 2;
      const int ny = std::clamp(iy + ((y & 1) ? 1 : -1), 0, h - 1);
      for (int x = 0; x < 2 * w; ++x) {
        const int ix = x / 2;
        const int nx = std::clamp(ix + ((x & 1) ? 1 : -1), 0, w - 1);
        out.at(ch, y, x) = 0.5625f * input.at(ch, iy, ix) + 0.1875f * input.at(ch, ny, ix) +
                           0.1875f * input.at(ch, iy, nx) + 0.0625f * input.at(ch, ny, nx);
      }
    }
  });
  return out;
}

NdArray avg_pool2x(const NdArray& input) {
  const auto [c, h, w] = chw_of(input, "avg_pool2x");
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  NdArray out({c, oh, ow});
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      const int y0 = 2 * y, y1 = std::min(2 * y + 1, h - 1);
      for (int x = 0; x < ow; ++x) {
        const int x0 = 2 * x, x1 = std::min(2 * x + 1, w - 1);
        out.at(ch, y, x) =
            0.25f * (input.at(ch, y0, x0) + input.at(ch, y0, x1) + input.at(ch, y1, x0) + input.at(ch, y1, x1));
      }
    }
  }
  return out;
}

}  // namespace kernels

Var conv3x3(const Var& input, const Var& weights, const Var& bias) {
  NdArray out;
  kernels::conv3x3_forward(input.value(), weights.value(), bias.value(), out);
  const int in_id = input.id(), w_id = weights.id(), b_id = bias.id();
  return input.tape()->record(
      OpKind::Conv3x3, std::move(out), {input, weights, bias}, [in_id, w_id, b_id](Tape& t, int self) {
        const NdArray& x = t.value(in_id);
        const NdArray& k = t.value(w_id);
        const NdArray& g = t.grad(self);
        const int cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = k.dim(0);

        if (t.requires_grad(in_id)) {
          NdArray& gx = t.grad(in_id);
          parallel_for(0, cin, [&](int ci) {
            float* gxc = gx.channel(ci);
            for (int co = 0; co < cout; ++co) {
              const float* gc = g.channel(co);
              const float* kk = k.data() + (static_cast<std::size_t>(co) * cin + ci) * 9;
              for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                  const int dx = kx - 1;
                  const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                  const float kv = kk[ky * 3 + kx];
                  for (int y = y0; y < y1; ++y) {
                    const float* grow = gc + static_cast<std::size_t>(y) * w;
                    float* xrow = gxc + static_cast<std::size_t>(y + dy) * w + dx;
                    for (int xx = x0; xx < x1; ++xx) xrow[xx] += kv * grow[xx];
                  }
                }
              }
            }
          });
        }
        if (t.requires_grad(w_id)) {
          NdArray& gk = t.grad(w_id);
          parallel_for(0, cout, [&](int co) {
            const float* gc = g.channel(co);
            for (int ci = 0; ci < cin; ++ci) {
              const float* xc = x.channel(ci);
              for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                  const int dx = kx - 1;
                  const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                  double acc = 0.0;
                  for (int y = y0; y < y1; ++y) {
                    const float* grow = gc + static_cast<std::size_t>(y) * w;
                    const float* xrow = xc + static_cast<std::size_t>(y + dy) * w + dx;
                    acc += dot_lanes(grow + x0, xrow + x0, x1 - x0);
                  }
                  gk[(static_cast<std::size_t>(co) * cin + ci) * 9 + ky * 3 + kx] += static_cast<float>(acc);
                }
              }
            }
          });
        }
        if (t.requires_grad(b_id)) {
          NdArray& gb = t.grad(b_id);
          const std::size_t plane = static_cast<std::size_t>(h) * w;
          for (int co = 0; co < cout; ++co) {
            gb[co] += static_cast<float>(adasample::sum(std::span<const float>(g.channel(co), plane)));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// elementwise

Var elementwise(const Var& input, UnaryKind kind) {
  const NdArray& x = input.value();
  NdArray y = NdArray::zeros_like(x);
  const std::size_t n = x.size();
  OpKind op = OpKind::Relu;
  switch (kind) {
    case UnaryKind::Relu:
      op = OpKind::Relu;
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case UnaryKind::Sigmoid:
      op = OpKind::Sigmoid;
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid_scalar(x[i]);
      break;
    case UnaryKind::Softplus:
      op = OpKind::Softplus;
      for (std::size_t i = 0; i < n; ++i) y[i] = softplus_scalar(x[i]);
      break;
    case UnaryKind::Clamp01:
      op = OpKind::Clamp01;
      for (std::size_t i = 0; i < n; ++i) y[i] = std::clamp(x[i], 0.0f, 1.0f);
      break;
  }
  const int in_id = input.id();
  return input.tape()->record(op, std::move(y), {input}, [in_id, kind](Tape& t, int self) {
    if (!t.requires_grad(in_id)) return;
    const NdArray& x = t.value(in_id);
    const NdArray& y = t.value(self);
    const NdArray& g = t.grad(self);
    NdArray& gx = t.grad(in_id);
    const std::size_t n = x.size();
    switch (kind) {
      case UnaryKind::Relu:
        for (std::size_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0f ? g[i] : 0.0f;
        break;
      case UnaryKind::Sigmoid:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (1.0f - y[i]);
        break;
      case UnaryKind::Softplus:
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * sigmoid_scalar(x[i]);
        break;
      case UnaryKind::Clamp01:
        for (std::size_t i = 0; i < n; ++i) gx[i] += (x[i] > 0.0f && x[i] < 1.0f) ? g[i] : 0.0f;
        break;
    }
  });
}

Var elementwise(const Var& a, const Var& b, BinaryKind kind) {
  require_same_shape(a.value(), b.value(), kind == BinaryKind::Add ? "add" : "mul");
  const NdArray& x = a.value();
  const NdArray& z = b.value();
  NdArray y = NdArray::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = kind == BinaryKind::Add ? x[i] + z[i] : x[i] * z[i];
  const int a_id = a.id(), b_id = b.id();
  return a.tape()->record(kind == BinaryKind::Add ? OpKind::Add : OpKind::Mul, std::move(y), {a, b},
                          [a_id, b_id, kind](Tape& t, int self) {
                            const NdArray& g = t.grad(self);
                            // Resolve both adjoints before writing so a == b works.
                            const bool need_a = t.requires_grad(a_id);
                            const bool need_b = t.requires_grad(b_id);
                            NdArray ga, gb;
                            if (kind == BinaryKind::Add) {
                              if (need_a) ga = g;
                              if (need_b) gb = g;
                            } else {
                              const NdArray& x = t.value(a_id);
                              const NdArray& z = t.value(b_id);
                              if (need_a) {
                                ga = NdArray::zeros_like(g);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * z[i];
                              }
                              if (need_b) {
                                gb = NdArray::zeros_like(g);
                                for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * x[i];
                              }
                            }
                            if (need_a) {
                              NdArray& dst = t.grad(a_id);
                              for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += ga[i];
                            }
                            if (need_b) {
                              NdArray& dst = t.grad(b_id);
                              for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gb[i];
                            }
                          });
}

Var scale(const Var& x, float factor) {
  NdArray y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= factor;
  const int in_id = x.id();
  return x.tape()->record(OpKind::Scale, std::move(y), {x}, [in_id, factor](Tape& t, int self) {
    if (!t.requires_grad(in_id)) return;
    const NdArray& g = t.grad(self);
    NdArray& gx = t.grad(in_id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

// ---------------------------------------------------------------------------
// resampling

Var resample2x(const Var& input, ResampleKind kind) {
  const NdArray& x = input.value();
  const auto [c, h, w] = chw_of(x, "resample2x");
  const int in_id = input.id();
  Tape* tape = input.tape();

  if (kind == ResampleKind::BilinearUp) {
    return tape->record(OpKind::Upsample2x, kernels::upsample2x(x), {input}, [in_id](Tape& t, int self) {
      if (!t.requires_grad(in_id)) return;
      const NdArray& g = t.grad(self);
      NdArray& gx = t.grad(in_id);
      const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
      parallel_for(0, c, [&](int ch) {
        for (int y = 0; y < 2 * h; ++y) {
          const int iy = y / 2;
          const int ny = std::clamp(iy + ((y & 1) ? 1 : -1), 0, h - 1);
          for (int xx = 0; xx < 2 * w; ++xx) {
            const int ix = xx / 2;
            const int nx = std::clamp(ix + ((xx & 1) ? 1 : -1), 0, w - 1);
            const float gv = g.at(ch, y, xx);
            gx.at(ch, iy, ix) += 0.5625f * gv;
            gx.at(ch, ny, ix) += 0.1875f * gv;
            gx.at(ch, iy, nx) += 0.1875f * gv;
            gx.at(ch, ny, nx) += 0.0625f * gv;
          }
        }
      });
    });
  }

  if (kind == ResampleKind::AvgPoolDown) {
    return tape->record(OpKind::AvgPool2x, kernels::avg_pool2x(x), {input}, [in_id](Tape& t, int self) {
      if (!t.requires_grad(in_id)) return;
      const NdArray& g = t.grad(self);
      NdArray& gx = t.grad(in_id);
      const int c = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
      for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < g.dim(1); ++y) {
          const int y0 = 2 * y, y1 = std::min(2 * y + 1, h - 1);
          for (int xx = 0; xx < g.dim(2); ++xx) {
            const int x0 = 2 * xx, x1 = std::min(2 * xx + 1, w - 1);
            const float q = 0.25f * g.at(ch, y, xx);
            gx.at(ch, y0, x0) += q;
            gx.at(ch, y0, x1) += q;
            gx.at(ch, y1, x0) += q;
            gx.at(ch, y1, x1) += q;
          }
        }
      }
    });
  }

  // max pool; ties resolve to the first child in row-major order
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;
  NdArray out({c, oh, ow});
  std::vector<int> argmax(out.size());
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        const int ys[2] = {2 * y, std::min(2 * y + 1, h - 1)};
        const int xs[2] = {2 * xx, std::min(2 * xx + 1, w - 1)};
        float best = x.at(ch, ys[0], xs[0]);
        int best_idx = ys[0] * w + xs[0];
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const float v = x.at(ch, ys[a], xs[b]);
            if (v > best) {
              best = v;
              best_idx = ys[a] * w + xs[b];
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(ch) * oh + y) * ow + xx;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  return tape->record(OpKind::MaxPool2x, std::move(out), {input},
                      [in_id, argmax = std::move(argmax)](Tape& t, int self) {
                        if (!t.requires_grad(in_id)) return;
                        const NdArray& g = t.grad(self);
                        NdArray& gx = t.grad(in_id);
                        const std::size_t plane_out = static_cast<std::size_t>(g.dim(1)) * g.dim(2);
                        const std::size_t plane_in = static_cast<std::size_t>(gx.dim(1)) * gx.dim(2);
                        for (std::size_t o = 0; o < g.size(); ++o) {
                          const std::size_t ch = o / plane_out;
                          gx[ch * plane_in + argmax[o]] += g[o];
                        }
                      });
}

// ---------------------------------------------------------------------------
// channel plumbing

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const auto first = chw_of(parts[0].value(), "concat_channels");
  int total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto s = chw_of(parts[i].value(), "concat_channels");
    if (s.h != first.h) throw ShapeError("concat_channels: dimension 1 (height) differs for input " + std::to_string(i));
    if (s.w != first.w) throw ShapeError("concat_channels: dimension 2 (width) differs for input " + std::to_string(i));
    total += s.c;
  }
  NdArray out({total, first.h, first.w});
  std::vector<int> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + offset);
    offset += p.value().size();
    ids.push_back(p.id());
  }
  return parts[0].tape()->record(OpKind::Concat, std::move(out), parts, [ids](Tape& t, int self) {
    const NdArray& g = t.grad(self);
    std::size_t offset = 0;
    for (int id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        NdArray& gi = t.grad(id);
        for (std::size_t i = 0; i < n; ++i) gi[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_channels(const Var& x, int begin, int count) {
  const auto s = chw_of(x.value(), "slice_channels");
  if (begin < 0 || count < 1 || begin + count > s.c) {
    throw ShapeError("slice_channels: channel range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") exceeds dimension 0 of size " + std::to_string(s.c));
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  NdArray out({count, s.h, s.w});
  std::copy(x.value().data() + begin * plane, x.value().data() + (begin + count) * plane, out.data());
  const int in_id = x.id();
  return x.tape()->record(OpKind::Slice, std::move(out), {x}, [in_id, begin, plane](Tape& t, int self) {
    if (!t.requires_grad(in_id)) return;
    const NdArray& g = t.grad(self);
    NdArray& gx = t.grad(in_id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * plane + i] += g[i];
  });
}

Var unit_normalize(const Var& x, int begin, int count) {
  const auto s = chw_of(x.value(), "unit_normalize");
  if (begin < 0 || count < 1 || begin + count > s.c) throw ShapeError("unit_normalize: channel range out of dimension 0");
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  NdArray y = x.value();
  std::vector<float> norms(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    double n2 = 0.0;
    for (int c = begin; c < begin + count; ++c) n2 += static_cast<double>(y[c * plane + p]) * y[c * plane + p];
    const float n = static_cast<float>(std::sqrt(n2));
    norms[p] = n;
    if (n >= 1e-6f) {
      for (int c = begin; c < begin + count; ++c) y[c * plane + p] /= n;
    }
  }
  const int in_id = x.id();
  return x.tape()->record(OpKind::UnitNormalize, std::move(y), {x},
                          [in_id, begin, count, plane, norms = std::move(norms)](Tape& t, int self) {
                            if (!t.requires_grad(in_id)) return;
                            const NdArray& g = t.grad(self);
                            const NdArray& y = t.value(self);
                            NdArray& gx = t.grad(in_id);
                            const std::size_t total = gx.size();
                            for (std::size_t i = 0; i < total; ++i) {
                              const std::size_t c = i / plane;
                              if (static_cast<int>(c) < begin || static_cast<int>(c) >= begin + count) gx[i] += g[i];
                            }
                            for (std::size_t p = 0; p < plane; ++p) {
                              const float n = norms[p];
                              if (n < 1e-6f) {
                                for (int c = begin; c < begin + count; ++c) gx[c * plane + p] += g[c * plane + p];
                                continue;
                              }
                              double dot = 0.0;
                              for (int c = begin; c < begin + count; ++c) dot += static_cast<double>(y[c * plane + p]) * g[c * plane + p];
                              for (int c = begin; c < begin + count; ++c) {
                                gx[c * plane + p] += static_cast<float>((g[c * plane + p] - y[c * plane + p] * dot) / n);
                              }
                            }
                          });
}

// ---------------------------------------------------------------------------
// reductions

Var sum(const Var& x) {
  NdArray out({1}, static_cast<float>(adasample::sum(x.value().values())));
  const int in_id = x.id();
  return x.tape()->record(OpKind::Sum, std::move(out), {x}, [in_id](Tape& t, int self) {
    if (!t.requires_grad(in_id)) return;
    const float g = t.grad(self)[0];
    NdArray& gx = t.grad(in_id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var weighted_sum(const std::vector<std::pair<float, Var>>& terms) {
  if (terms.empty()) throw ShapeError("weighted_sum: no terms");
  double total = 0.0;
  std::vector<Var> inputs;
  std::vector<float> weights;
  std::vector<int> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& [wgt, v] = terms[i];
    if (v.value().size() != 1) throw ShapeError("weighted_sum: term " + std::to_string(i) + " is not a scalar");
    total += static_cast<double>(wgt) * v.value()[0];
    inputs.push_back(v);
    weights.push_back(wgt);
    ids.push_back(v.id());
  }
  return terms[0].second.tape()->record(OpKind::WeightedSum, NdArray({1}, static_cast<float>(total)), inputs,
                                        [ids, weights](Tape& t, int self) {
                                          const float g = t.grad(self)[0];
                                          for (std::size_t i = 0; i < ids.size(); ++i) {
                                            if (t.requires_grad(ids[i])) t.grad(ids[i])[0] += weights[i] * g;
                                          }
                                        });
}

}  // namespace adasample
