#include "adasample/pullpush.hpp"

#include <algorithm>
#include <memory>
#include <string>

#include "adasample/ops.hpp"

namespace adasample {

namespace {

constexpr float kPushWeights[2][2] = {{9.0f / 16.0f, 3.0f / 16.0f}, {3.0f / 16.0f, 1.0f / 16.0f}};

inline int coarse_extent(int n) { return n <= 1 ? 1 : (n + 1) / 2; }

// Calls fn(coarse_index, weight) for the in-bounds coarse neighbors of fine
// pixel (a, b).
template <typename Fn>
inline void for_each_neighbor(int a, int b, int ch, int cw, Fn&& fn) {
  const int ia = a / 2, ib = b / 2;
  const int ys[2] = {ia, ia + ((a & 1) ? 1 : -1)};
  const int xs[2] = {ib, ib + ((b & 1) ? 1 : -1)};
  for (int u = 0; u < 2; ++u) {
    if (ys[u] < 0 || ys[u] >= ch) continue;
    for (int v = 0; v < 2; ++v) {
      if (xs[v] < 0 || xs[v] >= cw) continue;
      fn(ys[u] * cw + xs[v], kPushWeights[u][v]);
    }
  }
}

bool is_terminal(const NdArray& mask, int h, int w) {
  if (h <= 1 && w <= 1) return true;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] < 1.0f) return false;
  }
  return true;
}

void pull(PullPushLevel& level) {
  const int h = level.height, w = level.width, c = level.data_in.dim(0);
  const int ch = coarse_extent(h), cw = coarse_extent(w);
  const std::size_t fine_plane = static_cast<std::size_t>(h) * w;
  const std::size_t coarse_plane = static_cast<std::size_t>(ch) * cw;
  level.coarse_height = ch;
  level.coarse_width = cw;
  level.weight_sum.assign(coarse_plane, 0.0f);
  level.argmax.assign(coarse_plane, -1);
  level.mask_low = NdArray({1, ch, cw});
  level.data_low = NdArray({c, ch, cw});
  std::vector<double> acc(c);
  for (int i = 0; i < ch; ++i) {
    for (int j = 0; j < cw; ++j) {
      float n_max = 0.0f;
      int best = -1;
      double n_avg = 0.0;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int a = 2 * i; a < std::min(2 * i + 2, h); ++a) {
        for (int b = 2 * j; b < std::min(2 * j + 2, w); ++b) {
          const int f = a * w + b;
          const float m = level.mask_in[f];
          if (best < 0 || m > n_max) {
            n_max = m;
            best = f;
          }
          n_avg += m;
          for (int k = 0; k < c; ++k) acc[k] += static_cast<double>(m) * level.data_in[k * fine_plane + f];
        }
      }
      const int o = i * cw + j;
      if (n_avg > 0.0) {
        level.weight_sum[o] = static_cast<float>(n_avg);
        level.argmax[o] = best;
        level.mask_low[o] = n_max;
        for (int k = 0; k < c; ++k) level.data_low[k * coarse_plane + o] = static_cast<float>(acc[k] / n_avg);
      }
    }
  }
}

void push(const PullPushLevel& level, NdArray& mask_out, NdArray& data_out) {
  const int h = level.height, w = level.width, c = level.data_in.dim(0);
  const int ch = level.coarse_height, cw = level.coarse_width;
  const std::size_t fine_plane = static_cast<std::size_t>(h) * w;
  const std::size_t coarse_plane = static_cast<std::size_t>(ch) * cw;
  mask_out = NdArray({1, h, w});
  data_out = NdArray({c, h, w});
  std::vector<double> d(c);
  for (int a = 0; a < h; ++a) {
    for (int b = 0; b < w; ++b) {
      double n = 0.0, wsum = 0.0;
      std::fill(d.begin(), d.end(), 0.0);
      for_each_neighbor(a, b, ch, cw, [&](int o, float wt) {
        const double wm = static_cast<double>(wt) * level.mask_filled[o];
        n += wm;
        wsum += wt;
        for (int k = 0; k < c; ++k) d[k] += wm * level.data_filled[k * coarse_plane + o];
      });
      const int f = a * w + b;
      const float m = level.mask_in[f];
      mask_out[f] = m;
      for (int k = 0; k < c; ++k) data_out[k * fine_plane + f] = m * level.data_in[k * fine_plane + f];
      if (n > 0.0) {
        const double keep = 1.0 - m;
        mask_out[f] = static_cast<float>(m + keep * n / wsum);
        for (int k = 0; k < c; ++k) {
          data_out[k * fine_plane + f] = static_cast<float>(data_out[k * fine_plane + f] + keep * d[k] / n);
        }
      }
    }
  }
}

}  // namespace

PullPushResult pullpush_forward(const SparseImage& sparse) {
  require_rank(sparse.mask, 3, "pullpush mask");
  require_rank(sparse.data, 3, "pullpush data");
  if (sparse.mask.dim(0) != 1) throw ShapeError("pullpush: mask dimension 0 must be 1");
  if (sparse.mask.dim(1) != sparse.data.dim(1)) throw ShapeError("pullpush: dimension 1 (height) differs");
  if (sparse.mask.dim(2) != sparse.data.dim(2)) throw ShapeError("pullpush: dimension 2 (width) differs");

  PullPushResult result;
  auto& levels = result.state.levels;
  PullPushLevel first;
  first.height = sparse.mask.dim(1);
  first.width = sparse.mask.dim(2);
  first.mask_in = sparse.mask;
  first.data_in = sparse.data;
  levels.push_back(std::move(first));
  while (true) {
    PullPushLevel& cur = levels.back();
    if (is_terminal(cur.mask_in, cur.height, cur.width)) {
      cur.terminal = true;
      break;
    }
    pull(cur);
    PullPushLevel next;
    next.height = cur.coarse_height;
    next.width = cur.coarse_width;
    next.mask_in = cur.mask_low;
    next.data_in = cur.data_low;
    levels.push_back(std::move(next));
  }

  NdArray mask_up = levels.back().mask_in;
  NdArray data_up = levels.back().data_in;
  for (int k = static_cast<int>(levels.size()) - 2; k >= 0; --k) {
    PullPushLevel& lvl = levels[k];
    lvl.mask_filled = std::move(mask_up);
    lvl.data_filled = std::move(data_up);
    push(lvl, mask_up, data_up);
  }
  result.mask = std::move(mask_up);
  result.data = std::move(data_up);
  return result;
}

PullPushGradients pullpush_backward(const NdArray& grad_mask_out, const NdArray& grad_data_out,
                                    const PullPushState& state) {
  const auto& levels = state.levels;
  if (levels.empty()) throw std::invalid_argument("pullpush_backward: empty forward state");
  require_same_shape(grad_mask_out, levels[0].mask_in, "pullpush_backward grad_mask_out");
  require_same_shape(grad_data_out, levels[0].data_in, "pullpush_backward grad_data_out");

  const std::size_t count = levels.size();
  // adjoints of each level's input (mask_in, data_in)
  std::vector<NdArray> g_mask_in(count), g_data_in(count);
  NdArray g_mask_out = grad_mask_out;
  NdArray g_data_out = grad_data_out;

  // Downward: adjoints of each push; the output adjoint of level k+1 is the
  // adjoint of level k's filled coarse image.
  for (std::size_t k = 0; k < count; ++k) {
    const PullPushLevel& lvl = levels[k];
    if (lvl.terminal) {
      g_mask_in[k] = std::move(g_mask_out);
      g_data_in[k] = std::move(g_data_out);
      break;
    }
    const int h = lvl.height, w = lvl.width, c = lvl.data_in.dim(0);
    const int ch = lvl.coarse_height, cw = lvl.coarse_width;
    const std::size_t fine_plane = static_cast<std::size_t>(h) * w;
    const std::size_t coarse_plane = static_cast<std::size_t>(ch) * cw;
    NdArray gm({1, h, w}), gd({c, h, w});
    NdArray gm_coarse({1, ch, cw}), gd_coarse({c, ch, cw});
    std::vector<double> d(c), d_hat(c);
    for (int a = 0; a < h; ++a) {
      for (int b = 0; b < w; ++b) {
        double n = 0.0, wsum = 0.0;
        std::fill(d.begin(), d.end(), 0.0);
        for_each_neighbor(a, b, ch, cw, [&](int o, float wt) {
          const double wm = static_cast<double>(wt) * lvl.mask_filled[o];
          n += wm;
          wsum += wt;
          for (int q = 0; q < c; ++q) d[q] += wm * lvl.data_filled[q * coarse_plane + o];
        });
        const int f = a * w + b;
        const double m = lvl.mask_in[f];
        const double gmo = g_mask_out[f];
        double m_hat = gmo;
        for (int q = 0; q < c; ++q) {
          const double gdo = g_data_out[q * fine_plane + f];
          m_hat += gdo * lvl.data_in[q * fine_plane + f];
          gd[q * fine_plane + f] = static_cast<float>(m * gdo);
        }
        if (n > 0.0) {
          const double keep = 1.0 - m;
          m_hat -= gmo * n / wsum;
          double n_hat = gmo * keep / wsum;
          for (int q = 0; q < c; ++q) {
            const double gdo = g_data_out[q * fine_plane + f];
            m_hat -= gdo * d[q] / n;
            n_hat -= keep * gdo * d[q] / (n * n);
            d_hat[q] = keep * gdo / n;
          }
          for_each_neighbor(a, b, ch, cw, [&](int o, float wt) {
            double mf_hat = wt * n_hat;
            for (int q = 0; q < c; ++q) {
              mf_hat += wt * d_hat[q] * lvl.data_filled[q * coarse_plane + o];
              gd_coarse[q * coarse_plane + o] += static_cast<float>(wt * lvl.mask_filled[o] * d_hat[q]);
            }
            gm_coarse[o] += static_cast<float>(mf_hat);
          });
        }
        gm[f] = static_cast<float>(m_hat);
      }
    }
    g_mask_in[k] = std::move(gm);
    g_data_in[k] = std::move(gd);
    g_mask_out = std::move(gm_coarse);
    g_data_out = std::move(gd_coarse);
  }

  // Upward: pull adjoints, finest last. Level k's pull output is level k+1's
  // input, whose adjoint is complete once level k+1 has been processed.
  for (int k = static_cast<int>(count) - 2; k >= 0; --k) {
    const PullPushLevel& lvl = levels[k];
    const NdArray& g_low_mask = g_mask_in[k + 1];
    const NdArray& g_low_data = g_data_in[k + 1];
    const int h = lvl.height, w = lvl.width, c = lvl.data_in.dim(0);
    const int ch = lvl.coarse_height, cw = lvl.coarse_width;
    const std::size_t fine_plane = static_cast<std::size_t>(h) * w;
    const std::size_t coarse_plane = static_cast<std::size_t>(ch) * cw;
    NdArray& gm = g_mask_in[k];
    NdArray& gd = g_data_in[k];
    for (int i = 0; i < ch; ++i) {
      for (int j = 0; j < cw; ++j) {
        const int o = i * cw + j;
        if (lvl.argmax[o] < 0) continue;
        gm[lvl.argmax[o]] += g_low_mask[o];
        const double n_avg = lvl.weight_sum[o];
        for (int a = 2 * i; a < std::min(2 * i + 2, h); ++a) {
          for (int b = 2 * j; b < std::min(2 * j + 2, w); ++b) {
            const int f = a * w + b;
            const double m = lvl.mask_in[f];
            double m_hat = 0.0;
            for (int q = 0; q < c; ++q) {
              const double g = g_low_data[q * coarse_plane + o];
              gd[q * fine_plane + f] += static_cast<float>(m * g / n_avg);
              m_hat += g * (lvl.data_in[q * fine_plane + f] - lvl.data_low[q * coarse_plane + o]) / n_avg;
            }
            gm[f] += static_cast<float>(m_hat);
          }
        }
      }
    }
  }
  return {std::move(g_mask_in[0]), std::move(g_data_in[0])};
}

PullPushVars pullpush(const Var& mask, const Var& data) {
  auto fwd = std::make_shared<PullPushResult>(pullpush_forward({mask.value(), data.value()}));
  const int c = fwd->data.dim(0), h = fwd->data.dim(1), w = fwd->data.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  NdArray joined({c + 1, h, w});
  std::copy(fwd->mask.data(), fwd->mask.data() + plane, joined.data());
  std::copy(fwd->data.data(), fwd->data.data() + fwd->data.size(), joined.data() + plane);
  const int mask_id = mask.id(), data_id = data.id();
  Var both = mask.tape()->record(OpKind::PullPush, std::move(joined), {mask, data},
                                 [fwd, mask_id, data_id, c, h, w, plane](Tape& t, int self) {
                                   const NdArray& g = t.grad(self);
                                   NdArray gm({1, h, w}), gd({c, h, w});
                                   std::copy(g.data(), g.data() + plane, gm.data());
                                   std::copy(g.data() + plane, g.data() + g.size(), gd.data());
                                   const PullPushGradients grads = pullpush_backward(gm, gd, fwd->state);
                                   if (t.requires_grad(mask_id)) {
                                     NdArray& dst = t.grad(mask_id);
                                     for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grads.mask[i];
                                   }
                                   if (t.requires_grad(data_id)) {
                                     NdArray& dst = t.grad(data_id);
                                     for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += grads.data[i];
                                   }
                                 });
  return {slice_channels(both, 0, 1), slice_channels(both, 1, c)};
}

}  // namespace adasample
