#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>

#include "adasample/ops.hpp"
#include "adasample/pipeline.hpp"
#include "adasample/pullpush.hpp"
#include "adasample/random.hpp"

namespace adasample {

GradStage parse_grad_stage(const std::string& name) {
  if (name == "sampler") return GradStage::Sampler;
  if (name == "pullpush") return GradStage::PullPush;
  if (name == "conv") return GradStage::Conv;
  if (name == "ops") return GradStage::Ops;
  if (name == "end2end") return GradStage::End2End;
  throw std::invalid_argument("unknown gradcheck stage '" + name + "'");
}

std::string to_string(GradStage stage) {
  switch (stage) {
    case GradStage::Sampler:
      return "sampler";
    case GradStage::PullPush:
      return "pullpush";
    case GradStage::Conv:
      return "conv";
    case GradStage::Ops:
      return "ops";
    case GradStage::End2End:
      return "end2end";
  }
  return "?";
}

bool GradCheckReport::passed() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed(); });
}

double GradCheckReport::max_rel() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel);
  return m;
}

namespace {

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

NdArray uniform_array(std::vector<int> shape, Rng& rng, double lo, double hi) {
  NdArray a(std::move(shape));
  for (auto& v : a.values()) v = static_cast<float>(rng.uniform(lo, hi));
  return a;
}

double project(const NdArray& y, const NdArray& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * r[i];
  return s;
}

// Branch decisions of every non-smooth op on the tape: ReLU and clamp
// sides, normalization saturation, max-pool and pull-push winners.
std::vector<int> branch_pattern(const Tape& tape) {
  std::vector<int> bits;
  for (std::size_t n = 0; n < tape.size(); ++n) {
    const int id = static_cast<int>(n);
    switch (tape.kind(id)) {
      case OpKind::Relu:
        for (float v : tape.value(tape.inputs(id)[0]).values()) bits.push_back(v > 0.0f);
        break;
      case OpKind::Clamp01:
        for (float v : tape.value(tape.inputs(id)[0]).values()) bits.push_back((v > 0.0f) + 2 * (v < 1.0f));
        break;
      case OpKind::NormalizeImportance:
        for (float v : tape.value(id).values()) bits.push_back(v >= 1.0f);
        break;
      case OpKind::MaxPool2x: {
        const NdArray& x = tape.value(tape.inputs(id)[0]);
        const NdArray& y = tape.value(id);
        for (int c = 0; c < y.dim(0); ++c) {
          for (int i = 0; i < y.dim(1); ++i) {
            for (int j = 0; j < y.dim(2); ++j) {
              int pick = -1;
              for (int k = 0; k < 4 && pick < 0; ++k) {
                const int yy = std::min(2 * i + k / 2, x.dim(1) - 1), xx = std::min(2 * j + k % 2, x.dim(2) - 1);
                if (x.at(c, yy, xx) == y.at(c, i, j)) pick = k;
              }
              bits.push_back(pick);
            }
          }
        }
        break;
      }
      case OpKind::PullPush: {
        const auto& in = tape.inputs(id);
        const PullPushResult r = pullpush_forward({tape.value(in[0]), tape.value(in[1])});
        for (const auto& level : r.state.levels) {
          bits.push_back(level.terminal);
          bits.insert(bits.end(), level.argmax.begin(), level.argmax.end());
        }
        break;
      }
      default:
        break;
    }
  }
  return bits;
}

// Scalar read-out of a graph output: a tape version for the adjoint and a
// double-precision version for the differences, which also appends its
// own branch decisions.
struct Objective {
  std::function<Var(const Var&)> tape;
  std::function<double(const NdArray&, std::vector<int>*)> value;
};

Objective projection(const NdArray& r) {
  return {[r](const Var& out) { return sum(mul(out, out.tape()->leaf(r))); },
          [r](const NdArray& y, std::vector<int>*) { return project(y, r); }};
}

double evaluate_graph(const Graph& graph, const Objective& obj, const std::vector<NdArray>& xs,
                      std::vector<int>* pattern) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
  const Var out = graph(tape, vars);
  *pattern = branch_pattern(tape);
  return obj.value(out.value(), pattern);
}

// Norm-wise relative error |a - fd| / max(|a|, |fd|) over one input tensor.
// A coordinate whose perturbation changes a branch decision is retried with
// steps 4, 16 and 64 times smaller and dropped if it still does.
GradCheckEntry check_input(const std::string& name, const Graph& graph, const Objective& obj, std::vector<NdArray> xs,
                           int which, double tolerance, double step = 1e-3) {
  NdArray analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.leaf(x, true));
    tape.backward(obj.tape(graph(tape, vars)));
    analytic = vars[which].grad().empty() ? NdArray::zeros_like(xs[which]) : vars[which].grad();
  }
  std::vector<int> base, pu, pd;
  evaluate_graph(graph, obj, xs, &base);
  GradCheckEntry e;
  e.input = name;
  e.tolerance = tolerance;
  double err2 = 0.0, a2 = 0.0, f2 = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    double fd = 0.0;
    bool clean = false;
    for (double hstep = step; hstep >= step / 64.0 && !clean; hstep /= 4.0) {
      const float orig = xs[which][i];
      const float up = static_cast<float>(orig + hstep), down = static_cast<float>(orig - hstep);
      xs[which][i] = up;
      const double fp = evaluate_graph(graph, obj, xs, &pu);
      xs[which][i] = down;
      const double fm = evaluate_graph(graph, obj, xs, &pd);
      xs[which][i] = orig;
      fd = (fp - fm) / (static_cast<double>(up) - down);
      clean = pu == base && pd == base;
    }
    if (!clean) {
      ++e.skipped;
      continue;
    }
    ++e.checked;
    const double a = analytic[i];
    err2 += (a - fd) * (a - fd);
    a2 += a * a;
    f2 += fd * fd;
  }
  const double denom = std::sqrt(std::max(a2, f2));
  e.max_rel = denom > 0.0 ? std::sqrt(err2) / denom : std::sqrt(err2);
  // all-kink tensors prove nothing
  if (e.checked == 0) e.max_rel = std::numeric_limits<double>::infinity();
  return e;
}

GradCheckEntry check_projected(const std::string& name, const Graph& graph, const std::vector<NdArray>& xs, int which,
                               double tolerance, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : xs) vars.push_back(tape.leaf(x, false));
  Rng rng(seed);
  const NdArray r = uniform_array(graph(tape, vars).shape(), rng, -1.0, 1.0);
  return check_input(name, graph, projection(r), xs, which, tolerance);
}

void sampler_stage(GradCheckReport& rep, int n, std::uint64_t seed) {
  Rng rng(seed);
  const NdArray imp = uniform_array({1, n, n}, rng, 0.1, 1.0);
  const NdArray target = uniform_array({3, n, n}, rng, 0.0, 1.0);
  const SamplePattern pattern = pattern_plastic(n, n).shifted(static_cast<int>(rng.below(n)), static_cast<int>(rng.below(n)));
  const NormalizationParams norm{0.1f, 0.002f};
  const Graph g = [&](Tape&, const std::vector<Var>& v) {
    const SmoothSampleVars s = sample_smooth(normalize_importance(v[0], norm), pattern, target, 50.0f);
    return concat_channels({s.mask, s.samples});
  };
  rep.entries.push_back(check_projected("importance", g, {imp}, 0, 1e-3, seed + 1));
}

void pullpush_stage(GradCheckReport& rep, int n, std::uint64_t seed) {
  Rng rng(seed);
  const NdArray mask = uniform_array({1, n, n}, rng, 0.2, 0.8);
  const NdArray data = uniform_array({3, n, n}, rng, -1.0, 1.0);
  const Graph g = [](Tape&, const std::vector<Var>& v) {
    const PullPushVars p = pullpush(v[0], v[1]);
    return concat_channels({p.mask, p.data});
  };
  rep.entries.push_back(check_projected("data", g, {mask, data}, 1, 1e-3, seed + 1));
  rep.entries.push_back(check_projected("mask", g, {mask, data}, 0, 1e-2, seed + 2));
}

void conv_stage(GradCheckReport& rep, int n, std::uint64_t seed) {
  Rng rng(seed);
  const NdArray x = uniform_array({4, n, n}, rng, -1.0, 1.0);
  const NdArray w = uniform_array({5, 4, 3, 3}, rng, -0.5, 0.5);
  const NdArray b = uniform_array({5}, rng, -0.5, 0.5);
  const Graph g = [](Tape&, const std::vector<Var>& v) { return conv3x3(v[0], v[1], v[2]); };
  const char* names[] = {"input", "weights", "bias"};
  for (int i = 0; i < 3; ++i) rep.entries.push_back(check_projected(names[i], g, {x, w, b}, i, 1e-3, seed + i));
}

void ops_stage(GradCheckReport& rep, int n, std::uint64_t seed) {
  Rng rng(seed);
  const NdArray a = uniform_array({3, n, n}, rng, -1.0, 1.0);
  const NdArray b = uniform_array({3, n, n}, rng, -1.0, 1.0);
  const NdArray c = uniform_array({3, n, n}, rng, -0.5, 1.5);
  struct Case {
    const char* name;
    Graph graph;
    std::vector<NdArray> inputs;
    int which;
  };
  const std::vector<Case> cases = {
      {"relu", [](Tape&, const std::vector<Var>& v) { return relu(v[0]); }, {a}, 0},
      {"sigmoid", [](Tape&, const std::vector<Var>& v) { return sigmoid(v[0]); }, {a}, 0},
      {"softplus", [](Tape&, const std::vector<Var>& v) { return softplus(v[0]); }, {a}, 0},
      {"clamp01", [](Tape&, const std::vector<Var>& v) { return clamp01(v[0]); }, {c}, 0},
      {"add", [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }, {a, b}, 0},
      {"mul.a", [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, {a, b}, 0},
      {"mul.b", [](Tape&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, {a, b}, 1},
      {"scale", [](Tape&, const std::vector<Var>& v) { return scale(v[0], -1.7f); }, {a}, 0},
      {"upsample2x", [](Tape&, const std::vector<Var>& v) { return upsample2x(v[0]); }, {a}, 0},
      {"avg_pool2x", [](Tape&, const std::vector<Var>& v) { return avg_pool2x(v[0]); }, {a}, 0},
      {"max_pool2x", [](Tape&, const std::vector<Var>& v) { return max_pool2x(v[0]); }, {a}, 0},
      {"concat", [](Tape&, const std::vector<Var>& v) { return concat_channels({v[0], v[1]}); }, {a, b}, 1},
      {"slice", [](Tape&, const std::vector<Var>& v) { return slice_channels(v[0], 1, 2); }, {a}, 0},
      {"unit_normalize", [](Tape&, const std::vector<Var>& v) { return unit_normalize(v[0], 0, 3); }, {a}, 0},
      {"sum", [](Tape&, const std::vector<Var>& v) { return sum(v[0]); }, {a}, 0},
      {"weighted_sum",
       [](Tape&, const std::vector<Var>& v) { return weighted_sum({{0.3f, sum(v[0])}, {-2.0f, sum(mul(v[0], v[1]))}}); },
       {a, b},
       0},
  };
  std::uint64_t s = seed;
  for (const Case& k : cases) rep.entries.push_back(check_projected(k.name, k.graph, k.inputs, k.which, 1e-3, ++s));
}

// Double-precision re-implementation of the end-to-end iso pipeline, used
// as the finite-difference side of the end2end stage. Float32 forward
// passes cannot resolve the small parameter gradients of this graph.
namespace ref {

struct Img {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  Img() = default;
  Img(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0) {}
  explicit Img(const NdArray& a) : Img(a.dim(0), a.dim(1), a.dim(2)) { std::copy(a.data(), a.data() + a.size(), v.begin()); }
  double& at(int k, int y, int x) { return v[(static_cast<std::size_t>(k) * h + y) * w + x]; }
  double at(int k, int y, int x) const { return v[(static_cast<std::size_t>(k) * h + y) * w + x]; }
};

using Params = std::vector<std::vector<double>>;

struct Ctx {
  const Params& p;
  std::size_t next;
  std::vector<int>& pattern;
};

Img conv(Ctx& cx, const Img& x) {
  const std::vector<double>& wt = cx.p[cx.next];
  const std::vector<double>& bias = cx.p[cx.next + 1];
  cx.next += 2;
  const int co = static_cast<int>(bias.size());
  Img y(co, x.h, x.w);
  for (int o = 0; o < co; ++o) {
    for (int i = 0; i < x.h; ++i) {
      for (int j = 0; j < x.w; ++j) {
        double s = bias[o];
        for (int k = 0; k < x.c; ++k) {
          for (int dy = 0; dy < 3; ++dy) {
            for (int dx = 0; dx < 3; ++dx) {
              const int yy = i + dy - 1, xx = j + dx - 1;
              if (yy < 0 || yy >= x.h || xx < 0 || xx >= x.w) continue;
              s += wt[((static_cast<std::size_t>(o) * x.c + k) * 3 + dy) * 3 + dx] * x.at(k, yy, xx);
            }
          }
        }
        y.at(o, i, j) = s;
      }
    }
  }
  return y;
}

Img relu(Ctx& cx, Img x) {
  for (double& v : x.v) {
    cx.pattern.push_back(v > 0.0);
    v = std::max(v, 0.0);
  }
  return x;
}

Img add(Img a, const Img& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

Img up(const Img& x) {
  Img y(x.c, 2 * x.h, 2 * x.w);
  for (int k = 0; k < x.c; ++k) {
    for (int i = 0; i < y.h; ++i) {
      const int iy = i / 2, ny = std::clamp(iy + ((i & 1) ? 1 : -1), 0, x.h - 1);
      for (int j = 0; j < y.w; ++j) {
        const int ix = j / 2, nx = std::clamp(ix + ((j & 1) ? 1 : -1), 0, x.w - 1);
        y.at(k, i, j) = 0.5625 * x.at(k, iy, ix) + 0.1875 * x.at(k, ny, ix) + 0.1875 * x.at(k, iy, nx) +
                        0.0625 * x.at(k, ny, nx);
      }
    }
  }
  return y;
}

Img concat(const Img& a, const Img& b) {
  Img y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + a.v.size());
  return y;
}

Img blocks(Ctx& cx, Img x, int n) {
  for (int b = 0; b < n; ++b) {
    Img h = relu(cx, conv(cx, x));
    x = add(std::move(x), conv(cx, h));
  }
  return x;
}

// Mirrors the mipmap recursion: max-pooled masks, mask-weighted means,
// (9,3,3,1)/16 push blended by the fine mask.
void pullpush(const Img& mask, const Img& data, Img& mask_out, Img& data_out, std::vector<int>& pattern) {
  const int h = mask.h, w = mask.w, c = data.c;
  bool terminal = h <= 1 && w <= 1;
  if (!terminal) terminal = std::all_of(mask.v.begin(), mask.v.end(), [](double m) { return m >= 1.0; });
  pattern.push_back(terminal);
  if (terminal) {
    mask_out = mask;
    data_out = data;
    return;
  }
  const int ch = h <= 1 ? 1 : (h + 1) / 2, cw = w <= 1 ? 1 : (w + 1) / 2;
  Img ml(1, ch, cw), dl(c, ch, cw);
  for (int i = 0; i < ch; ++i) {
    for (int j = 0; j < cw; ++j) {
      double best = 0.0, sum = 0.0;
      int arg = -1;
      std::vector<double> acc(c, 0.0);
      for (int a = 2 * i; a < std::min(2 * i + 2, h); ++a) {
        for (int b = 2 * j; b < std::min(2 * j + 2, w); ++b) {
          const double m = mask.at(0, a, b);
          if (arg < 0 || m > best) {
            best = m;
            arg = a * w + b;
          }
          sum += m;
          for (int k = 0; k < c; ++k) acc[k] += m * data.at(k, a, b);
        }
      }
      if (sum > 0.0) {
        ml.at(0, i, j) = best;
        for (int k = 0; k < c; ++k) dl.at(k, i, j) = acc[k] / sum;
      } else {
        arg = -1;
      }
      pattern.push_back(arg);
    }
  }
  Img mf, df;
  pullpush(ml, dl, mf, df, pattern);
  static constexpr double kw[2][2] = {{9.0 / 16.0, 3.0 / 16.0}, {3.0 / 16.0, 1.0 / 16.0}};
  mask_out = Img(1, h, w);
  data_out = Img(c, h, w);
  std::vector<double> d(c);
  for (int a = 0; a < h; ++a) {
    for (int b = 0; b < w; ++b) {
      const int ia = a / 2, ib = b / 2;
      const int ys[2] = {ia, ia + ((a & 1) ? 1 : -1)};
      const int xs[2] = {ib, ib + ((b & 1) ? 1 : -1)};
      double n = 0.0, wsum = 0.0;
      std::fill(d.begin(), d.end(), 0.0);
      for (int u = 0; u < 2; ++u) {
        if (ys[u] < 0 || ys[u] >= ch) continue;
        for (int v = 0; v < 2; ++v) {
          if (xs[v] < 0 || xs[v] >= cw) continue;
          const double wm = kw[u][v] * mf.at(0, ys[u], xs[v]);
          n += wm;
          wsum += kw[u][v];
          for (int k = 0; k < c; ++k) d[k] += wm * df.at(k, ys[u], xs[v]);
        }
      }
      const double m = mask.at(0, a, b);
      mask_out.at(0, a, b) = m;
      for (int k = 0; k < c; ++k) data_out.at(k, a, b) = m * data.at(k, a, b);
      if (n > 0.0) {
        mask_out.at(0, a, b) = m + (1.0 - m) * n / wsum;
        for (int k = 0; k < c; ++k) data_out.at(k, a, b) += (1.0 - m) * d[k] / n;
      }
    }
  }
}

struct Setup {
  Img low, baseline, target;
  std::vector<double> thresholds;
  int blocks_i = 0, blocks_r = 0;
  std::size_t ni = 0;
  NormalizationParams norm;
  float alpha = 50.0f;
  LossWeights weights;
};

double loss(const Setup& s, const Params& p, std::vector<int>& pattern) {
  Ctx ci{p, 0, pattern};
  Img x = relu(ci, conv(ci, s.low));
  x = blocks(ci, std::move(x), s.blocks_i);
  x = relu(ci, conv(ci, up(x)));
  x = relu(ci, conv(ci, up(x)));
  x = relu(ci, conv(ci, x));
  x = add(conv(ci, x), s.baseline);
  Img imp = up(x);
  for (double& v : imp.v) v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));

  double mean = 0.0;
  for (double v : imp.v) mean += v;
  mean /= static_cast<double>(imp.v.size());
  const double scale = (static_cast<double>(s.norm.mean) - s.norm.lower) / (mean + s.norm.epsilon);
  const int c = s.target.c, h = s.target.h, w = s.target.w;
  Img mask(1, h, w), samples(c, h, w);
  for (std::size_t i = 0; i < imp.v.size(); ++i) {
    const double raw = s.norm.lower + imp.v[i] * scale;
    pattern.push_back(raw >= 1.0);
    const double m = 1.0 / (1.0 + std::exp(-s.alpha * (std::min(1.0, raw) - s.thresholds[i])));
    mask.v[i] = m;
    for (int k = 0; k < c; ++k) samples.v[k * imp.v.size() + i] = s.target.v[k * imp.v.size() + i];
  }

  Img pm, base;
  pullpush(mask, samples, pm, base, pattern);
  Ctx cr{p, s.ni, pattern};
  Img y = relu(cr, conv(cr, concat(base, mask)));
  y = blocks(cr, std::move(y), s.blocks_r);
  y = relu(cr, conv(cr, y));
  y = add(conv(cr, y), base);

  const Img both = concat(y, imp);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double l1[5] = {0, 0, 0, 0, 0}, bce = 0.0, bounds = 0.0, isum = 0.0;
  for (int k = 0; k < 5; ++k) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = both.v[k * plane + i] - s.target.v[k * plane + i];
      l1[k] += std::abs(d);
      pattern.push_back(d > 0.0);
    }
  }
  for (std::size_t i = 0; i < plane; ++i) {
    const double o = both.v[i], t = s.target.v[i];
    const double pc = std::clamp(o, double(kBceClamp), 1.0 - kBceClamp);
    bce -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
    const double u = 2.0 * o - 1.0;
    bounds += std::max(0.0, u * u - 1.0);
    pattern.push_back((o > kBceClamp) + 2 * (o < 1.0 - kBceClamp));
    isum += both.v[5 * plane + i];
  }
  const double n = static_cast<double>(plane);
  const double prior = (1.0 - isum / n) * (1.0 - isum / n);
  const LossWeights& wt = s.weights;
  return wt.mask * l1[0] / n + wt.normal * (l1[1] + l1[2] + l1[3]) / (3.0 * n) + wt.depth * l1[4] / n +
         wt.bce * bce / n + wt.bounds * bounds / n + wt.prior * prior;
}

}  // namespace ref

void end2end_stage(GradCheckReport& rep, int n, std::uint64_t seed) {
  if (n > 32 || n % kLowResFactor != 0) {
    throw std::invalid_argument("gradcheck end2end: size must be a multiple of 8 and <= 32");
  }
  Rng rng(seed);
  const int c = iso_layout::kChannels, lo = n / kLowResFactor;
  const NdArray low = uniform_array({c, lo, lo}, rng, 0.0, 1.0);
  NdArray target = uniform_array({c, n, n}, rng, -1.0, 1.0);
  for (float& v : std::span(target.channel(0), static_cast<std::size_t>(n) * n)) v = v > 0.0f ? 1.0f : 0.0f;
  for (float& v : std::span(target.channel(4), static_cast<std::size_t>(n) * n)) v = 0.5f * (v + 1.0f);
  const NetConfig cfg{4, 2};
  const ImportanceNet inet(c, cfg, seed + 11);
  const ReconNet rnet(c, cfg, seed + 12);
  const SamplePattern pattern = pattern_plastic(n, n);

  ref::Setup setup;
  setup.low = ref::Img(low);
  setup.baseline = ref::Img(kernels::upsample2x(kernels::upsample2x(gradient_magnitude(low))));
  setup.target = ref::Img(target);
  setup.thresholds.assign(pattern.thresholds().begin(), pattern.thresholds().end());
  setup.blocks_i = cfg.blocks;
  setup.blocks_r = cfg.blocks;
  setup.ni = inet.params().size();
  setup.norm = {0.1f, 0.002f};

  std::vector<Parameter> params = inet.params();
  for (const auto& p : rnet.params()) params.push_back(p);
  ref::Params dparams;
  for (const auto& p : params) dparams.emplace_back(p.value.data(), p.value.data() + p.value.size());

  // adjoints from the float tape
  std::vector<NdArray> analytic;
  {
    Tape tape;
    const auto ib = bind_parameters(tape, inet.params());
    const auto rb = bind_parameters(tape, rnet.params());
    const Var imp = inet.forward(ib, tape.leaf(low));
    const SmoothSampleVars s = sample_smooth(normalize_importance(imp, setup.norm), pattern, target, setup.alpha);
    const Var out = rnet.forward(rb, s.mask, tape.leaf(target));
    tape.backward(total_loss_iso(out, target, imp, setup.weights).total);
    analytic = collect_gradients(ib);
    for (auto& g : collect_gradients(rb)) analytic.push_back(std::move(g));
  }

  std::vector<int> base, pu, pd;
  ref::loss(setup, dparams, base);
  const double step = 1e-4;
  // the low-res input also feeds the fixed gradient baseline, so only
  // parameters are checked
  for (std::size_t t = 0; t < params.size(); ++t) {
    GradCheckEntry e;
    e.input = (t < setup.ni ? "importance." : "recon.") + params[t].name;
    e.tolerance = 1e-2;
    double err2 = 0.0, a2 = 0.0, f2 = 0.0;
    for (std::size_t i = 0; i < dparams[t].size(); ++i) {
      double fd = 0.0;
      bool clean = false;
      for (double hstep = step; hstep >= step / 64.0 && !clean; hstep /= 4.0) {
        const double orig = dparams[t][i];
        pu.clear();
        pd.clear();
        dparams[t][i] = orig + hstep;
        const double fp = ref::loss(setup, dparams, pu);
        dparams[t][i] = orig - hstep;
        const double fm = ref::loss(setup, dparams, pd);
        dparams[t][i] = orig;
        fd = (fp - fm) / (2.0 * hstep);
        clean = pu == base && pd == base;
      }
      if (!clean) {
        ++e.skipped;
        continue;
      }
      ++e.checked;
      const double a = analytic[t][i];
      err2 += (a - fd) * (a - fd);
      a2 += a * a;
      f2 += fd * fd;
    }
    const double denom = std::sqrt(std::max(a2, f2));
    e.max_rel = denom > 0.0 ? std::sqrt(err2) / denom : std::sqrt(err2);
    if (e.checked == 0) e.max_rel = std::numeric_limits<double>::infinity();
    rep.entries.push_back(e);
  }
}

}  // namespace

GradCheckReport gradcheck(GradStage stage, int size, std::uint64_t seed) {
  if (size < 2 || size > 64) throw std::invalid_argument("gradcheck: size must lie in [2, 64]");
  GradCheckReport rep;
  rep.stage = stage;
  switch (stage) {
    case GradStage::Sampler:
      sampler_stage(rep, size, seed);
      break;
    case GradStage::PullPush:
      pullpush_stage(rep, size, seed);
      break;
    case GradStage::Conv:
      conv_stage(rep, size, seed);
      break;
    case GradStage::Ops:
      ops_stage(rep, size, seed);
      break;
    case GradStage::End2End:
      end2end_stage(rep, size, seed);
      break;
  }
  return rep;
}

}  // namespace adasample
