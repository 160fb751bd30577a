#include "adasample/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "adasample/ops.hpp"

namespace adasample {

void LossWeights::validate() const {
  for (float v : {mask, normal, depth, bce, bounds, prior}) {
    if (!(v >= 0.0f) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
  }
}

namespace {

void check_channels(const NdArray& x, int begin, int count, const char* what) {
  require_rank(x, 3, what);
  if (begin < 0 || count < 1 || begin + count > x.dim(0)) {
    throw ShapeError(std::string(what) + ": channels [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside dimension 0 of size " + std::to_string(x.dim(0)));
  }
}

Var scalar_node(OpKind kind, double value, const Var& input, Tape::BackwardFn fn) {
  return input.tape()->record(kind, NdArray({1}, static_cast<float>(value)), {input}, std::move(fn));
}

}  // namespace

Var l1_channel(const Var& out, const NdArray& target, int begin, int count) {
  require_same_shape(out.value(), target, "l1_channel");
  check_channels(target, begin, count, "l1_channel");
  const std::size_t plane = static_cast<std::size_t>(target.dim(1)) * target.dim(2);
  const std::size_t lo = begin * plane, n = count * plane;
  const float* o = out.value().data();
  std::vector<float> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = std::abs(o[lo + i] - target[lo + i]);
  const double value = mean(diff);
  const int id = out.id();
  return scalar_node(OpKind::L1Channel, value, out, [id, target, lo, n](Tape& t, int self) {
    if (!t.requires_grad(id)) return;
    const float g = t.grad(self)[0] / static_cast<float>(n);
    const NdArray& x = t.value(id);
    NdArray& gx = t.grad(id);
    for (std::size_t i = 0; i < n; ++i) {
      const float d = x[lo + i] - target[lo + i];
      gx[lo + i] += d > 0.0f ? g : (d < 0.0f ? -g : 0.0f);
    }
  });
}

Var bce_mask(const Var& out_mask, const NdArray& target_mask) {
  require_same_shape(out_mask.value(), target_mask, "bce_mask");
  const NdArray& o = out_mask.value();
  const std::size_t n = o.size();
  std::vector<float> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = std::clamp(static_cast<double>(o[i]), double(kBceClamp), 1.0 - kBceClamp);
    const double t = target_mask[i];
    terms[i] = static_cast<float>(-(t * std::log(p) + (1.0 - t) * std::log(1.0 - p)));
  }
  const int id = out_mask.id();
  return scalar_node(OpKind::BceMask, mean(terms), out_mask, [id, target_mask, n](Tape& t, int self) {
    if (!t.requires_grad(id)) return;
    const double g = t.grad(self)[0] / static_cast<double>(n);
    const NdArray& x = t.value(id);
    NdArray& gx = t.grad(id);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = x[i];
      if (p < kBceClamp || p > 1.0 - kBceClamp) continue;
      const double tm = target_mask[i];
      gx[i] += static_cast<float>(g * (-tm / p + (1.0 - tm) / (1.0 - p)));
    }
  });
}

Var bounds_loss(const Var& out_mask) {
  const NdArray& o = out_mask.value();
  std::vector<float> terms(o.size());
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double u = 2.0 * o[i] - 1.0;
    terms[i] = static_cast<float>(std::max(0.0, u * u - 1.0));
  }
  const int id = out_mask.id();
  return scalar_node(OpKind::BoundsLoss, mean(terms), out_mask, [id](Tape& t, int self) {
    if (!t.requires_grad(id)) return;
    const NdArray& x = t.value(id);
    const double g = t.grad(self)[0] / static_cast<double>(x.size());
    NdArray& gx = t.grad(id);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double u = 2.0 * x[i] - 1.0;
      if (u * u > 1.0) gx[i] += static_cast<float>(g * 4.0 * u);
    }
  });
}

Var importance_prior(const Var& importance) {
  const double m = mean(importance.value().values());
  const int id = importance.id();
  return scalar_node(OpKind::ImportancePrior, (1.0 - m) * (1.0 - m), importance, [id, m](Tape& t, int self) {
    if (!t.requires_grad(id)) return;
    NdArray& gx = t.grad(id);
    const float g = static_cast<float>(t.grad(self)[0] * -2.0 * (1.0 - m) / static_cast<double>(gx.size()));
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

// ---------------------------------------------------------------------------
// SSIM

namespace {

std::vector<double> gaussian_taps(const SsimParams& p) {
  if (p.window < 1 || p.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd and positive");
  const int r = p.window / 2;
  std::vector<double> g(p.window);
  for (int k = -r; k <= r; ++k) g[k + r] = std::exp(-0.5 * k * k / (p.sigma * p.sigma));
  return g;
}

// Truncated (not renormalized) separable filter over an h x w plane.
void filter(const std::vector<double>& g, const double* in, double* out, int h, int w) {
  const int r = static_cast<int>(g.size()) / 2;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = std::max(-r, -x); k <= std::min(r, w - 1 - x); ++k) s += g[k + r] * in[y * w + x + k];
      tmp[y * w + x] = s;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = std::max(-r, -y); k <= std::min(r, h - 1 - y); ++k) s += g[k + r] * tmp[(y + k) * w + x];
      out[y * w + x] = s;
    }
  }
}

struct SsimPlane {
  std::vector<double> z, mx, my, sxx, syy, sxy, s;
};

SsimPlane ssim_plane(const float* a, const float* b, int h, int w, const std::vector<double>& g, const SsimParams& p) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  SsimPlane r;
  std::vector<double> ones(n, 1.0), x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a[i];
    y[i] = b[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  for (auto* v : {&r.z, &r.mx, &r.my, &r.sxx, &r.syy, &r.sxy, &r.s}) v->resize(n);
  filter(g, ones.data(), r.z.data(), h, w);
  filter(g, x.data(), r.mx.data(), h, w);
  filter(g, y.data(), r.my.data(), h, w);
  filter(g, xx.data(), r.sxx.data(), h, w);
  filter(g, yy.data(), r.syy.data(), h, w);
  filter(g, xy.data(), r.sxy.data(), h, w);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = r.z[i];
    const double mx = r.mx[i] / z, my = r.my[i] / z;
    r.mx[i] = mx;
    r.my[i] = my;
    r.sxx[i] = r.sxx[i] / z - mx * mx;
    r.syy[i] = r.syy[i] / z - my * my;
    r.sxy[i] = r.sxy[i] / z - mx * my;
    r.s[i] = ((2 * mx * my + p.c1) * (2 * r.sxy[i] + p.c2)) /
             ((mx * mx + my * my + p.c1) * (r.sxx[i] + r.syy[i] + p.c2));
  }
  return r;
}

double plane_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double d : v) s += d;
  return s / static_cast<double>(v.size());
}

}  // namespace

double ssim(const NdArray& a, const NdArray& b, int begin, int count, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  check_channels(a, begin, count, "ssim");
  const auto g = gaussian_taps(params);
  const int h = a.dim(1), w = a.dim(2);
  double total = 0.0;
  for (int c = begin; c < begin + count; ++c) total += plane_mean(ssim_plane(a.channel(c), b.channel(c), h, w, g, params).s);
  return total / count;
}

double ssim(const NdArray& a, const NdArray& b, const SsimParams& params) {
  if (a.rank() == 2) {
    const NdArray a3 = a.reshaped({1, a.dim(0), a.dim(1)}), b3 = b.reshaped({1, b.dim(0), b.dim(1)});
    return ssim(a3, b3, 0, 1, params);
  }
  require_rank(a, 3, "ssim");
  return ssim(a, b, 0, a.dim(0), params);
}

Var ssim_loss(const Var& out, const NdArray& target, int begin, int count, const SsimParams& params) {
  require_same_shape(out.value(), target, "ssim_loss");
  const double value = 1.0 - ssim(out.value(), target, begin, count, params);
  const int id = out.id();
  return scalar_node(OpKind::SsimLoss, value, out, [id, target, begin, count, params](Tape& t, int self) {
    if (!t.requires_grad(id)) return;
    const NdArray& o = t.value(id);
    NdArray& go = t.grad(id);
    const auto g = gaussian_taps(params);
    const int h = o.dim(1), w = o.dim(2);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    const double scale = -t.grad(self)[0] / (static_cast<double>(count) * n);
    std::vector<double> ca(n), cb(n), cc(n), fa(n), fb(n), fc(n);
    for (int c = begin; c < begin + count; ++c) {
      const SsimPlane s = ssim_plane(o.channel(c), target.channel(c), h, w, g, params);
      for (std::size_t i = 0; i < n; ++i) {
        const double mx = s.mx[i], my = s.my[i];
        const double a1 = 2 * mx * my + params.c1, a2 = 2 * s.sxy[i] + params.c2;
        const double b1 = mx * mx + my * my + params.c1, b2 = s.sxx[i] + s.syy[i] + params.c2;
        const double d_mx = 2 * my * a2 / (b1 * b2) - s.s[i] * 2 * mx / b1;
        const double d_sxx = -s.s[i] / b2;
        const double d_sxy = 2 * a1 / (b1 * b2);
        const double bb = scale * d_sxx, cc_ = scale * d_sxy;
        ca[i] = (scale * d_mx - 2 * mx * bb - my * cc_) / s.z[i];
        cb[i] = bb / s.z[i];
        cc[i] = cc_ / s.z[i];
      }
      filter(g, ca.data(), fa.data(), h, w);
      filter(g, cb.data(), fb.data(), h, w);
      filter(g, cc.data(), fc.data(), h, w);
      const float* x = o.channel(c);
      const float* y = target.channel(c);
      float* gx = go.channel(c);
      for (std::size_t i = 0; i < n; ++i) gx[i] += static_cast<float>(fa[i] + 2.0 * x[i] * fb[i] + y[i] * fc[i]);
    }
  });
}

double psnr(const NdArray& a, const NdArray& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

LossTerms total_loss_iso(const Var& out, const NdArray& target, const Var& importance, const LossWeights& weights) {
  weights.validate();
  if (target.rank() != 3 || target.dim(0) != 5) throw ShapeError("total_loss_iso: target dimension 0 must be 5");
  NdArray tm({1, target.dim(1), target.dim(2)});
  std::copy(target.channel(0), target.channel(0) + tm.size(), tm.data());
  const Var om = slice_channels(out, 0, 1);
  LossTerms lt;
  std::vector<std::pair<float, Var>> terms;
  auto push = [&](const char* name, float wgt, const Var& v) {
    terms.emplace_back(wgt, v);
    lt.parts.emplace_back(name, v.value()[0]);
  };
  push("l1_mask", weights.mask, l1_channel(out, target, 0, 1));
  push("l1_normal", weights.normal, l1_channel(out, target, 1, 3));
  push("l1_depth", weights.depth, l1_channel(out, target, 4, 1));
  push("bce", weights.bce, bce_mask(om, tm));
  push("bounds", weights.bounds, bounds_loss(om));
  if (importance.valid()) push("prior", weights.prior, importance_prior(importance));
  lt.total = weighted_sum(terms);
  return lt;
}

LossTerms total_loss_dvr(const Var& out, const NdArray& target) {
  if (target.rank() != 3 || target.dim(0) < 4) throw ShapeError("total_loss_dvr: target dimension 0 must be >= 4");
  LossTerms lt;
  const Var l1 = l1_channel(out, target, 0, 4);
  const Var ss = ssim_loss(out, target, 0, 3);
  lt.parts = {{"l1_rgba", l1.value()[0]}, {"ssim", ss.value()[0]}};
  lt.total = weighted_sum({{1.0f, l1}, {1.0f, ss}});
  return lt;
}

// ---------------------------------------------------------------------------
// reports

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("quartiles of an empty set");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * (values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double f = pos - lo;
    if (f == 0.0 || values[lo] == values[hi]) return values[lo];
    return values[lo] + f * (values[hi] - values[lo]);
  };
  return {at(0.25), at(0.5), at(0.75)};
}

Quartiles MetricReport::psnr_summary() const {
  std::vector<double> v;
  for (const auto& r : records) v.push_back(r.psnr);
  return quartiles(v);
}

Quartiles MetricReport::ssim_summary() const {
  std::vector<double> v;
  for (const auto& r : records) v.push_back(r.ssim);
  return quartiles(v);
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

double parse_double(const std::string& s, const std::string& where) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError(where + ": bad number '" + s + "'");
  }
}

}  // namespace

void write_report(std::ostream& out, const MetricReport& report) {
  for (const auto& r : report.records) {
    if (r.id.empty() || r.id.find_first_of(" \t\n") != std::string::npos || r.id == "summary") {
      throw std::invalid_argument("metric record id '" + r.id + "' is not a single token");
    }
    out << r.id << ' ' << fmt(r.psnr) << ' ' << fmt(r.ssim) << '\n';
  }
  if (report.records.empty()) return;
  const Quartiles p = report.psnr_summary(), s = report.ssim_summary();
  out << "summary psnr " << fmt(p.q25) << ' ' << fmt(p.median) << ' ' << fmt(p.q75) << '\n';
  out << "summary ssim " << fmt(s.q25) << ' ' << fmt(s.median) << ' ' << fmt(s.q75) << '\n';
}

void write_report(const std::string& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_report(out, report);
  if (!out) throw IoError("failed writing " + path);
}

MetricReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  MetricReport rep;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string id, a, b;
    if (!(ls >> id)) continue;
    if (id == "summary") continue;
    const std::string where = path + ":" + std::to_string(lineno);
    if (!(ls >> a >> b)) throw IoError(where + ": expected 'id psnr ssim'");
    rep.records.push_back({id, parse_double(a, where), parse_double(b, where)});
  }
  return rep;
}

}  // namespace adasample
