#include "adasample/tfgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace adasample {

std::vector<std::size_t> histogram(const std::vector<float>& values, int bins) {
  if (bins < 2) throw std::invalid_argument("histogram: bins must be >= 2");
  std::vector<std::size_t> counts(bins, 0);
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) continue;
    const int b = std::min(bins - 1, static_cast<int>(static_cast<double>(v) * bins));
    ++counts[b];
  }
  return counts;
}

std::vector<std::size_t> histogram(const VolumeGrid& volume, int bins) { return histogram(volume.data(), bins); }

double Gmm1D::pdf(double x) const {
  double p = 0.0;
  for (const auto& c : components) {
    const double z = (x - c.mean) / c.stddev;
    p += c.weight * std::exp(-0.5 * z * z) / (c.stddev * std::sqrt(2.0 * std::numbers::pi));
  }
  return p;
}

double Gmm1D::sample(Rng& rng) const {
  if (components.empty()) throw std::invalid_argument("Gmm1D::sample: empty mixture");
  double u = rng.uniform();
  std::size_t j = 0;
  for (; j + 1 < components.size(); ++j) {
    if (u < components[j].weight) break;
    u -= components[j].weight;
  }
  return rng.normal(components[j].mean, components[j].stddev);
}

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double log_normal(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * (z * z + kLog2Pi) - std::log(sd);
}

// Log-likelihood and, when resp is given, responsibilities [n][k].
double e_step(const std::vector<double>& x, const std::vector<GmmComponent>& comps, std::vector<double>* resp) {
  const std::size_t k = comps.size();
  std::vector<double> lp(k);
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      lp[j] = comps[j].weight > 0.0 ? std::log(comps[j].weight) + log_normal(x[i], comps[j].mean, comps[j].stddev)
                                    : -std::numeric_limits<double>::infinity();
      mx = std::max(mx, lp[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(lp[j] - mx);
    const double lse = mx + std::log(s);
    ll += lse;
    if (resp) {
      for (std::size_t j = 0; j < k; ++j) (*resp)[i * k + j] = std::exp(lp[j] - lse);
    }
  }
  return ll;
}

std::vector<GmmComponent> kmeanspp_init(const std::vector<double>& x, int k, std::uint64_t seed, double min_sd) {
  Rng rng(seed);
  const std::size_t n = x.size();
  std::vector<double> centers{x[rng.below(n)]};
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(x[rng.below(n)]);
      continue;
    }
    double u = rng.uniform() * total;
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    centers.push_back(x[pick]);
  }

  double gm = 0.0;
  for (double v : x) gm += v;
  gm /= n;
  double gv = 0.0;
  for (double v : x) gv += (v - gm) * (v - gm);
  const double global_sd = std::max(std::sqrt(gv / n), min_sd);

  std::vector<double> sum(k, 0.0), sum2(k, 0.0), cnt(k, 0.0);
  for (double v : x) {
    int best = 0;
    for (int j = 1; j < k; ++j) {
      if (std::abs(v - centers[j]) < std::abs(v - centers[best])) best = j;
    }
    sum[best] += v;
    sum2[best] += v * v;
    cnt[best] += 1.0;
  }
  std::vector<GmmComponent> comps(k);
  for (int j = 0; j < k; ++j) {
    if (cnt[j] == 0.0) {
      comps[j] = {1.0 / n, centers[j], global_sd};
      continue;
    }
    const double m = sum[j] / cnt[j];
    comps[j] = {cnt[j] / n, m, std::max(std::sqrt(std::max(0.0, sum2[j] / cnt[j] - m * m)), min_sd)};
  }
  double wsum = 0.0;
  for (const auto& c : comps) wsum += c.weight;
  for (auto& c : comps) c.weight /= wsum;
  return comps;
}

}  // namespace

Gmm1D fit_gmm(const std::vector<double>& samples, int k, std::uint64_t seed, const EmOptions& options) {
  if (samples.empty()) throw std::invalid_argument("fit_gmm: no samples");
  if (k < 1) throw std::invalid_argument("fit_gmm: k must be >= 1");
  const std::size_t n = samples.size();
  Gmm1D g;
  g.components = kmeanspp_init(samples, k, seed, options.min_stddev);
  std::vector<double> resp(n * k);
  double ll = e_step(samples, g.components, &resp);
  for (int it = 0; it < options.max_iterations; ++it) {
    for (int j = 0; j < k; ++j) {
      double nk = 0.0, s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        s += resp[i * k + j] * samples[i];
      }
      GmmComponent& c = g.components[j];
      c.weight = nk / n;
      if (nk < 1e-12) continue;
      c.mean = s / nk;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) v += resp[i * k + j] * (samples[i] - c.mean) * (samples[i] - c.mean);
      c.stddev = std::max(std::sqrt(v / nk), options.min_stddev);
    }
    const double next = e_step(samples, g.components, &resp);
    g.trace.push_back(next);
    g.iterations = it + 1;
    if (next < ll - 1e-9 * std::max(1.0, std::abs(ll))) {
      throw std::logic_error("fit_gmm: EM decreased the log-likelihood at iteration " + std::to_string(it + 1));
    }
    const bool converged = std::abs(next - ll) <= options.tolerance * std::max(1.0, std::abs(ll));
    ll = next;
    if (converged) break;
  }
  double wsum = 0.0;
  for (auto& c : g.components) {
    c.weight = std::max(c.weight, 1e-12);
    wsum += c.weight;
  }
  for (auto& c : g.components) c.weight /= wsum;
  g.log_likelihood = ll;
  g.bic = -2.0 * ll + (3.0 * k - 1.0) * std::log(static_cast<double>(n));
  return g;
}

Gmm1D fit_gmm_bic(const std::vector<double>& samples, int max_k, std::uint64_t seed, const EmOptions& options,
                  std::vector<double>* bics) {
  if (samples.empty()) throw std::invalid_argument("fit_gmm_bic: no samples");
  if (max_k < 1) throw std::invalid_argument("fit_gmm_bic: max_k must be >= 1");
  if (samples.size() < static_cast<std::size_t>(10 * max_k)) {
    throw std::invalid_argument("fit_gmm_bic: need at least " + std::to_string(10 * max_k) + " samples, got " +
                                std::to_string(samples.size()));
  }
  Gmm1D best;
  if (bics) bics->clear();
  for (int k = 1; k <= max_k; ++k) {
    Gmm1D g = fit_gmm(samples, k, seed + static_cast<std::uint64_t>(k) * 0x9e3779b97f4a7c15ULL, options);
    if (bics) bics->push_back(g.bic);
    if (k == 1 || g.bic < best.bic) best = std::move(g);
  }
  return best;
}

std::vector<double> density_samples(const VolumeGrid& volume, std::size_t max_count, std::uint64_t seed,
                                    float empty_below) {
  std::vector<double> all;
  for (float v : volume.data()) {
    if (v > empty_below) all.push_back(v);
  }
  if (all.size() <= max_count) return all;
  Rng rng(seed);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < max_count; ++i) {
    const std::size_t j = i + rng.below(all.size() - i);
    std::swap(all[i], all[j]);
  }
  all.resize(max_count);
  return all;
}

std::array<float, 3> Colormap::operator()(float t) const {
  if (stops.empty()) return {0, 0, 0};
  t = std::clamp(t, 0.0f, 1.0f);
  if (t <= stops.front()[0]) return {stops.front()[1], stops.front()[2], stops.front()[3]};
  for (std::size_t i = 1; i < stops.size(); ++i) {
    if (t <= stops[i][0]) {
      const auto& a = stops[i - 1];
      const auto& b = stops[i];
      const float f = (t - a[0]) / std::max(b[0] - a[0], 1e-12f);
      const float g = 1.0f - f;
      return {g * a[1] + f * b[1], g * a[2] + f * b[2], g * a[3] + f * b[3]};
    }
  }
  return {stops.back()[1], stops.back()[2], stops.back()[3]};
}

const std::vector<Colormap>& builtin_colormaps() {
  static const std::vector<Colormap> maps = {
      {"viridis", {{0.0f, 0.267f, 0.005f, 0.329f}, {0.25f, 0.229f, 0.322f, 0.546f}, {0.5f, 0.128f, 0.567f, 0.551f},
                   {0.75f, 0.369f, 0.789f, 0.383f}, {1.0f, 0.993f, 0.906f, 0.144f}}},
      {"coolwarm", {{0.0f, 0.230f, 0.299f, 0.754f}, {0.5f, 0.865f, 0.865f, 0.865f}, {1.0f, 0.706f, 0.016f, 0.150f}}},
      {"blue-orange", {{0.0f, 0.05f, 0.19f, 0.57f}, {0.35f, 0.40f, 0.70f, 0.90f}, {0.65f, 0.99f, 0.80f, 0.45f},
                       {1.0f, 0.85f, 0.33f, 0.02f}}},
      {"green-purple", {{0.0f, 0.0f, 0.27f, 0.11f}, {0.3f, 0.45f, 0.76f, 0.45f}, {0.7f, 0.76f, 0.65f, 0.81f},
                        {1.0f, 0.25f, 0.0f, 0.29f}}},
      {"ember", {{0.0f, 0.1f, 0.0f, 0.0f}, {0.4f, 0.75f, 0.1f, 0.0f}, {0.8f, 1.0f, 0.75f, 0.1f}, {1.0f, 1.0f, 1.0f, 0.8f}}},
  };
  return maps;
}

const Colormap& colormap_by_name(const std::string& name) {
  for (const auto& m : builtin_colormaps()) {
    if (m.name == name) return m;
  }
  throw std::invalid_argument("unknown colormap '" + name + "'");
}

TransferFunction tents_to_tf(const std::vector<TfPeak>& peaks, const Colormap& colormap) {
  struct Seg {
    double x0, y0, x1, y1;
  };
  std::vector<Seg> segs;
  std::vector<double> xs{0.0, 1.0};
  for (const TfPeak& p : peaks) {
    if (!(p.width > 0.0f) || p.opacity < 0.0f || p.opacity > 1.0f) throw std::invalid_argument("tents_to_tf: bad peak");
    const double c = p.density, w = p.width, a = p.opacity;
    segs.push_back({c - w, 0.0, c, a});
    segs.push_back({c, a, c + w, 0.0});
    for (double v : {c - w, c, c + w}) xs.push_back(v);
  }
  auto eval = [&](double x) {
    double best = 0.0;
    for (const Seg& s : segs) {
      if (x < s.x0 || x > s.x1) continue;
      best = std::max(best, s.y0 + (s.y1 - s.y0) * (x - s.x0) / (s.x1 - s.x0));
    }
    return best;
  };
  for (std::size_t i = 0; i < segs.size(); ++i) {
    for (std::size_t j = i + 1; j < segs.size(); ++j) {
      const Seg& a = segs[i];
      const Seg& b = segs[j];
      const double sa = (a.y1 - a.y0) / (a.x1 - a.x0), sb = (b.y1 - b.y0) / (b.x1 - b.x0);
      if (std::abs(sa - sb) < 1e-12) continue;
      // a.y0 + sa (x - a.x0) = b.y0 + sb (x - b.x0)
      const double x = (b.y0 - a.y0 + sa * a.x0 - sb * b.x0) / (sa - sb);
      if (x >= std::max(a.x0, b.x0) && x <= std::min(a.x1, b.x1)) xs.push_back(x);
    }
  }
  std::sort(xs.begin(), xs.end());
  TransferFunction tf;
  double last = -1.0;
  for (double x : xs) {
    if (x < 0.0 || x > 1.0 || x - last < 1e-6) continue;
    last = x;
    const auto rgb = colormap(static_cast<float>(x));
    tf.points.push_back({static_cast<float>(x), rgb[0], rgb[1], rgb[2], static_cast<float>(std::min(1.0, eval(x)))});
  }
  tf.validate();
  return tf;
}

RandomTf sample_random_tf(const Gmm1D& gmm, const Colormap* colormap, std::uint64_t seed) {
  if (gmm.components.empty()) throw std::invalid_argument("sample_random_tf: empty mixture");
  Rng rng(seed);
  RandomTf out;
  const Colormap& cm = colormap ? *colormap : builtin_colormaps()[rng.below(builtin_colormaps().size())];
  out.colormap = cm.name;
  const int count = rng.range(3, 5);
  for (int i = 0; i < count; ++i) {
    TfPeak p;
    p.density = static_cast<float>(std::clamp(gmm.sample(rng), 0.0, 1.0));
    p.width = static_cast<float>(rng.uniform(0.005, 0.03));
    p.opacity = static_cast<float>(rng.uniform(0.1, 1.0));
    out.peaks.push_back(p);
  }
  out.tf = tents_to_tf(out.peaks, cm);
  return out;
}

}  // namespace adasample
