#include <cmath>
#include <numeric>

#include "adasample/tfgen.hpp"
#include "doctest.h"

using namespace adasample;

namespace {

std::vector<double> draw(std::uint64_t seed, std::size_t n, const std::vector<GmmComponent>& mix) {
  Rng rng(seed);
  Gmm1D g;
  g.components = mix;
  std::vector<double> x(n);
  for (auto& v : x) v = g.sample(rng);
  return x;
}

VolumeGrid filled(std::array<int, 3> dims, float (*f)(std::size_t, std::size_t)) {
  const std::size_t n = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<float> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = f(i, n);
  return VolumeGrid(dims, {1, 1, 1}, std::move(d));
}

}  // namespace

TEST_CASE("histogram of constant and ramp volumes") {
  const VolumeGrid c = filled({8, 8, 8}, [](std::size_t, std::size_t) { return 0.37f; });
  const auto hc = histogram(c, 16);
  CHECK(std::count_if(hc.begin(), hc.end(), [](std::size_t v) { return v > 0; }) == 1);
  CHECK(hc[5] == 512);

  const VolumeGrid r = filled({16, 16, 16}, [](std::size_t i, std::size_t n) { return float(i) / float(n - 1); });
  const int bins = 32;
  const auto hr = histogram(r, bins);
  CHECK(std::accumulate(hr.begin(), hr.end(), std::size_t{0}) == 4096);
  const double expected = 4096.0 / bins;
  double chi2 = 0.0;
  for (auto v : hr) chi2 += (v - expected) * (v - expected) / expected;
  CHECK(chi2 < 1.0);

  CHECK(histogram(std::vector<float>{0.0f, 1.0f, 0.5f}, 2) == std::vector<std::size_t>{1, 2});
  CHECK_THROWS_AS(histogram(c, 1), std::invalid_argument);
}

TEST_CASE("single tight gaussian selects one component") {
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = draw(100 + s, 2000, {{1.0, 0.4, 0.02}});
    const Gmm1D g = fit_gmm_bic(x, 4, s);
    if (g.k() != 1) continue;
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    const double stderr_ = 0.02 / std::sqrt(double(x.size()));
    if (std::abs(g.components[0].mean - mean) <= 3 * stderr_) ++hits;
  }
  CHECK(hits >= 18);
}

TEST_CASE("two separated gaussians select two components") {
  int hits = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = draw(200 + s, 2000, {{0.5, 0.3, 0.02}, {0.5, 0.5, 0.02}});
    if (fit_gmm_bic(x, 4, s).k() == 2) ++hits;
  }
  CHECK(hits >= 18);
}

TEST_CASE("EM invariants") {
  const auto x = draw(7, 3000, {{0.3, 0.2, 0.05}, {0.5, 0.6, 0.03}, {0.2, 0.85, 0.01}});
  for (int k = 1; k <= 4; ++k) {
    const Gmm1D g = fit_gmm(x, k, 11);
    double wsum = 0.0;
    for (const auto& c : g.components) {
      CHECK(c.weight > 0.0);
      CHECK(c.stddev >= 1e-4);
      wsum += c.weight;
    }
    CHECK(std::abs(wsum - 1.0) < 1e-9);
    for (std::size_t i = 1; i < g.trace.size(); ++i) CHECK(g.trace[i] >= g.trace[i - 1] - 1e-9 * std::abs(g.trace[i - 1]));
    CHECK(g.iterations <= 100);
    CHECK(g.bic == doctest::Approx(-2 * g.log_likelihood + (3 * k - 1) * std::log(3000.0)));
  }
  // degenerate data hits the stddev floor
  const Gmm1D flat = fit_gmm(std::vector<double>(50, 0.25), 2, 3);
  for (const auto& c : flat.components) CHECK(c.stddev >= 1e-4);
}

TEST_CASE("BIC selection is reproducible") {
  const auto x = draw(9, 1500, {{0.6, 0.3, 0.04}, {0.4, 0.7, 0.04}});
  std::vector<double> b1, b2;
  const Gmm1D g1 = fit_gmm_bic(x, 3, 42, {}, &b1);
  const Gmm1D g2 = fit_gmm_bic(x, 3, 42, {}, &b2);
  CHECK(b1 == b2);
  CHECK(g1.k() == g2.k());
  CHECK(g1.log_likelihood == g2.log_likelihood);
  CHECK(b1.size() == 3);
}

TEST_CASE("fit errors") {
  CHECK_THROWS_AS(fit_gmm_bic({}, 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(fit_gmm_bic(std::vector<double>(29, 0.5), 3, 0), std::invalid_argument);
  CHECK_THROWS_AS(fit_gmm({}, 1, 0), std::invalid_argument);
}

TEST_CASE("density samples skip empty space and subsample") {
  const VolumeGrid v = filled({10, 10, 10}, [](std::size_t i, std::size_t) { return i % 2 ? 0.0f : 0.5f; });
  CHECK(density_samples(v, 100000, 1).size() == 500);
  const auto sub = density_samples(v, 100, 1);
  CHECK(sub.size() == 100);
  CHECK(sub == density_samples(v, 100, 1));
}

TEST_CASE("random transfer functions") {
  Gmm1D g;
  g.components = {{0.5, 0.3, 0.05}, {0.5, 0.7, 0.05}};
  for (std::uint64_t s = 0; s < 100; ++s) {
    const RandomTf r = sample_random_tf(g, nullptr, s);
    CHECK(r.peaks.size() >= 3);
    CHECK(r.peaks.size() <= 5);
    for (const auto& p : r.peaks) {
      CHECK(p.width >= 0.005f);
      CHECK(p.width <= 0.03f);
      CHECK(p.opacity >= 0.1f);
      CHECK(p.opacity <= 1.0f);
      CHECK(p.density >= 0.0f);
      CHECK(p.density <= 1.0f);
    }
    CHECK_NOTHROW(r.tf.validate());
    const Colormap& cm = colormap_by_name(r.colormap);
    // opacity is the max of the tents; color follows the map
    for (int i = 0; i <= 200; ++i) {
      const float x = i / 200.0f;
      float expect = 0.0f;
      for (const auto& p : r.peaks) expect = std::max(expect, p.opacity * std::max(0.0f, 1.0f - std::abs(x - p.density) / p.width));
      const auto rgba = r.tf(x);
      CHECK(rgba[3] == doctest::Approx(expect).epsilon(1e-4).scale(1.0));
    }
    for (const auto& p : r.peaks) {
      const auto rgba = r.tf(p.density);
      const auto rgb = cm(p.density);
      CHECK(rgba[0] == doctest::Approx(rgb[0]).epsilon(1e-4));
    }
  }
  const RandomTf a = sample_random_tf(g, &colormap_by_name("viridis"), 5);
  const RandomTf b = sample_random_tf(g, &colormap_by_name("viridis"), 5);
  CHECK(tf_to_text(a.tf) == tf_to_text(b.tf));
  CHECK(a.colormap == "viridis");
}

TEST_CASE("colormaps") {
  CHECK(builtin_colormaps().size() == 5);
  for (const auto& m : builtin_colormaps()) {
    CHECK(m.stops.front()[0] == 0.0f);
    CHECK(m.stops.back()[0] == 1.0f);
    const auto lo = m(-1.0f), hi = m(2.0f);
    CHECK(lo[0] == m.stops.front()[1]);
    CHECK(hi[2] == m.stops.back()[3]);
  }
  CHECK_THROWS_AS(colormap_by_name("nope"), std::invalid_argument);
}
