#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "adasample/losses.hpp"
#include "adasample/ops.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace adasample;

namespace {

double scalar(const Var& v) { return v.value()[0]; }

// Direct 2D double-loop SSIM, independent of the separable implementation.
double ssim_oracle(const NdArray& a, const NdArray& b) {
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double z = 0, sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -5; dy <= 5; ++dy) {
          for (int dx = -5; dx <= 5; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            const double g = std::exp(-(dx * dx + dy * dy) / (2 * 1.5 * 1.5));
            const double u = a.at(c, yy, xx), v = b.at(c, yy, xx);
            z += g;
            sa += g * u;
            sb += g * v;
            saa += g * u * u;
            sbb += g * v * v;
            sab += g * u * v;
          }
        }
        const double ma = sa / z, mb = sb / z;
        const double va = saa / z - ma * ma, vb = sbb / z - mb * mb, cov = sab / z - ma * mb;
        acc += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    }
    total += acc / (H * W);
  }
  return total / C;
}

double psnr_oracle(const NdArray& a, const NdArray& b) {
  long double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (static_cast<long double>(a[i]) - b[i]) * (static_cast<long double>(a[i]) - b[i]);
  return static_cast<double>(-10.0L * std::log10(se / a.size()));
}

NdArray box_blur(const NdArray& x) {
  NdArray out = x;
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) {
        double s = 0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, x2 = xx + dx;
            if (yy < 0 || yy >= H || x2 < 0 || x2 >= W) continue;
            s += x.at(c, yy, x2);
            ++n;
          }
        out.at(c, y, xx) = static_cast<float>(s / n);
      }
  return out;
}

}  // namespace

TEST_CASE("l1 channel") {
  Tape t;
  const NdArray target = fdtest::random_array({3, 4, 4}, 1);
  NdArray o = target;
  CHECK(scalar(l1_channel(t.leaf(o), target, 0, 3)) == 0.0);
  for (int i = 0; i < 16; ++i) o[16 + i] += 0.5f;
  CHECK(scalar(l1_channel(t.leaf(o), target, 1)) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(scalar(l1_channel(t.leaf(o), target, 0)) == 0.0);

  Var v = t.leaf(o, true);
  t.backward(l1_channel(v, target, 1));
  for (int i = 0; i < 16; ++i) {
    CHECK(v.grad()[i] == 0.0f);
    CHECK(v.grad()[16 + i] == doctest::Approx(1.0 / 16));
  }
  CHECK_THROWS_AS(l1_channel(t.leaf(o), target, 2, 2), ShapeError);
}

TEST_CASE("bce") {
  Tape t;
  NdArray tm({1, 4, 4});
  for (int i = 0; i < 16; i += 3) tm[i] = 1.0f;
  CHECK(scalar(bce_mask(t.leaf(tm), tm)) < 1e-5);
  CHECK(scalar(bce_mask(t.leaf(NdArray({1, 4, 4}, 0.5f)), tm)) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  for (float target : {0.3f, 0.6f}) {
    NdArray tt({1, 2, 2}, target);
    const double at = scalar(bce_mask(t.leaf(tt), tt));
    for (float d : {-0.1f, 0.1f, 0.05f}) {
      NdArray probe({1, 2, 2}, target + d);
      CHECK(scalar(bce_mask(t.leaf(probe), tt)) > at);
    }
  }
}

TEST_CASE("bounds") {
  Tape t;
  CHECK(scalar(bounds_loss(t.leaf(fdtest::random_array({1, 4, 4}, 2, 0.0, 1.0)))) == 0.0);
  CHECK(scalar(bounds_loss(t.leaf(NdArray({1, 3, 3}, 1.5f)))) == doctest::Approx(3.0));
  CHECK(scalar(bounds_loss(t.leaf(NdArray({1, 3, 3}, -0.5f)))) == doctest::Approx(3.0));
}

TEST_CASE("prior") {
  Tape t;
  CHECK(scalar(importance_prior(t.leaf(NdArray({1, 4, 4}, 1.0f)))) == 0.0);
  CHECK(scalar(importance_prior(t.leaf(NdArray({1, 4, 4}, 0.0f)))) == 1.0);
  CHECK(scalar(importance_prior(t.leaf(NdArray({1, 4, 4}, 3.0f)))) == doctest::Approx(4.0));
}

TEST_CASE("psnr") {
  NdArray a({1, 10, 10}, 0.5f), b({1, 10, 10}, 0.6f);
  // float 0.1 offset is not exact, so compare to the oracle and to 20 dB loosely
  CHECK(psnr(a, b) == doctest::Approx(psnr_oracle(a, b)).epsilon(1e-9));
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
  NdArray z({1, 2, 2}, 0.0f), e({1, 2, 2}, 0.0f);
  e[0] = 0.2f;  // mse = 0.01
  CHECK(psnr(z, e) == doctest::Approx(20.0).epsilon(1e-6));
  CHECK(std::isinf(psnr(a, a)));
  NdArray e10({1, 2, 2}, 0.0f);
  e10[0] = 0.02f;
  CHECK(psnr(z, e10) - psnr(z, e) == doctest::Approx(20.0).epsilon(1e-5));
  NdArray c({1, 2, 2}, 0.0f), d({1, 2, 2}, 0.0f);
  c[1] = 0.05f;
  d[1] = 0.5f;
  CHECK(psnr(z, c) - psnr(z, d) == doctest::Approx(20.0).epsilon(1e-5));
}

TEST_CASE("ssim") {
  const NdArray x = fdtest::random_array({2, 20, 17}, 4, 0.0, 1.0);
  CHECK(std::abs(ssim(x, x) - 1.0) < 1e-9);

  NdArray checker({1, 16, 16}), inv({1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int xx = 0; xx < 16; ++xx) {
      checker.at(0, y, xx) = static_cast<float>((x.at(0, y, xx) > 0.5f));
      inv.at(0, y, xx) = 1.0f - checker.at(0, y, xx);
    }
  CHECK(ssim(checker, inv) < 0.0);

  for (int seed = 0; seed < 5; ++seed) {
    const NdArray a = fdtest::random_array({2, 14, 19}, 100 + seed, 0.0, 1.0);
    const NdArray b = box_blur(a);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) < 1e-6);
    CHECK(std::abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-6);
  }

  // Scale invariance with c1, c2 rescaled by a^2.
  const NdArray a = fdtest::random_array({1, 16, 16}, 5, 0.0, 1.0), b = box_blur(a);
  NdArray as = a, bs = b;
  for (auto& v : as.values()) v *= 3.0f;
  for (auto& v : bs.values()) v *= 3.0f;
  SsimParams scaled;
  scaled.c1 *= 9.0;
  scaled.c2 *= 9.0;
  CHECK(ssim(as, bs, scaled) == doctest::Approx(ssim(a, b)).epsilon(1e-6));

  // 2D input
  const NdArray a2 = a.reshaped({16, 16}), b2 = b.reshaped({16, 16});
  CHECK(ssim(a2, b2) == doctest::Approx(ssim(a, b)));
}

TEST_CASE("iso total loss") {
  Tape t;
  NdArray target({5, 8, 8});
  Rng rng(7);
  for (int i = 0; i < 64; ++i) {
    const bool hit = rng.uniform() < 0.5;
    target[i] = hit;
    if (hit) {
      target[64 + i] = 0.6f;
      target[128 + i] = 0.0f;
      target[192 + i] = -0.8f;
      target[256 + i] = static_cast<float>(rng.uniform());
    } else {
      target[256 + i] = 1.0f;
    }
  }
  const Var ones = t.leaf(NdArray({1, 16, 16}, 1.0f));
  const LossWeights w;
  CHECK(scalar(total_loss_iso(t.leaf(target), target, ones, w).total) < 5 * 1e-5);

  const NdArray o = fdtest::random_array({5, 8, 8}, 8, -0.2, 1.2);
  const Var imp = t.leaf(fdtest::random_array({1, 16, 16}, 9, 0.0, 2.0));
  const double full = scalar(total_loss_iso(t.leaf(o), target, imp, w).total);
  const auto parts = total_loss_iso(t.leaf(o), target, imp, w).parts;
  REQUIRE(parts.size() == 6);
  const float wk[] = {w.mask, w.normal, w.depth, w.bce, w.bounds, w.prior};
  for (int k = 0; k < 6; ++k) {
    LossWeights z = w;
    float* fields[] = {&z.mask, &z.normal, &z.depth, &z.bce, &z.bounds, &z.prior};
    *fields[k] = 0.0f;
    const double without = scalar(total_loss_iso(t.leaf(o), target, imp, z).total);
    CHECK(full - without == doctest::Approx(wk[k] * parts[k].second).epsilon(1e-4));
  }
  for (const auto& [name, value] : parts) CHECK(value >= 0.0f);
}

TEST_CASE("dvr total loss") {
  Tape t;
  const NdArray target = fdtest::random_array({8, 16, 16}, 11, 0.0, 1.0);
  CHECK(std::abs(scalar(total_loss_dvr(t.leaf(target), target).total)) < 1e-6);
  const NdArray blurred = box_blur(target);
  const auto lt = total_loss_dvr(t.leaf(blurred), target);
  REQUIRE(lt.parts.size() == 2);
  CHECK(lt.parts[1].second >= 0.0f);
  CHECK(lt.parts[1].second <= 2.0f);
  // The SSIM term outweighs the L1 term for a blurred copy.
  CHECK(lt.parts[1].second > lt.parts[0].second);
}

TEST_CASE("loss gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const NdArray target = fdtest::random_array({5, 8, 8}, 50 + seed, 0.0, 1.0);
    NdArray tm({1, 8, 8});
    for (int i = 0; i < 64; ++i) tm[i] = target[i] > 0.5f;
    NdArray o = target;
    Rng rng(seed);
    for (float& v : o.values()) v += static_cast<float>(rng.uniform() < 0.5 ? -0.1 - 0.2 * rng.uniform() : 0.1 + 0.2 * rng.uniform());
    fdtest::Graph l1 = [&](Tape&, const std::vector<Var>& in) { return l1_channel(in[0], target, 1, 3); };
    CHECK(fdtest::check(l1, {o}, 0, seed).max_rel < 1e-3);

    const NdArray m = fdtest::random_array({1, 8, 8}, 60 + seed, 0.1, 0.9);
    fdtest::Graph bce = [&](Tape&, const std::vector<Var>& in) { return bce_mask(in[0], tm); };
    CHECK(fdtest::check(bce, {m}, 0, seed).max_rel < 1e-3);

    NdArray mb = fdtest::random_array({1, 8, 8}, 70 + seed, 0.1, 0.9);
    for (int i = 0; i < 64; i += 4) mb[i] = i % 8 ? 1.3f : -0.4f;
    fdtest::Graph bounds = [&](Tape&, const std::vector<Var>& in) { return bounds_loss(in[0]); };
    CHECK(fdtest::check(bounds, {mb}, 0, seed).max_rel < 1e-3);

    fdtest::Graph prior = [&](Tape&, const std::vector<Var>& in) { return importance_prior(in[0]); };
    CHECK(fdtest::check(prior, {fdtest::random_array({1, 8, 8}, 80 + seed, 0.0, 3.0)}, 0, seed).max_rel < 1e-3);

  }
}

TEST_CASE("ssim loss gradient matches the double-precision oracle") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const NdArray rgb = fdtest::random_array({3, 8, 8}, 90 + seed, 0.0, 1.0);
    const NdArray rgb_t = box_blur(rgb);
    Tape t;
    Var x = t.leaf(rgb, true);
    t.backward(ssim_loss(x, rgb_t, 0, 3));
    double err2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < rgb.size(); ++i) {
      const double h = 1e-3;
      NdArray up = rgb, down = rgb;
      up[i] += static_cast<float>(h);
      down[i] -= static_cast<float>(h);
      const double fd = -(ssim_oracle(up, rgb_t) - ssim_oracle(down, rgb_t)) / (static_cast<double>(up[i]) - down[i]);
      err2 += (x.grad()[i] - fd) * (x.grad()[i] - fd);
      ref2 += fd * fd;
    }
    CHECK(std::sqrt(err2 / ref2) < 1e-3);
  }
}

TEST_CASE("quartiles and reports") {
  const Quartiles q = quartiles({4, 1, 3, 2, 5});
  CHECK(q.median == 3.0);
  CHECK(q.q25 == 2.0);
  CHECK(q.q75 == 4.0);
  const Quartiles q4 = quartiles({1, 2, 3, 4});
  CHECK(q4.median == 2.5);
  CHECK(q4.q25 == doctest::Approx(1.75));
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(std::isinf(quartiles({inf, inf, 1.0}).median));

  MetricReport r;
  r.records = {{"a", 30.5, 0.91}, {"b", inf, 1.0}, {"c", 25.0, 0.8}};
  const std::string path = (std::filesystem::temp_directory_path() / "adasample_report.txt").string();
  write_report(path, r);
  const MetricReport back = read_report(path);
  REQUIRE(back.records.size() == 3);
  CHECK(std::isinf(back.records[1].psnr));
  CHECK(back.records[2].ssim == doctest::Approx(0.8));
  std::ostringstream os;
  write_report(os, r);
  CHECK(os.str().find("summary psnr 27.75 30.5 inf") != std::string::npos);
  r.records.push_back({"has space", 1, 1});
  CHECK_THROWS_AS(write_report(os, r), std::invalid_argument);
}
