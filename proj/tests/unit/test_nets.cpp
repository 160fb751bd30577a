#include <cmath>
#include <filesystem>
#include <fstream>

#include "adasample/nets.hpp"
#include "adasample/ops.hpp"
#include "adasample/pullpush.hpp"
#include "adasample/sampler.hpp"
#include "doctest.h"
#include "fd_oracle.hpp"

using namespace adasample;
namespace fs = std::filesystem;

namespace {

void zero_all(std::vector<Parameter>& params) {
  for (auto& p : params) p.value.fill(0.0f);
}

double softplus_ref(double x) { return x > 20 ? x : std::log1p(std::exp(x)); }

// Direct stencil: central differences inside, one-sided at the borders.
double stencil_oracle(const NdArray& l, int c, int y, int x) {
  const int h = l.dim(1), w = l.dim(2);
  auto v = [&](int yy, int xx) { return static_cast<double>(l.at(c, yy, xx)); };
  double gx = x == 0 ? v(y, 1) - v(y, 0) : x == w - 1 ? v(y, x) - v(y, x - 1) : (v(y, x + 1) - v(y, x - 1)) / 2;
  double gy = y == 0 ? v(1, x) - v(0, x) : y == h - 1 ? v(y, x) - v(y - 1, x) : (v(y + 1, x) - v(y - 1, x)) / 2;
  return gx * gx + gy * gy;
}

}  // namespace

TEST_CASE("constant importance") {
  const NdArray one = importance_constant(16, 24);
  CHECK(one.shape() == std::vector<int>{1, 16, 24});
  NormalizationParams p;
  p.mean = 0.1f;
  const NdArray n = normalize_importance(one, p);
  for (float v : n.values()) CHECK(v == doctest::Approx(0.1).epsilon(1e-5));
  const SamplePattern pat = pattern_plastic(16, 24);
  const NdArray target = fdtest::random_array({2, 16, 24}, 3);
  const HardSamples hs = sample_hard(n, pat, target);
  for (std::size_t i = 0; i < pat.thresholds().size(); ++i) CHECK((hs.taken[i] != 0) == (n[i] > pat.thresholds()[i]));
}

TEST_CASE("gradient importance") {
  NdArray flat({3, 6, 6}, 0.4f);
  const NdArray gflat = gradient_magnitude(flat);
  for (float v : gflat.values()) CHECK(v == 0.0f);

  NdArray step({2, 6, 8});
  for (int y = 0; y < 6; ++y)
    for (int x = 4; x < 8; ++x) step.at(1, y, x) = 1.0f;
  const NdArray g = gradient_magnitude(step);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) CHECK(g.at(0, y, x) == doctest::Approx(stencil_oracle(step, 1, y, x)));
  CHECK(g.at(0, 2, 3) == doctest::Approx(0.25));
  CHECK(g.at(0, 2, 4) == doctest::Approx(0.25));
  CHECK(g.at(0, 2, 0) == 0.0f);
  CHECK(g.at(0, 2, 7) == 0.0f);

  const NdArray g2 = gradient_magnitude(step, {0.0f, 2.0f});
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g[i]));
  CHECK_THROWS_AS(gradient_magnitude(step, {1.0f}), ShapeError);

  const NdArray up = importance_gradient(step);
  CHECK(up.shape() == std::vector<int>{1, 48, 64});
}

TEST_CASE("importance net shapes, range and zero-weight trace") {
  NetConfig cfg{8, 2};
  ImportanceNet net(5, cfg, 1);
  const NdArray low = fdtest::random_array({5, 4, 6}, 2, 0.0, 1.0);
  const NdArray out = net.infer(low);
  CHECK(out.shape() == std::vector<int>{1, 32, 48});
  for (float v : out.values()) CHECK(v >= 0.0f);

  const NdArray big = net.infer(fdtest::random_array({5, 8, 12}, 2, 0.0, 1.0));
  CHECK(big.shape() == std::vector<int>{1, 64, 96});

  zero_all(net.params());
  const NdArray z = net.infer(low);
  NdArray base = gradient_magnitude(low);
  for (int i = 0; i < 3; ++i) base = kernels::upsample2x(base);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(softplus_ref(base[i])).epsilon(1e-5));

  ImportanceNet plain(5, cfg, 1, false);
  zero_all(plain.params());
  const NdArray pz = plain.infer(low);
  for (float v : pz.values()) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  CHECK_THROWS_AS(net.infer(NdArray({3, 4, 4})), ShapeError);
  CHECK_THROWS_AS(ImportanceNet(5, NetConfig{2, 1}, 0), std::invalid_argument);
  CHECK_THROWS_AS(ImportanceNet(5, NetConfig{8, 0}, 0), std::invalid_argument);
}

TEST_CASE("reconstruction net residual identities") {
  NetConfig cfg{8, 2};
  ReconNet net(5, cfg, 4);
  zero_all(net.params());
  const NdArray target = fdtest::random_array({5, 16, 16}, 5, 0.0, 1.0);
  NdArray mask({1, 16, 16});
  Rng rng(6);
  for (float& m : mask.values()) m = rng.uniform() < 0.2 ? 1.0f : 0.0f;
  NdArray samples = target;
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 256; ++i) samples[c * 256 + i] *= mask[i];
  const NdArray out = net.infer(mask, samples);
  const PullPushResult pp = pullpush_forward({mask, samples});
  CHECK(out == pp.data);

  const NdArray dense = net.infer(NdArray({1, 16, 16}, 1.0f), target);
  CHECK(dense == target);

  ReconNet raw(5, cfg, 4, true, ReconInput::Raw);
  zero_all(raw.params());
  CHECK(raw.infer(mask, samples) == samples);

  ReconNet nores(5, cfg, 4, false);
  zero_all(nores.params());
  const NdArray nz = nores.infer(mask, samples);
  for (float v : nz.values()) CHECK(v == 0.0f);
  CHECK_THROWS_AS(net.infer(mask, NdArray({4, 16, 16})), ShapeError);
}

TEST_CASE("post-processing") {
  NdArray o({5, 1, 2});
  o.at(0, 0, 0) = 1.4f;
  o.at(0, 0, 1) = -0.2f;
  o.at(1, 0, 0) = 3.0f;
  o.at(3, 0, 0) = 4.0f;
  o.at(4, 0, 0) = 2.0f;
  const NdArray p = postprocess_iso(o);
  CHECK(p.at(0, 0, 0) == 1.0f);
  CHECK(p.at(0, 0, 1) == 0.0f);
  CHECK(p.at(1, 0, 0) == doctest::Approx(0.6));
  CHECK(p.at(3, 0, 0) == doctest::Approx(0.8));
  CHECK(p.at(4, 0, 0) == 1.0f);
  CHECK(p.at(1, 0, 1) == 0.0f);
  NdArray d({8, 1, 1}, 1.5f);
  const NdArray pd = postprocess_dvr(d);
  CHECK(pd[3] == 1.0f);
  CHECK(pd[6] == 1.5f);
}

TEST_CASE("gradient reaches the importance network through sampler and pull-push") {
  NetConfig cfg{4, 1};
  ImportanceNet inet(5, cfg, 7);
  ReconNet rnet(5, cfg, 8);
  const NdArray low = fdtest::random_array({5, 2, 2}, 9, 0.0, 1.0);
  const NdArray target = fdtest::random_array({5, 16, 16}, 10, 0.0, 1.0);
  const SamplePattern pat = pattern_plastic(16, 16);
  Tape tape;
  const auto ib = bind_parameters(tape, inet.params());
  const auto rb = bind_parameters(tape, rnet.params());
  const Var imp = inet.forward(ib, tape.leaf(low));
  NormalizationParams np;
  np.mean = 0.2f;
  const Var norm = normalize_importance(imp, np);
  const auto smp = sample_smooth(norm, pat, target, 20.0f);
  const Var out = rnet.forward(rb, smp.mask, smp.samples);
  tape.backward(sum(out));
  const auto grads = collect_gradients(ib);
  double total = 0.0;
  for (const auto& g : grads)
    for (float v : g.values()) total += std::abs(v);
  CHECK(total > 1e-6);
  CHECK(std::isfinite(total));
}

TEST_CASE("checkpoint round trip") {
  const fs::path dir = fs::temp_directory_path() / "adasample_test_nets";
  fs::create_directories(dir);
  const std::string path = (dir / "a.ckpt").string();
  ImportanceNet net(5, NetConfig{6, 2}, 3);
  Checkpoint ck;
  ck.header["seed"] = "3";
  ck.header["note"] = "two words";
  ck.params = net.params();
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.get("seed") == "3");
  CHECK(back.get("note") == "two words");
  CHECK_THROWS_AS(back.get("missing"), IoError);
  ImportanceNet other(5, NetConfig{6, 2}, 99);
  assign_parameters(other.params(), back.params);
  for (std::size_t i = 0; i < net.params().size(); ++i) CHECK(other.params()[i].value == net.params()[i].value);

  ImportanceNet wider(5, NetConfig{8, 2}, 3);
  CHECK_THROWS_AS(assign_parameters(wider.params(), back.params), IoError);

  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(path, std::ios::binary);
    out << all.substr(0, all.size() - 10);
  }
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
  CHECK_THROWS_AS(load_checkpoint((dir / "none.ckpt").string()), IoError);
}

TEST_CASE("network gradients match finite differences") {
  NetConfig cfg{4, 1};
  ReconNet net(3, cfg, 12);
  const NdArray mask = fdtest::random_array({1, 8, 8}, 13, 0.1, 0.9);
  const NdArray samples = fdtest::random_array({3, 8, 8}, 14, 0.0, 1.0);
  const auto& params = net.params();
  // conv_in weight and the last bias
  for (std::size_t which : {std::size_t(0), params.size() - 1}) {
    fdtest::Graph g = [&](Tape& t, const std::vector<Var>& in) {
      std::vector<Var> bound = bind_parameters(t, params, false);
      bound[which] = in[0];
      return net.forward(bound, t.leaf(mask), t.leaf(samples));
    };
    const fdtest::Check c = fdtest::check(g, {params[which].value}, 0, 21, 1e-3, true);
    CHECK(c.max_rel < 1e-2);
    CHECK(c.skipped <= static_cast<int>(params[which].value.size()) / 10);
  }
}
