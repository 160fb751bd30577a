#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "adasample/pipeline.hpp"
#include "adasample/pullpush.hpp"
#include "doctest.h"

using namespace adasample;

namespace {

DatasetConfig toy_config(std::uint64_t seed, int views = 4) {
  DatasetConfig c;
  c.views = views;
  c.seed = seed;
  return c;
}

const std::vector<VolumeGrid>& volumes() {
  static const std::vector<VolumeGrid> v{make_synthetic(SyntheticKind::Metaballs, {40, 40, 40}, 1),
                                         make_synthetic(SyntheticKind::Torus, {40, 40, 40}, 2)};
  return v;
}

const std::vector<TrainSample>& dataset() {
  static const std::vector<TrainSample> d = build_dataset(volumes(), toy_config(5));
  return d;
}

bool same(const NdArray& a, const NdArray& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

EvalConfig eval_with(ImportanceMode mode) {
  EvalConfig c;
  c.importance = mode;
  return c;
}

double coverage(const NdArray& iso) {
  const std::size_t plane = static_cast<std::size_t>(iso.dim(1)) * iso.dim(2);
  std::size_t n = 0;
  for (std::size_t i = 0; i < plane; ++i) n += iso[i] > 0.5f;
  return static_cast<double>(n) / plane;
}

double median3(double a, double b, double c) { return std::max(std::min(a, b), std::min(std::max(a, b), c)); }

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("adasample_test_" + name);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("dataset shapes, coverage and determinism") {
  const auto& ds = dataset();
  REQUIRE(ds.size() == 8);
  const auto again = build_dataset(volumes(), toy_config(5));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const TrainSample& s = ds[i];
    CHECK(s.target.shape() == std::vector<int>{5, 64, 64});
    CHECK(s.low.shape() == std::vector<int>{5, 8, 8});
    CHECK(coverage(s.target) >= 0.5);
    CHECK(s.camera.crop_x % kLowResFactor == 0);
    CHECK(s.camera.crop_y % kLowResFactor == 0);
    CHECK(same(s.target, again[i].target));
    CHECK(same(s.low, again[i].low));
  }
  const auto other = build_dataset(volumes(), toy_config(6));
  bool differs = false;
  for (std::size_t i = 0; i < ds.size(); ++i) differs = differs || !same(ds[i].target, other[i].target);
  CHECK(differs);
}

TEST_CASE("dataset targets and low-res inputs are ray cast") {
  for (const TrainSample& s : dataset()) {
    const VolumeGrid& v = volumes()[s.volume];
    CHECK(same(render(v, s.camera, s.request).data, s.target));
    CHECK(same(render_lowres(v, s.camera, s.request, kLowResFactor).data, s.low));
  }
}

TEST_CASE("dvr dataset") {
  DatasetConfig c = toy_config(3, 2);
  c.mode = RenderMode::Dvr;
  const std::vector<VolumeGrid> v{volumes()[0]};
  const auto ds = build_dataset(v, c);
  REQUIRE(ds.size() == 2);
  for (const TrainSample& s : ds) {
    CHECK(s.target.dim(0) == image_channels(RenderMode::Dvr));
    CHECK(s.low.dim(0) == image_channels(RenderMode::Dvr));
    CHECK_NOTHROW(s.request.tf.validate());
    const std::size_t plane = static_cast<std::size_t>(s.target.dim(1)) * s.target.dim(2);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < plane; ++i) covered += s.target[dvr_layout::kRgba * plane + 3 * plane + i] > 0.01f;
    CHECK(static_cast<double>(covered) / plane >= c.min_coverage_dvr);
  }
}

TEST_CASE("dataset errors") {
  DatasetConfig c = toy_config(1);
  c.crop = 60;
  CHECK_THROWS_AS(build_dataset(volumes(), c), std::invalid_argument);
  c = toy_config(1);
  CHECK_THROWS_AS(build_dataset({}, c), std::invalid_argument);

  const VolumeGrid empty({16, 16, 16}, {1, 1, 1}, std::vector<float>(16 * 16 * 16, 0.0f));
  c.camera_attempts = 3;
  c.crop_attempts = 4;
  CHECK_THROWS_AS(build_dataset({empty}, c), std::runtime_error);
}

TEST_CASE("training halves the loss within 200 steps (median of 3 seeds)") {
  const auto toy = toy_volumes(ToySplit::Train);
  const auto set = build_dataset(toy, toy_config(5, 8));
  REQUIRE(set.size() == 32);
  double ratio[3];
  for (int seed = 1; seed <= 3; ++seed) {
    TrainConfig c;
    c.steps = 200;
    c.lr = 1e-3f;
    c.seed = seed;
    const TrainResult r = train(set, c);
    REQUIRE(r.losses.size() == 200);
    for (float l : r.losses) REQUIRE(std::isfinite(l));
    ratio[seed - 1] = r.losses[199] / r.losses[0];
  }
  CHECK(median3(ratio[0], ratio[1], ratio[2]) < 0.5);
}

TEST_CASE("frozen importance net keeps its weights while the reconstruction trains") {
  TrainConfig c;
  c.steps = 60;
  c.seed = 4;
  c.lr = 1e-3f;
  c.freeze_importance = true;
  const TrainResult r = train(dataset(), c);
  const ImportanceNet fresh(image_channels(RenderMode::Iso), c.importance_net, c.seed * 2 + 1, c.importance_baseline);
  REQUIRE(r.model.importance_net);
  const auto& p = r.model.importance_net->params();
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(same(p[i].value, fresh.params()[i].value));
  CHECK(mean_loss(r.losses, 51, 61) < mean_loss(r.losses, 1, 11));
}

TEST_CASE("training is deterministic and reports every step") {
  TrainConfig c;
  c.steps = 5;
  c.seed = 9;
  int calls = 0;
  std::vector<float> reported;
  const TrainResult a = train(dataset(), c, [&](int step, const StepReport& r) {
    CHECK(step == ++calls);
    CHECK_FALSE(r.parts.empty());
    for (const auto& [name, value] : r.parts) CHECK(std::isfinite(value));
    reported.push_back(r.loss);
  });
  CHECK(reported == a.losses);
  CHECK(calls == 5);
  const TrainResult b = train(dataset(), c);
  CHECK(a.losses == b.losses);
}

TEST_CASE("training errors") {
  TrainConfig c;
  c.steps = 2;
  CHECK_THROWS_AS(train({}, c), std::invalid_argument);
  c.steps = 0;
  CHECK_THROWS_AS(train(dataset(), c), std::invalid_argument);

  std::vector<TrainSample> bad{dataset()[0]};
  bad[0].target[7] = std::nanf("");
  c.steps = 3;
  try {
    train(bad, c);
    FAIL("expected a NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("mean_loss ranges") {
  const std::vector<float> l{4, 2, 3, 1};
  CHECK(mean_loss(l, 1, 3) == doctest::Approx(3.0));
  CHECK(mean_loss(l, 4, 5) == doctest::Approx(1.0));
  CHECK_THROWS_AS(mean_loss(l, 0, 2), std::invalid_argument);
  CHECK_THROWS_AS(mean_loss(l, 3, 3), std::invalid_argument);
  CHECK_THROWS_AS(mean_loss(l, 2, 6), std::invalid_argument);
}

TEST_CASE("evaluation budget, determinism and sparse-render equivalence") {
  TrainConfig tc;
  tc.steps = 20;
  tc.seed = 2;
  const TrainResult trained = train(dataset(), tc);
  for (ImportanceMode mode : {ImportanceMode::Constant, ImportanceMode::Gradient, ImportanceMode::Net}) {
    CAPTURE(to_string(mode));
    EvalConfig ec;
    ec.importance = mode;
    ec.keep_images = true;
    const EvalResult a = evaluate(&trained.model, volumes(), dataset(), ec);
    const EvalResult b = evaluate(&trained.model, volumes(), dataset(), ec);
    REQUIRE(a.report.records.size() == dataset().size());
    for (std::size_t i = 0; i < dataset().size(); ++i) {
      CHECK(a.fractions[i] >= 0.8 * ec.mu);
      CHECK(a.fractions[i] <= 1.2 * ec.mu);
      CHECK(a.report.records[i].psnr == b.report.records[i].psnr);
      CHECK(a.report.records[i].ssim == b.report.records[i].ssim);
      CHECK(a.report.records[i].ssim <= 1.0);

      const TrainSample& v = dataset()[i];
      const NdArray imp = compute_importance(&trained.model, mode, v.low);
      const NdArray norm = normalize_importance(imp, {ec.mu, ec.lower});
      const SamplePattern pattern = make_pattern(ec.pattern, v.target.dim(1), v.target.dim(2), 0);
      const HardSamples hard = sample_hard(norm, pattern, v.target);
      CHECK(same(a.images[i].samples, hard.samples));
      for (std::size_t p = 0; p < hard.taken.size(); ++p) REQUIRE(a.images[i].mask[p] == (hard.taken[p] ? 1.0f : 0.0f));
      CHECK(same(a.images[i].target, v.target));
    }
  }
}

TEST_CASE("evaluation without networks scores the pull-push fill") {
  EvalConfig ec;
  ec.keep_images = true;
  const EvalResult r = evaluate(nullptr, volumes(), dataset(), ec);
  for (std::size_t i = 0; i < r.images.size(); ++i) {
    const ViewImages& im = r.images[i];
    const PullPushResult fill = pullpush_forward({im.mask, im.samples});
    CHECK(same(im.inpainted, fill.data));
    CHECK(same(im.output, postprocess(fill.data, RenderMode::Iso)));
    const Camera& cam = dataset()[i].camera;
    CHECK(r.report.records[i].ssim == score_ssim(im.output, im.target, RenderMode::Iso, cam));
  }
  CHECK_THROWS_AS(evaluate(nullptr, volumes(), dataset(), eval_with(ImportanceMode::Net)), std::invalid_argument);
}

TEST_CASE("identical output and target score perfectly") {
  const TrainSample& v = dataset()[0];
  CHECK(score_ssim(v.target, v.target, RenderMode::Iso, v.camera) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::isinf(score_psnr(v.target, v.target, RenderMode::Iso, v.camera)));
}

TEST_CASE("checkpoint round trip reproduces evaluation bit for bit") {
  const auto dir = temp_dir("pipeline_ckpt");
  TrainConfig tc;
  tc.steps = 6;
  tc.seed = 3;
  tc.checkpoint_every = 2;
  tc.checkpoint_path = (dir / "model.ckpt").string();
  const TrainResult r = train(dataset(), tc);
  CHECK(std::filesystem::exists(dir / "model_step2.ckpt"));
  CHECK(std::filesystem::exists(dir / "model_step4.ckpt"));
  CHECK_FALSE(std::filesystem::exists(dir / "model_step6.ckpt"));
  const Checkpoint ck = load_checkpoint(tc.checkpoint_path);
  CHECK(ck.get("steps") == "6");
  const Model loaded = model_from_checkpoint(ck);
  CHECK(loaded.importance == ImportanceMode::Net);
  CHECK(loaded.importance_net->use_baseline());

  EvalConfig ec;
  ec.importance = ImportanceMode::Net;
  const EvalResult a = evaluate(&r.model, volumes(), dataset(), ec);
  const EvalResult b = evaluate(&loaded, volumes(), dataset(), ec);
  for (std::size_t i = 0; i < a.report.records.size(); ++i) {
    CHECK(a.report.records[i].psnr == b.report.records[i].psnr);
    CHECK(a.report.records[i].ssim == b.report.records[i].ssim);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("architecture mismatches are rejected") {
  TrainConfig tc;
  tc.steps = 1;
  tc.importance_baseline = false;
  const TrainResult nores = train(dataset(), tc);
  EvalConfig ec;
  ec.importance = ImportanceMode::Net;
  ec.require_baseline = true;
  try {
    evaluate(&nores.model, volumes(), dataset(), ec);
    FAIL("expected a mismatch");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("mismatch") != std::string::npos);
  }
  ec.require_baseline = false;
  CHECK_NOTHROW(evaluate(&nores.model, volumes(), {dataset()[0]}, ec));

  Model dvr = nores.model;
  dvr.mode = RenderMode::Dvr;
  CHECK_THROWS_AS(evaluate(&dvr, volumes(), dataset(), EvalConfig{}), std::invalid_argument);

  Checkpoint ck = to_checkpoint(nores.model);
  ck.params.pop_back();
  CHECK_THROWS_AS(model_from_checkpoint(ck), IoError);
  ck = to_checkpoint(nores.model);
  ck.header.erase("recon_blocks");
  CHECK_THROWS_AS(model_from_checkpoint(ck), IoError);
}

TEST_CASE("global residual improves held-out reconstruction") {
  const auto held = toy_volumes(ToySplit::HeldOut, 40);
  const auto views = build_dataset(held, toy_config(21, 2));
  double ssim_on = 0.0, ssim_off = 0.0;
  for (bool residual : {true, false}) {
    TrainConfig tc;
    tc.steps = 150;
    tc.lr = 1e-3f;
    tc.seed = 7;
    tc.importance = ImportanceMode::Gradient;
    tc.global_residual = residual;
    const TrainResult r = train(dataset(), tc);
    const EvalResult e = evaluate(&r.model, held, views, EvalConfig{});
    (residual ? ssim_on : ssim_off) = e.report.ssim_summary().median;
  }
  CHECK(ssim_off < ssim_on);
}

TEST_CASE("mode names round-trip") {
  for (auto m : {ImportanceMode::Constant, ImportanceMode::Gradient, ImportanceMode::Net}) {
    CHECK(parse_importance_mode(to_string(m)) == m);
  }
  for (auto s : {GradStage::Sampler, GradStage::PullPush, GradStage::Conv, GradStage::Ops, GradStage::End2End}) {
    CHECK(parse_grad_stage(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_importance_mode("lpips"), std::invalid_argument);
  CHECK_THROWS_AS(parse_grad_stage("all"), std::invalid_argument);
}

TEST_CASE("gradcheck stages meet their tolerances") {
  for (auto st : {GradStage::Sampler, GradStage::PullPush, GradStage::Conv, GradStage::Ops}) {
    const GradCheckReport r = gradcheck(st, 8, 1);
    CAPTURE(to_string(st));
    REQUIRE_FALSE(r.entries.empty());
    for (const auto& e : r.entries) {
      CAPTURE(e.input);
      CHECK(e.checked > 0);
      CHECK(e.max_rel < e.tolerance);
      if (st == GradStage::PullPush && e.input == "mask") {
        CHECK(e.tolerance == doctest::Approx(1e-2));
      } else {
        CHECK(e.tolerance == doctest::Approx(1e-3));
      }
    }
  }
  const GradCheckReport e2e = gradcheck(GradStage::End2End, 16, 2);
  CHECK(e2e.passed());
  for (const auto& e : e2e.entries) CHECK(e.tolerance == doctest::Approx(1e-2));
  CHECK_THROWS_AS(gradcheck(GradStage::End2End, 40, 1), std::invalid_argument);
  CHECK_THROWS_AS(gradcheck(GradStage::End2End, 12, 1), std::invalid_argument);
}
