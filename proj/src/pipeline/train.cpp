#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "adasample/adam.hpp"
#include "adasample/ops.hpp"
#include "adasample/pipeline.hpp"
#include "adasample/random.hpp"

namespace adasample {

void TrainConfig::validate() const {
  importance_net.validate("importance net");
  recon_net.validate("recon net");
  NormalizationParams{mu, lower}.validate();
  SamplerConfig{alpha}.validate();
  weights.validate();
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be finite and >= 0");
  if (steps < 1) throw std::invalid_argument("train: steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
}

double mean_loss(const std::vector<float>& losses, int begin, int end) {
  if (begin < 1 || end <= begin || end - 1 > static_cast<int>(losses.size())) {
    throw std::invalid_argument("mean_loss: step range out of bounds");
  }
  double s = 0.0;
  for (int i = begin; i < end; ++i) s += losses[i - 1];
  return s / (end - begin);
}

namespace {

std::string stepped_path(const std::string& path, int step) {
  std::filesystem::path p(path);
  const std::string stem = p.stem().string() + "_step" + std::to_string(step);
  return (p.parent_path() / (stem + p.extension().string())).string();
}

void permute_rgb(NdArray& a, const std::array<int, 3>& perm) {
  const std::size_t plane = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  std::vector<float> rgb(a.data(), a.data() + 3 * plane);
  for (int c = 0; c < 3; ++c) std::copy_n(rgb.data() + perm[c] * plane, plane, a.channel(c));
}

void accumulate(std::vector<NdArray>& acc, const std::vector<NdArray>& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    for (std::size_t j = 0; j < acc[i].size(); ++j) acc[i][j] += g[i][j];
  }
}

void divide(std::vector<NdArray>& acc, float d) {
  for (auto& a : acc) {
    for (auto& v : a.values()) v /= d;
  }
}

}  // namespace

TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const RenderMode mode = dataset.front().request.mode;
  const int channels = image_channels(mode);
  const auto& tshape = dataset.front().target.shape();
  for (const TrainSample& s : dataset) {
    if (s.request.mode != mode || s.target.shape() != tshape || s.target.dim(0) != channels) {
      throw ShapeError("train: dataset samples differ in mode or shape");
    }
  }
  const int h = tshape[1], w = tshape[2];

  TrainResult result;
  Model& m = result.model;
  m.mode = mode;
  m.importance = config.importance;
  if (config.importance == ImportanceMode::Net) {
    m.importance_net = ImportanceNet(channels, config.importance_net, config.seed * 2 + 1, config.importance_baseline);
  }
  m.recon_net = ReconNet(channels, config.recon_net, config.seed * 2 + 2, config.global_residual, config.recon_input);
  const bool train_importance = m.importance_net && !config.freeze_importance;
  AdamState inet_state, rnet_state = AdamState::for_params(m.recon_net->params());
  if (m.importance_net) inet_state = AdamState::for_params(m.importance_net->params());

  const SamplePattern base_pattern = make_pattern(config.pattern, h, w, config.seed);
  const NormalizationParams norm{config.mu, config.lower};
  Rng rng(config.seed ^ 0x7f4a7c159e3779b9ULL);

  auto save = [&](const std::string& path, int step) {
    save_checkpoint(path, to_checkpoint(m, {{"steps", std::to_string(step)},
                                            {"seed", std::to_string(config.seed)},
                                            {"mu", std::to_string(config.mu)},
                                            {"alpha", std::to_string(config.alpha)}}));
  };

  for (int step = 1; step <= config.steps; ++step) {
    std::vector<NdArray> g_inet, g_rnet;
    double loss_sum = 0.0;
    StepReport last;
    for (int b = 0; b < config.batch; ++b) {
      const TrainSample& s = dataset[rng.below(dataset.size())];
      NdArray low = s.low, target = s.target;
      if (mode == RenderMode::Dvr && config.shuffle_rgb) {
        std::array<int, 3> perm{0, 1, 2};
        for (int i = 2; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
        permute_rgb(low, perm);
        permute_rgb(target, perm);
      }
      const SamplePattern pattern =
          config.shift_pattern
              ? base_pattern.shifted(static_cast<int>(rng.below(h)), static_cast<int>(rng.below(w)))
              : base_pattern;

      Tape tape;
      std::vector<Var> ib;
      if (m.importance_net) ib = bind_parameters(tape, m.importance_net->params(), train_importance);
      const std::vector<Var> rb = bind_parameters(tape, m.recon_net->params());
      const Var lv = tape.leaf(low);
      const Var imp = m.importance_net ? m.importance_net->forward(ib, lv)
                                       : tape.leaf(compute_importance(nullptr, config.importance, low));
      const Var normalized = normalize_importance(imp, norm);
      const SmoothSampleVars smp = sample_smooth(normalized, pattern, target, config.alpha);
      const Var out = m.recon_net->forward(rb, smp.mask, tape.leaf(target));
      LossTerms terms;
      if (mode == RenderMode::Iso) {
        terms = total_loss_iso(out, target, imp, config.weights);
      } else {
        terms = total_loss_dvr(out, target);
        const Var prior = importance_prior(imp);
        terms.parts.emplace_back("prior", prior.value()[0]);
        terms.total = weighted_sum({{1.0f, terms.total}, {config.weights.prior, prior}});
      }
      const float loss = terms.total.value()[0];
      if (!std::isfinite(loss)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step));
      }
      tape.backward(terms.total);
      if (train_importance) accumulate(g_inet, collect_gradients(ib));
      accumulate(g_rnet, collect_gradients(rb));
      loss_sum += loss;
      last.parts = std::move(terms.parts);
    }
    try {
      if (config.batch > 1) {
        divide(g_rnet, static_cast<float>(config.batch));
        if (train_importance) divide(g_inet, static_cast<float>(config.batch));
      }
      adam_step(m.recon_net->params(), g_rnet, rnet_state, config.lr);
      if (train_importance) adam_step(m.importance_net->params(), g_inet, inet_state, config.lr);
    } catch (const NumericError& e) {
      throw NumericError("train: step " + std::to_string(step) + ": " + e.what());
    }
    result.losses.push_back(static_cast<float>(loss_sum / config.batch));
    last.loss = result.losses.back();
    if (on_step) on_step(step, last);
    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && step % config.checkpoint_every == 0 &&
        step != config.steps) {
      save(stepped_path(config.checkpoint_path, step), step);
    }
  }
  if (!config.checkpoint_path.empty()) save(config.checkpoint_path, config.steps);
  return result;
}

}  // namespace adasample
