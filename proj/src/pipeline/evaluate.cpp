#include <stdexcept>

#include "adasample/pipeline.hpp"
#include "adasample/pullpush.hpp"

namespace adasample {

void EvalConfig::validate() const { NormalizationParams{mu, lower}.validate(); }

NdArray compute_importance(const Model* model, ImportanceMode mode, const NdArray& low) {
  require_rank(low, 3, "compute_importance");
  switch (mode) {
    case ImportanceMode::Constant:
      return importance_constant(low.dim(1) * kLowResFactor, low.dim(2) * kLowResFactor);
    case ImportanceMode::Gradient:
      return importance_gradient(low);
    case ImportanceMode::Net:
      if (!model || !model->importance_net) throw std::invalid_argument("importance mode 'net' needs a trained model");
      return model->importance_net->infer(low);
  }
  return {};
}

NdArray postprocess(const NdArray& output, RenderMode mode) {
  return mode == RenderMode::Iso ? postprocess_iso(output) : postprocess_dvr(output);
}

double score_ssim(const NdArray& output, const NdArray& target, RenderMode mode, const Camera& camera) {
  return ssim(display_rgb(output, mode, camera), display_rgb(target, mode, camera));
}

double score_psnr(const NdArray& output, const NdArray& target, RenderMode mode, const Camera& camera) {
  return psnr(display_rgb(output, mode, camera), display_rgb(target, mode, camera));
}

NdArray display_rgb(const NdArray& channels, RenderMode mode, const Camera& camera) {
  if (mode == RenderMode::Iso) {
    const Vec3 toward_eye = -camera.forward();
    return shade_phong(channels, toward_eye, toward_eye);
  }
  return composite_over(channels, Vec3{1.0, 1.0, 1.0});
}

EvalResult evaluate(const Model* model, const std::vector<VolumeGrid>& volumes, const std::vector<TrainSample>& views,
                    const EvalConfig& config) {
  config.validate();
  if (config.importance == ImportanceMode::Net) {
    if (!model || !model->importance_net) {
      throw std::invalid_argument("evaluate: checkpoint/architecture mismatch: importance mode 'net' needs an importance net");
    }
    if (config.require_baseline && *config.require_baseline != model->importance_net->use_baseline()) {
      throw std::invalid_argument(std::string("evaluate: checkpoint/architecture mismatch: requested ") +
                                  (*config.require_baseline ? "net-residual" : "net-noresidual") +
                                  " but the checkpoint was trained " +
                                  (model->importance_net->use_baseline() ? "with" : "without") + " the residual baseline");
    }
  }
  const NormalizationParams norm{config.mu, config.lower};
  EvalResult result;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const TrainSample& v = views[i];
    const RenderMode mode = v.request.mode;
    if (model && model->mode != mode) throw std::invalid_argument("evaluate: checkpoint/architecture mismatch: render mode");
    if (v.volume < 0 || v.volume >= static_cast<int>(volumes.size())) {
      throw std::invalid_argument("evaluate: view " + std::to_string(i) + " references a missing volume");
    }
    const int h = v.target.dim(1), w = v.target.dim(2);
    const NdArray imp = compute_importance(model, config.importance, v.low);
    const NdArray normalized = normalize_importance(imp, norm);
    const SamplePattern pattern = make_pattern(config.pattern, h, w, 0);
    const PixelMask taken = select_pixels(normalized, pattern);
    const ChannelImage sparse = render(volumes[v.volume], v.camera, v.request, &taken);
    NdArray mask({1, h, w});
    std::size_t count = 0;
    for (std::size_t p = 0; p < taken.size(); ++p) {
      mask[p] = taken[p] ? 1.0f : 0.0f;
      count += taken[p];
    }
    const PullPushResult filled = pullpush_forward({mask, sparse.data});
    NdArray out = model && model->recon_net ? model->recon_net->infer(mask, sparse.data) : filled.data;
    out = postprocess(out, mode);

    result.report.records.push_back(
        {"view" + std::to_string(i), score_psnr(out, v.target, mode, v.camera), score_ssim(out, v.target, mode, v.camera)});
    result.fractions.push_back(static_cast<double>(count) / (static_cast<double>(h) * w));
    if (config.keep_images) {
      result.images.push_back({imp, mask, sparse.data, filled.data, std::move(out), v.target});
    }
  }
  return result;
}

}  // namespace adasample
