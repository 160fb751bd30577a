#include <cmath>
#include <numbers>
#include <stdexcept>

#include "adasample/pipeline.hpp"
#include "adasample/random.hpp"
#include "adasample/tfgen.hpp"

namespace adasample {

void DatasetConfig::validate() const {
  if (views < 1) throw std::invalid_argument("dataset: views must be >= 1");
  if (crop < kLowResFactor || crop % kLowResFactor != 0) {
    throw std::invalid_argument("dataset: crop " + std::to_string(crop) + " is not a positive multiple of 8");
  }
  if (image < crop || image % kLowResFactor != 0) {
    throw std::invalid_argument("dataset: image size must be a multiple of 8 and >= crop");
  }
  if (!(min_coverage >= 0.0 && min_coverage <= 1.0) || !(min_coverage_dvr >= 0.0 && min_coverage_dvr <= 1.0)) {
    throw std::invalid_argument("dataset: coverage must lie in [0,1]");
  }
  if (crop_attempts < 1 || camera_attempts < 1) throw std::invalid_argument("dataset: attempts must be >= 1");
  if (!(distance_min > 0.0 && distance_max >= distance_min)) {
    throw std::invalid_argument("dataset: need 0 < distance_min <= distance_max");
  }
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw std::invalid_argument("dataset: fov_y out of range");
}

int image_channels(RenderMode mode) { return mode == RenderMode::Iso ? iso_layout::kChannels : dvr_layout::kChannels; }

namespace {

double coverage(const NdArray& full, int cx, int cy, int size, RenderMode mode) {
  const int w = full.dim(2);
  const float* ch = full.channel(mode == RenderMode::Iso ? iso_layout::kMask : dvr_layout::kRgba + 3);
  const float cut = mode == RenderMode::Iso ? 0.5f : 0.01f;
  std::size_t hit = 0;
  for (int y = cy; y < cy + size; ++y) {
    for (int x = cx; x < cx + size; ++x) hit += ch[static_cast<std::size_t>(y) * w + x] > cut;
  }
  return static_cast<double>(hit) / (static_cast<double>(size) * size);
}

NdArray crop_of(const NdArray& full, int cx, int cy, int size) {
  const int c = full.dim(0);
  NdArray out({c, size, size});
  for (int k = 0; k < c; ++k) {
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) out.at(k, y, x) = full.at(k, cy + y, cx + x);
    }
  }
  return out;
}

}  // namespace

std::vector<TrainSample> build_dataset(const std::vector<VolumeGrid>& volumes, const DatasetConfig& config) {
  config.validate();
  if (volumes.empty()) throw std::invalid_argument("build_dataset: no volumes");
  Rng rng(config.seed);
  const double min_cov = config.mode == RenderMode::Iso ? config.min_coverage : config.min_coverage_dvr;
  const int slots = (config.image - config.crop) / kLowResFactor + 1;
  std::vector<TrainSample> out;
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    const VolumeGrid& vol = volumes[v];
    Gmm1D gmm;
    if (config.mode == RenderMode::Dvr) {
      const auto densities = density_samples(vol, 100000, config.seed ^ (v + 1));
      if (densities.size() < 50) throw std::runtime_error("build_dataset: volume " + std::to_string(v) + " is empty");
      gmm = fit_gmm_bic(densities, 5, config.seed + v);
    }
    const double radius = 0.5 * length(vol.extent());
    for (int view = 0; view < config.views; ++view) {
      bool found = false;
      for (int attempt = 0; attempt < config.camera_attempts && !found; ++attempt) {
        const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double el = rng.uniform(-1.2, 1.2);
        const double dist = rng.uniform(config.distance_min, config.distance_max) * radius;
        const Camera cam = orbit_camera(vol.center(), dist, az, el, config.fov_y, config.image, config.image);
        RenderRequest req;
        req.mode = config.mode;
        req.iso = config.iso;
        req.dvr = config.dvr;
        if (config.mode == RenderMode::Dvr) req.tf = sample_random_tf(gmm, nullptr, rng.next()).tf;
        const ChannelImage full = render(vol, cam, req);
        for (int c = 0; c < config.crop_attempts; ++c) {
          const int cx = static_cast<int>(rng.below(slots)) * kLowResFactor;
          const int cy = static_cast<int>(rng.below(slots)) * kLowResFactor;
          if (coverage(full.data, cx, cy, config.crop, config.mode) < min_cov) continue;
          TrainSample s;
          s.volume = static_cast<int>(v);
          s.camera = cam.cropped(cx, cy, config.crop, config.crop);
          s.request = req;
          s.target = crop_of(full.data, cx, cy, config.crop);
          s.low = render_lowres(vol, s.camera, req, kLowResFactor).data;
          out.push_back(std::move(s));
          found = true;
          break;
        }
      }
      if (!found) {
        throw std::runtime_error("build_dataset: no crop with coverage >= " + std::to_string(min_cov) + " for volume " +
                                 std::to_string(v) + " view " + std::to_string(view) + " after " +
                                 std::to_string(config.camera_attempts) + " cameras");
      }
    }
  }
  return out;
}

std::vector<VolumeGrid> toy_volumes(ToySplit split, int size) {
  const std::uint64_t base = split == ToySplit::Train ? 0 : 10;
  const std::array<int, 3> dims{size, size, size};
  return {make_synthetic(SyntheticKind::Metaballs, dims, base + 1), make_synthetic(SyntheticKind::Metaballs, dims, base + 3),
          make_synthetic(SyntheticKind::Torus, dims, base + 2), make_synthetic(SyntheticKind::Torus, dims, base + 4)};
}

}  // namespace adasample
