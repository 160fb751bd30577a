#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "adasample/parallel.hpp"
#include "adasample/render.hpp"

namespace adasample {

int ChannelImage::index(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("channel image has no channel '" + name + "'");
}

ChannelImage make_iso_image(int height, int width) {
  return {{"mask", "nx", "ny", "nz", "depth"}, NdArray({iso_layout::kChannels, height, width})};
}

ChannelImage make_dvr_image(int height, int width, bool gradient) {
  ChannelImage img{{"r", "g", "b", "a", "depth", "nx", "ny", "nz"}, {}};
  if (gradient) img.names.insert(img.names.end(), {"gx", "gy", "gz"});
  img.data = NdArray({static_cast<int>(img.names.size()), height, width});
  return img;
}

RenderMode parse_render_mode(const std::string& name) {
  if (name == "iso") return RenderMode::Iso;
  if (name == "dvr") return RenderMode::Dvr;
  throw std::invalid_argument("unknown render mode '" + name + "'");
}

float DepthRange::normalize(double t) const {
  return static_cast<float>(std::clamp((t - near) / (far - near), 0.0, 1.0));
}

DepthRange depth_range(const VolumeGrid& volume, const Camera& camera) {
  const Vec3 ext = volume.extent();
  const double radius = std::max(0.5 * length(ext), 1e-6);
  const double d = length(camera.eye - ext * 0.5);
  return {std::max(0.0, d - radius), d + radius};
}

namespace {

// Parametric interval of a ray inside the volume box; false on a miss.
bool clip_to_box(const Vec3& o, const Vec3& dir, const Vec3& ext, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (o[a] < 0.0 || o[a] > ext[a]) return false;
      continue;
    }
    double ta = (0.0 - o[a]) / dir[a], tb = (ext[a] - o[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

void check_mask(const PixelMask* mask, int h, int w) {
  if (mask && mask->size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("render: pixel mask has " + std::to_string(mask->size()) + " entries for a " + std::to_string(h) +
                     "x" + std::to_string(w) + " image");
  }
}

Vec3 unit_normal(const VolumeGrid& volume, const Vec3& p, Interpolation interp) {
  const Vec3 g = gradient(volume, p, interp);
  const double n = length(g);
  return n > 1e-12 ? -g / n : Vec3{};
}

}  // namespace

ChannelImage raycast_iso(const VolumeGrid& volume, const Camera& camera, const IsoSettings& settings,
                         const PixelMask* mask) {
  camera.validate();
  if (!(settings.step > 0.0f)) throw std::invalid_argument("raycast_iso: step must be positive");
  const int h = camera.out_height(), w = camera.out_width();
  check_mask(mask, h, w);
  ChannelImage img = make_iso_image(h, w);
  const DepthRange range = depth_range(volume, camera);
  const Vec3 ext = volume.extent();
  const double dt = settings.step * volume.min_spacing();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* out = img.data.data();

  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      if (mask && !(*mask)[o]) continue;
      out[iso_layout::kDepth * plane + o] = 1.0f;
      const Vec3 dir = camera.ray_direction(x, y);
      double t0, t1;
      if (!clip_to_box(camera.eye, dir, ext, t0, t1)) continue;
      const long steps = static_cast<long>(std::floor((t1 - t0) / dt));
      for (long k = 0; k <= steps; ++k) {
        const double t = t0 + k * dt;
        if (sample(volume, camera.eye + dir * t, settings.interp) < settings.isovalue) continue;
        double lo = k == 0 ? t : t - dt, hi = t;
        for (int it = 0; it < 3; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (sample(volume, camera.eye + dir * mid, settings.interp) >= settings.isovalue) {
            hi = mid;
          } else {
            lo = mid;
          }
        }
        const double th = 0.5 * (lo + hi);
        const Vec3 n = unit_normal(volume, camera.eye + dir * th, settings.interp);
        out[iso_layout::kMask * plane + o] = 1.0f;
        for (int a = 0; a < 3; ++a) out[(iso_layout::kNormal + a) * plane + o] = static_cast<float>(n[a]);
        out[iso_layout::kDepth * plane + o] = range.normalize(th);
        break;
      }
    }
  });
  return img;
}

float correct_opacity(float alpha, float step_voxels) {
  const double a = std::clamp(static_cast<double>(alpha), 0.0, 1.0);
  if (a >= 1.0) return 1.0f;
  return static_cast<float>(1.0 - std::pow(1.0 - a, static_cast<double>(step_voxels)));
}

void Compositor::add(const float color[3], float sample_alpha, double sample_depth, const Vec3& normal_dir,
                     const Vec3& gradient_value) {
  const double wgt = (1.0 - alpha) * sample_alpha;
  for (int c = 0; c < 3; ++c) {
    rgb[c] += wgt * color[c];
    normal[c] += wgt * normal_dir[c];
    grad[c] += wgt * gradient_value[c];
  }
  depth += wgt * sample_depth;
  alpha += wgt;
}

ChannelImage raycast_dvr(const VolumeGrid& volume, const Camera& camera, const TransferFunction& tf,
                         const DvrSettings& settings, const PixelMask* mask) {
  camera.validate();
  tf.validate();
  if (!(settings.step > 0.0f)) throw std::invalid_argument("raycast_dvr: step must be positive");
  const int h = camera.out_height(), w = camera.out_width();
  check_mask(mask, h, w);
  ChannelImage img = make_dvr_image(h, w, settings.gradient_channel);
  const DepthRange range = depth_range(volume, camera);
  const Vec3 ext = volume.extent();
  const double dt = settings.step * volume.min_spacing();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  float* out = img.data.data();

  parallel_for(0, h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      if (mask && !(*mask)[o]) continue;
      const Vec3 dir = camera.ray_direction(x, y);
      double t0, t1;
      Compositor acc;
      if (clip_to_box(camera.eye, dir, ext, t0, t1)) {
        const long steps = static_cast<long>(std::floor((t1 - t0) / dt));
        for (long k = 0; k <= steps && acc.alpha <= settings.termination; ++k) {
          const double t = t0 + k * dt;
          const Vec3 p = camera.eye + dir * t;
          const auto rgba = tf(sample(volume, p, settings.interp));
          if (rgba[3] <= 0.0f) continue;
          const float a = correct_opacity(rgba[3], settings.step);
          const Vec3 g = gradient(volume, p, settings.interp);
          const double gn = length(g);
          const Vec3 n = gn > 1e-12 ? -g / gn : Vec3{};
          acc.add(rgba.data(), a, range.normalize(t), n, g * volume.min_spacing());
        }
      }
      for (int c = 0; c < 3; ++c) out[(dvr_layout::kRgba + c) * plane + o] = static_cast<float>(acc.rgb[c]);
      out[(dvr_layout::kRgba + 3) * plane + o] = static_cast<float>(acc.alpha);
      out[dvr_layout::kDepth * plane + o] = static_cast<float>(acc.depth);
      for (int c = 0; c < 3; ++c) out[(dvr_layout::kNormal + c) * plane + o] = static_cast<float>(acc.normal[c]);
      if (settings.gradient_channel) {
        for (int c = 0; c < 3; ++c) out[(dvr_layout::kGradient + c) * plane + o] = static_cast<float>(acc.grad[c]);
      }
    }
  });
  return img;
}

ChannelImage render(const VolumeGrid& volume, const Camera& camera, const RenderRequest& request,
                    const PixelMask* mask) {
  if (request.mode == RenderMode::Iso) return raycast_iso(volume, camera, request.iso, mask);
  return raycast_dvr(volume, camera, request.tf, request.dvr, mask);
}

ChannelImage render_lowres(const VolumeGrid& volume, const Camera& camera, const RenderRequest& request, int factor) {
  return render(volume, camera.downscaled(factor), request);
}

NdArray shade_phong(const NdArray& iso, const Vec3& light_dir, const Vec3& view_dir, const Material& material) {
  require_rank(iso, 3, "shade_phong");
  if (iso.dim(0) < iso_layout::kChannels) throw ShapeError("shade_phong: dimension 0 must hold 5 iso channels");
  const int h = iso.dim(1), w = iso.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const Vec3 l = normalized(light_dir), v = normalized(view_dir);
  NdArray rgb({3, h, w});
  for (std::size_t o = 0; o < plane; ++o) {
    Vec3 c = material.background;
    if (iso[iso_layout::kMask * plane + o] >= 0.5f) {
      const Vec3 n = normalized(Vec3{iso[(iso_layout::kNormal + 0) * plane + o], iso[(iso_layout::kNormal + 1) * plane + o],
                                     iso[(iso_layout::kNormal + 2) * plane + o]});
      const double nl = dot(n, l);
      const double diff = std::max(0.0, nl);
      double spec = 0.0;
      if (nl > 0.0) {
        const Vec3 r = n * (2.0 * nl) - l;
        spec = std::pow(std::max(0.0, dot(r, v)), material.shininess);
      }
      c = material.color * (material.ambient + material.diffuse * diff) + Vec3{1.0, 1.0, 1.0} * (material.specular * spec);
    }
    for (int ch = 0; ch < 3; ++ch) rgb[ch * plane + o] = static_cast<float>(std::clamp(c[ch], 0.0, 1.0));
  }
  return rgb;
}

NdArray composite_over(const NdArray& rgba, const Vec3& background) {
  require_rank(rgba, 3, "composite_over");
  if (rgba.dim(0) < 4) throw ShapeError("composite_over: dimension 0 must hold rgba");
  const int h = rgba.dim(1), w = rgba.dim(2);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  NdArray rgb({3, h, w});
  for (std::size_t o = 0; o < plane; ++o) {
    const float a = std::clamp(rgba[3 * plane + o], 0.0f, 1.0f);
    for (int c = 0; c < 3; ++c) rgb[c * plane + o] = rgba[c * plane + o] + (1.0f - a) * static_cast<float>(background[c]);
  }
  return rgb;
}

}  // namespace adasample
