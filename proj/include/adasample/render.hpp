#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "adasample/ndarray.hpp"
#include "adasample/vec3.hpp"
#include "adasample/volume.hpp"

namespace adasample {

// Pinhole camera over a full image of width x height pixels, rendering the
// crop window [crop_x, crop_x + crop_width) x [crop_y, crop_y + crop_height).
// A zero crop extent means the whole image.
struct Camera {
  Vec3 eye{0.0, 0.0, -1.0};
  Vec3 look_at{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double fov_y = 0.8;  // radians
  int width = 64, height = 64;
  int crop_x = 0, crop_y = 0, crop_width = 0, crop_height = 0;

  // Throws std::invalid_argument for a degenerate camera.
  void validate() const;
  int out_width() const { return crop_width > 0 ? crop_width : width; }
  int out_height() const { return crop_height > 0 ? crop_height : height; }
  Vec3 forward() const { return normalized(look_at - eye); }

  Camera cropped(int x, int y, int w, int h) const;
  // Same view at 1/factor resolution; full size and crop must divide.
  Camera downscaled(int factor) const;

  // Unit direction through the center of crop pixel (x, y).
  Vec3 ray_direction(int x, int y) const;
};

// Camera on a sphere around center looking at it.
Camera orbit_camera(const Vec3& center, double distance, double azimuth, double elevation, double fov_y, int width,
                    int height);

// Channel layouts.
namespace iso_layout {
constexpr int kMask = 0, kNormal = 1, kDepth = 4, kChannels = 5;
}
namespace dvr_layout {
constexpr int kRgba = 0, kDepth = 4, kNormal = 5, kGradient = 8, kChannels = 8, kChannelsWithGradient = 11;
}

struct ChannelImage {
  std::vector<std::string> names;
  NdArray data;  // [C,H,W]

  int channels() const { return data.empty() ? 0 : data.dim(0); }
  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }
  int index(const std::string& name) const;  // throws if absent
};

ChannelImage make_iso_image(int height, int width);
ChannelImage make_dvr_image(int height, int width, bool gradient);

struct TfPoint {
  float density = 0.0f;
  float r = 0.0f, g = 0.0f, b = 0.0f;
  float opacity = 0.0f;
};

// Piecewise-linear map density -> (rgb, opacity); constant beyond the
// first and last control point.
struct TransferFunction {
  std::vector<TfPoint> points;

  void validate() const;
  std::array<float, 4> operator()(float density) const;
};

// One control point per line: "density r g b opacity".
std::string tf_to_text(const TransferFunction& tf);
TransferFunction tf_from_text(const std::string& text);
void write_tf(const std::string& path, const TransferFunction& tf);
TransferFunction read_tf(const std::string& path);

struct IsoSettings {
  float isovalue = 0.5f;
  float step = 0.25f;  // voxels
  Interpolation interp = Interpolation::Trilinear;
};

struct DvrSettings {
  float step = 0.25f;  // voxels
  Interpolation interp = Interpolation::Trilinear;
  bool gradient_channel = false;
  float termination = 0.999f;
};

// H*W selection flags for sparse rendering; unselected pixels stay zero.
using PixelMask = std::vector<std::uint8_t>;

// Depth normalization range along each ray: distance from the eye to the
// near and far side of the sphere enclosing the volume box.
struct DepthRange {
  double near = 0.0, far = 1.0;
  float normalize(double t) const;
};
DepthRange depth_range(const VolumeGrid& volume, const Camera& camera);

// Iso channels per pixel: mask, world normal (-grad f / |grad f|), depth.
// A miss leaves mask 0, normal 0, depth 1.
ChannelImage raycast_iso(const VolumeGrid& volume, const Camera& camera, const IsoSettings& settings,
                         const PixelMask* mask = nullptr);

// Opacity of a sample taken every step_voxels voxels, referenced to 1 voxel.
float correct_opacity(float alpha, float step_voxels);

// Front-to-back emission-absorption accumulator. Depth, normal and gradient
// are blended with the same weights as color.
struct Compositor {
  double rgb[3] = {0, 0, 0};
  double alpha = 0.0;
  double depth = 0.0;
  double normal[3] = {0, 0, 0};
  double grad[3] = {0, 0, 0};

  void add(const float color[3], float sample_alpha, double sample_depth, const Vec3& normal_dir,
           const Vec3& gradient_value);
};

ChannelImage raycast_dvr(const VolumeGrid& volume, const Camera& camera, const TransferFunction& tf,
                         const DvrSettings& settings, const PixelMask* mask = nullptr);

enum class RenderMode { Iso, Dvr };
RenderMode parse_render_mode(const std::string& name);

struct RenderRequest {
  RenderMode mode = RenderMode::Iso;
  IsoSettings iso;
  DvrSettings dvr;
  TransferFunction tf;
};

ChannelImage render(const VolumeGrid& volume, const Camera& camera, const RenderRequest& request,
                    const PixelMask* mask = nullptr);
// Ray casts at 1/factor resolution (not a downsample of the full image).
ChannelImage render_lowres(const VolumeGrid& volume, const Camera& camera, const RenderRequest& request,
                           int factor = 8);

struct Material {
  Vec3 color{0.85, 0.8, 0.7};
  double ambient = 0.15, diffuse = 0.7, specular = 0.3, shininess = 32.0;
  Vec3 background{1.0, 1.0, 1.0};
};

// Phong shading of iso channels [5,H,W] to rgb [3,H,W]. light_dir and
// view_dir point from the surface toward the light and the viewer.
NdArray shade_phong(const NdArray& iso, const Vec3& light_dir, const Vec3& view_dir, const Material& material = {});

// rgba over a background color -> rgb.
NdArray composite_over(const NdArray& rgba, const Vec3& background);

// 8-bit PNG of a [1|3|4,H,W] image with values clamped to [0,1].
void write_png(const std::string& path, const NdArray& image);
NdArray read_png(const std::string& path);

// Float channel container: "ADSCHAN 1\nH W C\nname...\n" then float32 LE,
// channel-planar.
void write_chan(const std::string& path, const ChannelImage& image);
ChannelImage read_chan(const std::string& path);

}  // namespace adasample
