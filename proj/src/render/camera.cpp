#include <cmath>
#include <numbers>
#include <stdexcept>

#include "adasample/render.hpp"

namespace adasample {

void Camera::validate() const {
  const Vec3 f = look_at - eye;
  if (length(f) < 1e-12) throw std::invalid_argument("camera: eye equals look-at");
  if (length(cross(normalized(f), up)) < 1e-9) throw std::invalid_argument("camera: up is parallel to the view");
  if (!(fov_y > 0.0 && fov_y < std::numbers::pi)) throw std::invalid_argument("camera: fov must lie in (0, pi)");
  if (width < 1 || height < 1) throw std::invalid_argument("camera: image size must be positive");
  if (crop_x < 0 || crop_y < 0 || crop_width < 0 || crop_height < 0 || crop_x + out_width() > width ||
      crop_y + out_height() > height) {
    throw std::invalid_argument("camera: crop window exceeds the image");
  }
}

Camera Camera::cropped(int x, int y, int w, int h) const {
  Camera c = *this;
  c.crop_x = x;
  c.crop_y = y;
  c.crop_width = w;
  c.crop_height = h;
  c.validate();
  return c;
}

Camera Camera::downscaled(int factor) const {
  if (factor < 1) throw std::invalid_argument("camera: downscale factor must be >= 1");
  for (int v : {width, height, crop_x, crop_y, crop_width, crop_height}) {
    if (v % factor != 0) {
      throw std::invalid_argument("camera: resolution " + std::to_string(width) + "x" + std::to_string(height) +
                                  " and crop are not divisible by " + std::to_string(factor));
    }
  }
  Camera c = *this;
  c.width /= factor;
  c.height /= factor;
  c.crop_x /= factor;
  c.crop_y /= factor;
  c.crop_width /= factor;
  c.crop_height /= factor;
  return c;
}

Vec3 Camera::ray_direction(int x, int y) const {
  const Vec3 f = forward();
  const Vec3 right = normalized(cross(f, up));
  const Vec3 true_up = cross(right, f);
  const double t = std::tan(0.5 * fov_y);
  const double aspect = static_cast<double>(width) / height;
  const double px = crop_x + x + 0.5, py = crop_y + y + 0.5;
  const double sx = (2.0 * px / width - 1.0) * t * aspect;
  const double sy = (1.0 - 2.0 * py / height) * t;
  return normalized(f + right * sx + true_up * sy);
}

Camera orbit_camera(const Vec3& center, double distance, double azimuth, double elevation, double fov_y, int width,
                    int height) {
  Camera c;
  const Vec3 offset{distance * std::cos(elevation) * std::sin(azimuth), distance * std::sin(elevation),
                    -distance * std::cos(elevation) * std::cos(azimuth)};
  c.eye = center + offset;
  c.look_at = center;
  c.up = std::abs(std::sin(elevation)) > 0.99 ? Vec3{0.0, 0.0, 1.0} : Vec3{0.0, 1.0, 0.0};
  c.fov_y = fov_y;
  c.width = width;
  c.height = height;
  c.validate();
  return c;
}

}  // namespace adasample
