#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "adasample/ndarray.hpp"
#include "adasample/vec3.hpp"

namespace adasample {

// Scalar field on a Cartesian grid. Voxel (i,j,k) sits at world position
// (i sx, j sy, k sz); data is x-fastest.
class VolumeGrid {
 public:
  VolumeGrid() = default;
  VolumeGrid(std::array<int, 3> dims, std::array<float, 3> spacing, std::vector<float> data);

  const std::array<int, 3>& dims() const { return dims_; }
  const std::array<float, 3>& spacing() const { return spacing_; }
  const std::vector<float>& data() const { return data_; }
  float min_value() const { return min_; }
  float max_value() const { return max_; }
  std::size_t voxel_count() const { return data_.size(); }

  float at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(k) * dims_[1] + j) * dims_[0] + i];
  }

  // World-space corner opposite the origin: ((nx-1) sx, ...).
  Vec3 extent() const;
  Vec3 center() const { return extent() * 0.5; }
  double min_spacing() const;

 private:
  std::array<int, 3> dims_{0, 0, 0};
  std::array<float, 3> spacing_{1.0f, 1.0f, 1.0f};
  std::vector<float> data_;
  float min_ = 0.0f, max_ = 0.0f;
};

enum class Interpolation { Trilinear, Tricubic };

Interpolation parse_interpolation(const std::string& name);

// Interpolated density; 0 outside the grid box. Tricubic uses the
// Catmull-Rom basis with replicated borders.
float sample(const VolumeGrid& volume, const Vec3& p, Interpolation kind = Interpolation::Trilinear);

// Central differences of sample() with half-voxel offsets per axis,
// one-sided within half a voxel of a face; 0 outside the box.
Vec3 gradient(const VolumeGrid& volume, const Vec3& p, Interpolation kind = Interpolation::Trilinear);

enum class SyntheticKind { Sphere, Torus, Metaballs, ValueNoise };

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

// Deterministic densities in [0,1] on a unit-spacing grid; dims >= 8.
// Sphere and torus map signed distance d to clamp(0.5 - d / (2 b), 0, 1)
// with b the radius (tube radius for the torus), so the 0.5 level set is
// the surface. Metaballs sum `blobs` Gaussians (0 picks 3 to 6 from the
// seed). Value noise blends four octaves of seeded lattice noise.
VolumeGrid make_synthetic(SyntheticKind kind, std::array<int, 3> dims, std::uint64_t seed, int blobs = 0);

struct SphereSpec {
  Vec3 center;
  double radius = 0.0;
};
// Geometry of make_synthetic(Sphere, dims, ...): the 0.5 level set.
SphereSpec synthetic_sphere_geometry(std::array<int, 3> dims);

enum class RawType { U8, U16, F32 };

struct RawMeta {
  std::array<int, 3> dims{0, 0, 0};
  RawType type = RawType::F32;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
};

RawType parse_raw_type(const std::string& name);
std::string to_string(RawType type);

// Sidecar text: lines "dims: nx ny nz", "dtype: u8|u16|f32",
// "spacing: sx sy sz".
RawMeta read_raw_meta(const std::string& meta_path);
void write_raw_meta(const std::string& meta_path, const RawMeta& meta);
inline std::string meta_path_for(const std::string& raw_path) { return raw_path + ".meta"; }

// Little-endian packed voxels. Integer types are scaled to [0,1].
VolumeGrid load_raw(const std::string& path, const RawMeta& meta);
VolumeGrid load_raw(const std::string& path);  // reads meta_path_for(path)
// Integer types quantize clamp(v,0,1). Also writes the sidecar.
void save_raw(const std::string& path, const VolumeGrid& volume, RawType type = RawType::F32);

}  // namespace adasample
