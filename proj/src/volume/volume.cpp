#include "adasample/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "adasample/random.hpp"

namespace adasample {

static_assert(std::endian::native == std::endian::little, "raw volume I/O assumes a little-endian host");

VolumeGrid::VolumeGrid(std::array<int, 3> dims, std::array<float, 3> spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  for (int a = 0; a < 3; ++a) {
    if (dims_[a] < 1) throw ShapeError("VolumeGrid: dimension " + std::to_string(a) + " must be >= 1");
    if (!(spacing_[a] > 0.0f)) throw std::invalid_argument("VolumeGrid: spacing must be positive");
  }
  const std::size_t n = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  if (data_.size() != n) {
    throw ShapeError("VolumeGrid: " + std::to_string(data_.size()) + " values for " + std::to_string(n) + " voxels");
  }
  min_ = std::numeric_limits<float>::infinity();
  max_ = -std::numeric_limits<float>::infinity();
  for (float v : data_) {
    if (!std::isfinite(v)) throw NumericError("VolumeGrid: non-finite density");
    min_ = std::min(min_, v);
    max_ = std::max(max_, v);
  }
}

Vec3 VolumeGrid::extent() const {
  return {(dims_[0] - 1) * static_cast<double>(spacing_[0]), (dims_[1] - 1) * static_cast<double>(spacing_[1]),
          (dims_[2] - 1) * static_cast<double>(spacing_[2])};
}

double VolumeGrid::min_spacing() const { return std::min({spacing_[0], spacing_[1], spacing_[2]}); }

Interpolation parse_interpolation(const std::string& name) {
  if (name == "trilinear") return Interpolation::Trilinear;
  if (name == "tricubic") return Interpolation::Tricubic;
  throw std::invalid_argument("unknown interpolation '" + name + "'");
}

namespace {

// Voxel-space coordinate, or false when outside [0, n-1] on some axis.
bool to_voxel(const VolumeGrid& v, const Vec3& p, double u[3]) {
  for (int a = 0; a < 3; ++a) {
    u[a] = p[a] / v.spacing()[a];
    if (!(u[a] >= 0.0 && u[a] <= v.dims()[a] - 1)) return false;
  }
  return true;
}

float trilinear(const VolumeGrid& v, const double u[3]) {
  int i0[3], i1[3];
  double f[3];
  for (int a = 0; a < 3; ++a) {
    const int n = v.dims()[a];
    i0[a] = std::min(static_cast<int>(u[a]), std::max(n - 2, 0));
    i1[a] = std::min(i0[a] + 1, n - 1);
    f[a] = u[a] - i0[a];
  }
  const double c00 = v.at(i0[0], i0[1], i0[2]) * (1 - f[0]) + v.at(i1[0], i0[1], i0[2]) * f[0];
  const double c10 = v.at(i0[0], i1[1], i0[2]) * (1 - f[0]) + v.at(i1[0], i1[1], i0[2]) * f[0];
  const double c01 = v.at(i0[0], i0[1], i1[2]) * (1 - f[0]) + v.at(i1[0], i0[1], i1[2]) * f[0];
  const double c11 = v.at(i0[0], i1[1], i1[2]) * (1 - f[0]) + v.at(i1[0], i1[1], i1[2]) * f[0];
  const double c0 = c00 * (1 - f[1]) + c10 * f[1];
  const double c1 = c01 * (1 - f[1]) + c11 * f[1];
  return static_cast<float>(c0 * (1 - f[2]) + c1 * f[2]);
}

void catmull_rom_weights(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = 0.5 * (-t3 + 2 * t2 - t);
  w[1] = 0.5 * (3 * t3 - 5 * t2 + 2);
  w[2] = 0.5 * (-3 * t3 + 4 * t2 + t);
  w[3] = 0.5 * (t3 - t2);
}

float tricubic(const VolumeGrid& v, const double u[3]) {
  int idx[3][4];
  double w[3][4];
  for (int a = 0; a < 3; ++a) {
    const int n = v.dims()[a];
    const int base = std::min(static_cast<int>(u[a]), std::max(n - 2, 0));
    catmull_rom_weights(u[a] - base, w[a]);
    for (int q = 0; q < 4; ++q) idx[a][q] = std::clamp(base - 1 + q, 0, n - 1);
  }
  double acc = 0.0;
  for (int c = 0; c < 4; ++c) {
    double plane = 0.0;
    for (int b = 0; b < 4; ++b) {
      double row = 0.0;
      for (int a = 0; a < 4; ++a) row += w[0][a] * v.at(idx[0][a], idx[1][b], idx[2][c]);
      plane += w[1][b] * row;
    }
    acc += w[2][c] * plane;
  }
  return static_cast<float>(acc);
}

}  // namespace

float sample(const VolumeGrid& volume, const Vec3& p, Interpolation kind) {
  double u[3];
  if (!to_voxel(volume, p, u)) return 0.0f;
  return kind == Interpolation::Trilinear ? trilinear(volume, u) : tricubic(volume, u);
}

Vec3 gradient(const VolumeGrid& volume, const Vec3& p, Interpolation kind) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    const double h = 0.5 * volume.spacing()[a];
    const double top = (volume.dims()[a] - 1) * static_cast<double>(volume.spacing()[a]);
    Vec3 lo = p, hi = p;
    // one-sided near the faces
    lo[a] = std::max(0.0, p[a] - h);
    hi[a] = std::min(top, p[a] + h);
    if (hi[a] - lo[a] <= 0.0 || p[a] < 0.0 || p[a] > top) {
      g[a] = 0.0;
      continue;
    }
    g[a] = (static_cast<double>(sample(volume, hi, kind)) - sample(volume, lo, kind)) / (hi[a] - lo[a]);
  }
  return g;
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "sphere") return SyntheticKind::Sphere;
  if (name == "torus") return SyntheticKind::Torus;
  if (name == "metaballs") return SyntheticKind::Metaballs;
  if (name == "value-noise" || name == "noise") return SyntheticKind::ValueNoise;
  throw std::invalid_argument("unknown synthetic volume '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::Sphere: return "sphere";
    case SyntheticKind::Torus: return "torus";
    case SyntheticKind::Metaballs: return "metaballs";
    case SyntheticKind::ValueNoise: return "value-noise";
  }
  return "unknown";
}

SphereSpec synthetic_sphere_geometry(std::array<int, 3> dims) {
  const Vec3 ext{dims[0] - 1.0, dims[1] - 1.0, dims[2] - 1.0};
  return {ext * 0.5, 0.3 * std::min({ext.x, ext.y, ext.z})};
}

namespace {

template <typename Fn>
std::vector<float> fill_grid(std::array<int, 3> dims, Fn&& fn) {
  std::vector<float> data(static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]);
  std::size_t o = 0;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) data[o++] = static_cast<float>(fn(Vec3{double(i), double(j), double(k)}));
    }
  }
  return data;
}

double band(double signed_distance, double width) { return std::clamp(0.5 - signed_distance / (2.0 * width), 0.0, 1.0); }

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

VolumeGrid make_synthetic(SyntheticKind kind, std::array<int, 3> dims, std::uint64_t seed, int blobs) {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 8) throw std::invalid_argument("make_synthetic: every dimension must be >= 8");
  }
  const Vec3 ext{dims[0] - 1.0, dims[1] - 1.0, dims[2] - 1.0};
  const Vec3 c = ext * 0.5;
  const double m = std::min({ext.x, ext.y, ext.z});
  Rng rng(seed);
  std::vector<float> data;

  switch (kind) {
    case SyntheticKind::Sphere: {
      const SphereSpec s = synthetic_sphere_geometry(dims);
      data = fill_grid(dims, [&](const Vec3& p) { return band(length(p - s.center) - s.radius, s.radius); });
      break;
    }
    case SyntheticKind::Torus: {
      const double major = 0.28 * m, minor = 0.11 * m;
      data = fill_grid(dims, [&](const Vec3& p) {
        const Vec3 q = p - c;
        const double ring = std::sqrt(q.x * q.x + q.y * q.y) - major;
        return band(std::sqrt(ring * ring + q.z * q.z) - minor, minor);
      });
      break;
    }
    case SyntheticKind::Metaballs: {
      const int k = blobs > 0 ? blobs : rng.range(3, 6);
      struct Blob {
        Vec3 center;
        double sigma;
      };
      std::vector<Blob> balls;
      for (int b = 0; b < k; ++b) {
        Blob bl;
        for (int a = 0; a < 3; ++a) bl.center[a] = rng.uniform(0.3, 0.7) * ext[a];
        bl.sigma = rng.uniform(0.07, 0.13) * m;
        balls.push_back(bl);
      }
      data = fill_grid(dims, [&](const Vec3& p) {
        double s = 0.0;
        for (const Blob& bl : balls) {
          const Vec3 d = p - bl.center;
          s += std::exp(-dot(d, d) / (2.0 * bl.sigma * bl.sigma));
        }
        return std::min(1.0, s);
      });
      break;
    }
    case SyntheticKind::ValueNoise: {
      constexpr int kOctaves = 4;
      constexpr int kBase = 3;
      std::vector<std::vector<float>> lattices;
      for (int o = 0; o < kOctaves; ++o) {
        const int n = (kBase << o) + 1;
        std::vector<float> lat(static_cast<std::size_t>(n) * n * n);
        for (float& v : lat) v = static_cast<float>(rng.uniform());
        lattices.push_back(std::move(lat));
      }
      data = fill_grid(dims, [&](const Vec3& p) {
        double total = 0.0, amp = 1.0;
        for (int o = 0; o < kOctaves; ++o) {
          const int cells = kBase << o, n = cells + 1;
          int i0[3];
          double f[3];
          for (int a = 0; a < 3; ++a) {
            const double u = p[a] / ext[a] * cells;
            i0[a] = std::min(static_cast<int>(u), cells - 1);
            f[a] = smooth(u - i0[a]);
          }
          const auto& lat = lattices[o];
          auto L = [&](int i, int j, int k2) { return lat[(static_cast<std::size_t>(k2) * n + j) * n + i]; };
          double v = 0.0;
          for (int dz = 0; dz < 2; ++dz) {
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
                v += w * L(i0[0] + dx, i0[1] + dy, i0[2] + dz);
              }
            }
          }
          total += amp * v;
          amp *= 0.5;
        }
        return total;
      });
      const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
      const float a = *lo, span = std::max(*hi - *lo, 1e-12f);
      for (float& v : data) v = (v - a) / span;
      break;
    }
  }
  return VolumeGrid(dims, {1.0f, 1.0f, 1.0f}, std::move(data));
}

RawType parse_raw_type(const std::string& name) {
  if (name == "u8") return RawType::U8;
  if (name == "u16") return RawType::U16;
  if (name == "f32") return RawType::F32;
  throw std::invalid_argument("unknown raw dtype '" + name + "'");
}

std::string to_string(RawType type) {
  switch (type) {
    case RawType::U8: return "u8";
    case RawType::U16: return "u16";
    case RawType::F32: return "f32";
  }
  return "unknown";
}

RawMeta read_raw_meta(const std::string& meta_path) {
  std::ifstream in(meta_path);
  if (!in) throw IoError("cannot open volume metadata " + meta_path);
  RawMeta meta;
  bool have_dims = false, have_type = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto colon = line.find(':');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (colon == std::string::npos) throw IoError(meta_path + ": malformed line '" + line + "'");
    const std::string key = line.substr(0, colon);
    std::istringstream vals(line.substr(colon + 1));
    if (key == "dims") {
      vals >> meta.dims[0] >> meta.dims[1] >> meta.dims[2];
      have_dims = static_cast<bool>(vals);
    } else if (key == "dtype") {
      std::string t;
      vals >> t;
      try {
        meta.type = parse_raw_type(t);
      } catch (const std::invalid_argument& e) {
        throw IoError(meta_path + ": " + e.what());
      }
      have_type = true;
    } else if (key == "spacing") {
      vals >> meta.spacing[0] >> meta.spacing[1] >> meta.spacing[2];
      if (!vals) throw IoError(meta_path + ": malformed spacing");
    } else {
      throw IoError(meta_path + ": unknown key '" + key + "'");
    }
  }
  if (!have_dims || !have_type) throw IoError(meta_path + ": dims and dtype are required");
  return meta;
}

void write_raw_meta(const std::string& meta_path, const RawMeta& meta) {
  std::ofstream out(meta_path);
  if (!out) throw IoError("cannot write " + meta_path);
  out.precision(9);
  out << "dims: " << meta.dims[0] << ' ' << meta.dims[1] << ' ' << meta.dims[2] << '\n'
      << "dtype: " << to_string(meta.type) << '\n'
      << "spacing: " << meta.spacing[0] << ' ' << meta.spacing[1] << ' ' << meta.spacing[2] << '\n';
  if (!out) throw IoError("cannot write " + meta_path);
}

VolumeGrid load_raw(const std::string& path, const RawMeta& meta) {
  const std::size_t n = static_cast<std::size_t>(meta.dims[0]) * meta.dims[1] * meta.dims[2];
  const std::size_t elem = meta.type == RawType::U8 ? 1 : (meta.type == RawType::U16 ? 2 : 4);
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open volume " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != n * elem) {
    throw IoError(path + ": file has " + std::to_string(bytes) + " bytes, metadata implies " +
                  std::to_string(n * elem));
  }
  in.seekg(0);
  std::vector<char> raw(bytes);
  in.read(raw.data(), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("short read from " + path);
  std::vector<float> data(n);
  switch (meta.type) {
    case RawType::U8:
      for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<unsigned char>(raw[i]) / 255.0f;
      break;
    case RawType::U16:
      for (std::size_t i = 0; i < n; ++i) {
        std::uint16_t v;
        std::memcpy(&v, raw.data() + 2 * i, 2);
        data[i] = v / 65535.0f;
      }
      break;
    case RawType::F32: std::memcpy(data.data(), raw.data(), bytes); break;
  }
  return VolumeGrid(meta.dims, meta.spacing, std::move(data));
}

VolumeGrid load_raw(const std::string& path) { return load_raw(path, read_raw_meta(meta_path_for(path))); }

void save_raw(const std::string& path, const VolumeGrid& volume, RawType type) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const auto& d = volume.data();
  switch (type) {
    case RawType::U8:
      for (float v : d) {
        const auto q = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        out.put(static_cast<char>(q));
      }
      break;
    case RawType::U16:
      for (float v : d) {
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
        out.write(reinterpret_cast<const char*>(&q), 2);
      }
      break;
    case RawType::F32:
      out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
      break;
  }
  if (!out) throw IoError("cannot write " + path);
  write_raw_meta(meta_path_for(path), {volume.dims(), type, volume.spacing()});
}

}  // namespace adasample
