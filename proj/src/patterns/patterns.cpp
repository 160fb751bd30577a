#include "adasample/patterns.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <stdexcept>

#include "adasample/random.hpp"

namespace adasample {

PatternKind parse_pattern_kind(const std::string& name) {
  if (name == "random") return PatternKind::Random;
  if (name == "regular") return PatternKind::Regular;
  if (name == "halton") return PatternKind::Halton;
  if (name == "plastic") return PatternKind::Plastic;
  throw std::invalid_argument("unknown sampling pattern '" + name + "'");
}

std::string to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::Random: return "random";
    case PatternKind::Regular: return "regular";
    case PatternKind::Halton: return "halton";
    case PatternKind::Plastic: return "plastic";
  }
  return "unknown";
}

SamplePattern::SamplePattern(int height, int width, std::vector<int> ranks)
    : height_(height), width_(width), ranks_(std::move(ranks)) {
  if (height < 1 || width < 1) throw ShapeError("SamplePattern: height and width must be >= 1");
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (ranks_.size() != n) throw ShapeError("SamplePattern: rank count does not match H*W");
  thresholds_.resize(n);
  for (std::size_t i = 0; i < n; ++i) thresholds_[i] = static_cast<float>(ranks_[i] / static_cast<double>(n));
}

NdArray SamplePattern::as_array() const { return NdArray({1, height_, width_}, thresholds_); }

SamplePattern SamplePattern::shifted(int dy, int dx) const {
  std::vector<int> out(ranks_.size());
  dy = ((dy % height_) + height_) % height_;
  dx = ((dx % width_) + width_) % width_;
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const int sy = (y + dy) % height_, sx = (x + dx) % width_;
      out[static_cast<std::size_t>(y) * width_ + x] = ranks_[static_cast<std::size_t>(sy) * width_ + sx];
    }
  }
  return SamplePattern(height_, width_, std::move(out));
}

bool is_permutation_field(const SamplePattern& pattern) {
  std::vector<int> sorted = pattern.ranks();
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] != static_cast<int>(i)) return false;
  }
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (pattern.thresholds()[i] != static_cast<float>(pattern.ranks()[i] / static_cast<double>(sorted.size())))
      return false;
  }
  return true;
}

SamplePattern pattern_random(int height, int width, std::uint64_t seed) {
  const int n = height * width;
  std::vector<int> ranks(n);
  std::iota(ranks.begin(), ranks.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(ranks[i], ranks[j]);
  }
  return SamplePattern(height, width, std::move(ranks));
}

namespace {

// Keeps the relative order of ranks inside a crop and renumbers them 0..n-1.
std::vector<int> rerank(const std::vector<int>& ranks) {
  std::vector<int> order(ranks.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return ranks[a] < ranks[b]; });
  std::vector<int> out(ranks.size());
  for (std::size_t r = 0; r < order.size(); ++r) out[order[r]] = static_cast<int>(r);
  return out;
}

}  // namespace

SamplePattern pattern_regular(int height, int width) {
  if (height < 1 || width < 1) throw ShapeError("pattern_regular: height and width must be >= 1");
  int size = 1;
  while (size < std::max(height, width)) size *= 2;

  std::vector<int> full(static_cast<std::size_t>(size) * size, -1);
  struct Cell {
    int y, x, extent;
  };
  std::deque<Cell> queue{{0, 0, size}};
  int next = 0;
  full[0] = next++;
  while (!queue.empty()) {
    const Cell cell = queue.front();
    queue.pop_front();
    if (cell.extent == 1) continue;
    const int half = cell.extent / 2;
    const Cell children[4] = {{cell.y, cell.x, half},
                              {cell.y, cell.x + half, half},
                              {cell.y + half, cell.x, half},
                              {cell.y + half, cell.x + half, half}};
    for (const Cell& c : children) {
      int& r = full[static_cast<std::size_t>(c.y) * size + c.x];
      if (r < 0) r = next++;
      queue.push_back(c);
    }
  }

  std::vector<int> cropped(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      cropped[static_cast<std::size_t>(y) * width + x] = full[static_cast<std::size_t>(y) * size + x];
    }
  }
  return SamplePattern(height, width, rerank(cropped));
}

double radical_inverse(std::uint64_t n, int base) {
  double result = 0.0;
  double inv = 1.0 / base;
  double f = inv;
  while (n > 0) {
    result += static_cast<double>(n % base) * f;
    n /= base;
    f *= inv;
  }
  return result;
}

double plastic_number() {
  double x = 1.3;
  for (int i = 0; i < 64; ++i) {
    const double fx = x * x * x - x - 1.0;
    const double step = fx / (3.0 * x * x - 1.0);
    x -= step;
    if (std::abs(step) < 1e-16) break;
  }
  return x;
}

std::vector<int> rank_by_sequence(int height, int width,
                                  const std::function<std::pair<double, double>(std::uint64_t)>& point_at) {
  if (height < 1 || width < 1) throw ShapeError("rank_by_sequence: height and width must be >= 1");
  const std::size_t total = static_cast<std::size_t>(height) * width;
  std::vector<int> ranks(total, -1);
  auto free_at = [&](int y, int x) {
    return y >= 0 && y < height && x >= 0 && x < width && ranks[static_cast<std::size_t>(y) * width + x] < 0;
  };
  const int max_radius = std::max(height, width);
  for (std::size_t n = 0; n < total; ++n) {
    const auto [px, py] = point_at(n);
    const int x0 = std::clamp(static_cast<int>(std::floor(px * width)), 0, width - 1);
    const int y0 = std::clamp(static_cast<int>(std::floor(py * height)), 0, height - 1);
    int hy = -1, hx = -1;
    for (int r = 0; r <= max_radius && hy < 0; ++r) {
      for (int dy = -r; dy <= r && hy < 0; ++dy) {
        const int y = y0 + dy;
        if (y < 0 || y >= height) continue;
        if (dy == -r || dy == r) {
          for (int dx = -r; dx <= r; ++dx) {
            if (free_at(y, x0 + dx)) {
              hy = y;
              hx = x0 + dx;
              break;
            }
          }
        } else if (free_at(y, x0 - r)) {
          hy = y;
          hx = x0 - r;
        } else if (free_at(y, x0 + r)) {
          hy = y;
          hx = x0 + r;
        }
      }
    }
    ranks[static_cast<std::size_t>(hy) * width + hx] = static_cast<int>(n);
  }
  return ranks;
}

SamplePattern pattern_halton(int height, int width) {
  auto ranks = rank_by_sequence(height, width, [](std::uint64_t n) {
    return std::pair{radical_inverse(n, 2), radical_inverse(n, 3)};
  });
  return SamplePattern(height, width, std::move(ranks));
}

SamplePattern pattern_plastic(int height, int width) {
  const double rho = plastic_number();
  const double a1 = 1.0 / rho, a2 = 1.0 / (rho * rho);
  auto ranks = rank_by_sequence(height, width, [a1, a2](std::uint64_t n) {
    const double fx = static_cast<double>(n) * a1;
    const double fy = static_cast<double>(n) * a2;
    return std::pair{fx - std::floor(fx), fy - std::floor(fy)};
  });
  return SamplePattern(height, width, std::move(ranks));
}

SamplePattern make_pattern(PatternKind kind, int height, int width, std::uint64_t seed) {
  switch (kind) {
    case PatternKind::Random: return pattern_random(height, width, seed);
    case PatternKind::Regular: return pattern_regular(height, width);
    case PatternKind::Halton: return pattern_halton(height, width);
    case PatternKind::Plastic: return pattern_plastic(height, width);
  }
  throw std::invalid_argument("unknown pattern kind");
}

}  // namespace adasample
