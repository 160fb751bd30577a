#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "adasample/render.hpp"

namespace adasample {

void TransferFunction::validate() const {
  if (points.empty()) throw std::invalid_argument("transfer function has no control points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const TfPoint& p = points[i];
    for (float v : {p.density, p.r, p.g, p.b, p.opacity}) {
      if (!std::isfinite(v)) throw NumericError("transfer function point " + std::to_string(i) + " is not finite");
    }
    if (p.opacity < 0.0f || p.opacity > 1.0f) {
      throw std::invalid_argument("transfer function point " + std::to_string(i) + ": opacity outside [0,1]");
    }
    if (p.density < 0.0f || p.density > 1.0f) {
      throw std::invalid_argument("transfer function point " + std::to_string(i) + ": density outside [0,1]");
    }
    if (i > 0 && p.density <= points[i - 1].density) {
      throw std::invalid_argument("transfer function point " + std::to_string(i) +
                                  ": densities must be strictly increasing");
    }
  }
}

std::array<float, 4> TransferFunction::operator()(float density) const {
  if (points.empty()) return {0, 0, 0, 0};
  auto pack = [](const TfPoint& p) { return std::array<float, 4>{p.r, p.g, p.b, p.opacity}; };
  if (density <= points.front().density) return pack(points.front());
  if (density >= points.back().density) return pack(points.back());
  auto it = std::upper_bound(points.begin(), points.end(), density,
                             [](float d, const TfPoint& p) { return d < p.density; });
  const TfPoint& b = *it;
  const TfPoint& a = *(it - 1);
  const float span = b.density - a.density;
  const float t = span > 0.0f ? (density - a.density) / span : 1.0f;
  return {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b), a.opacity + t * (b.opacity - a.opacity)};
}

std::string tf_to_text(const TransferFunction& tf) {
  std::ostringstream os;
  os.precision(9);
  for (const TfPoint& p : tf.points) os << p.density << ' ' << p.r << ' ' << p.g << ' ' << p.b << ' ' << p.opacity << '\n';
  return os.str();
}

TransferFunction tf_from_text(const std::string& text) {
  TransferFunction tf;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    TfPoint p;
    std::string extra;
    if (!(ls >> p.density >> p.r >> p.g >> p.b >> p.opacity) || (ls >> extra)) {
      throw IoError("transfer function line " + std::to_string(lineno) + ": expected 'density r g b opacity'");
    }
    tf.points.push_back(p);
  }
  try {
    tf.validate();
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  return tf;
}

void write_tf(const std::string& path, const TransferFunction& tf) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << tf_to_text(tf);
  if (!out) throw IoError("failed writing " + path);
}

TransferFunction read_tf(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return tf_from_text(ss.str());
}

}  // namespace adasample
