#include "adasample/nets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "adasample/ops.hpp"
#include "adasample/pullpush.hpp"

namespace adasample {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

void NetConfig::validate(const char* what) const {
  if (blocks < 1) throw std::invalid_argument(std::string(what) + ": residual blocks must be >= 1");
  if (channels < 4) throw std::invalid_argument(std::string(what) + ": channels must be >= 4");
}

NdArray importance_constant(int height, int width) { return NdArray({1, height, width}, 1.0f); }

NdArray gradient_magnitude(const NdArray& low_res, const std::vector<float>& weights) {
  require_rank(low_res, 3, "gradient_magnitude");
  const int c = low_res.dim(0), h = low_res.dim(1), w = low_res.dim(2);
  if (!weights.empty() && static_cast<int>(weights.size()) != c) {
    throw ShapeError("gradient_magnitude: " + std::to_string(weights.size()) + " weights for dimension 0 of size " +
                     std::to_string(c));
  }
  for (float v : weights) {
    if (!(v >= 0.0f)) throw std::invalid_argument("gradient_magnitude: weights must be nonnegative");
  }
  NdArray out({1, h, w});
  auto diff = [](const float* p, int i, int n, int stride) -> double {
    if (n == 1) return 0.0;
    if (i == 0) return p[stride] - p[0];
    if (i == n - 1) return p[0] - p[-stride];
    return 0.5 * (p[stride] - p[-stride]);
  };
  for (int ch = 0; ch < c; ++ch) {
    const double wc = weights.empty() ? 1.0 : weights[ch];
    if (wc == 0.0) continue;
    const float* src = low_res.channel(ch);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float* p = src + static_cast<std::size_t>(y) * w + x;
        const double gx = diff(p, x, w, 1), gy = diff(p, y, h, w);
        out.at(0, y, x) += static_cast<float>(wc * (gx * gx + gy * gy));
      }
    }
  }
  return out;
}

NdArray importance_gradient(const NdArray& low_res, const std::vector<float>& weights) {
  NdArray g = gradient_magnitude(low_res, weights);
  for (int i = 0; i < 3; ++i) g = kernels::upsample2x(g);
  return g;
}

std::vector<Var> bind_parameters(Tape& tape, const std::vector<Parameter>& params, bool requires_grad) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (const Parameter& p : params) out.push_back(tape.leaf(p.value, requires_grad));
  return out;
}

std::vector<NdArray> collect_gradients(const std::vector<Var>& bound) {
  std::vector<NdArray> out;
  out.reserve(bound.size());
  for (const Var& v : bound) out.push_back(v.grad().empty() ? NdArray::zeros_like(v.value()) : v.grad());
  return out;
}

namespace {

void add_conv(std::vector<Parameter>& params, const std::string& name, int cin, int cout, std::uint64_t seed) {
  NdArray w({cout, cin, 3, 3});
  NdArray b({cout});
  init_uniform_fan_in(w, cin * 9, seed ^ (0x51ed270b27ab3c4dULL * (params.size() + 1)));
  init_uniform_fan_in(b, cin * 9, seed ^ (0x2545f4914f6cdd1dULL * (params.size() + 2)));
  params.push_back({name + ".weight", std::move(w)});
  params.push_back({name + ".bias", std::move(b)});
}

// Walks bound parameters two at a time.
struct ConvCursor {
  const std::vector<Var>& bound;
  std::size_t next = 0;

  Var conv(const Var& x) {
    if (next + 2 > bound.size()) throw ShapeError("network: too few bound parameters");
    const Var out = conv3x3(x, bound[next], bound[next + 1]);
    next += 2;
    return out;
  }
};

Var residual_blocks(ConvCursor& cur, Var x, int blocks) {
  for (int b = 0; b < blocks; ++b) {
    const Var h = cur.conv(relu(cur.conv(x)));
    x = add(x, h);
  }
  return x;
}

void check_bound(const std::vector<Var>& bound, const std::vector<Parameter>& params, const char* what) {
  if (bound.size() != params.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(bound.size()) + " bound parameters, expected " +
                     std::to_string(params.size()));
  }
}

}  // namespace

ImportanceNet::ImportanceNet(int in_channels, NetConfig config, std::uint64_t seed, bool use_baseline)
    : in_channels_(in_channels), config_(config), use_baseline_(use_baseline) {
  config_.validate("ImportanceNet");
  if (in_channels < 1) throw std::invalid_argument("ImportanceNet: input channels must be >= 1");
  const int ch = config_.channels;
  add_conv(params_, "conv_in", in_channels, ch, seed);
  for (int b = 0; b < config_.blocks; ++b) {
    add_conv(params_, "block" + std::to_string(b) + ".conv1", ch, ch, seed);
    add_conv(params_, "block" + std::to_string(b) + ".conv2", ch, ch, seed);
  }
  add_conv(params_, "up1", ch, ch, seed);
  add_conv(params_, "up2", ch, ch, seed);
  add_conv(params_, "head1", ch, ch, seed);
  add_conv(params_, "head_out", ch, 1, seed);
}

Var ImportanceNet::forward(const std::vector<Var>& bound, const Var& low_res) const {
  check_bound(bound, params_, "ImportanceNet");
  const auto& shape = low_res.value().shape();
  if (shape.size() != 3 || shape[0] != in_channels_) {
    throw ShapeError("ImportanceNet: input " + shape_string(shape) + ", expected dimension 0 of size " +
                     std::to_string(in_channels_));
  }
  ConvCursor cur{bound};
  Var x = relu(cur.conv(low_res));
  x = residual_blocks(cur, x, config_.blocks);
  x = relu(cur.conv(upsample2x(x)));
  x = relu(cur.conv(upsample2x(x)));
  x = relu(cur.conv(x));
  x = cur.conv(x);
  if (use_baseline_) {
    NdArray base = gradient_magnitude(low_res.value());
    base = kernels::upsample2x(kernels::upsample2x(base));
    x = add(x, low_res.tape()->leaf(std::move(base)));
  }
  return softplus(upsample2x(x));
}

NdArray ImportanceNet::infer(const NdArray& low_res) const {
  Tape tape;
  const auto bound = bind_parameters(tape, params_, false);
  return forward(bound, tape.leaf(low_res)).value();
}

ReconNet::ReconNet(int channels, NetConfig config, std::uint64_t seed, bool global_residual, ReconInput input)
    : image_channels_(channels), config_(config), global_residual_(global_residual), input_(input) {
  config_.validate("ReconNet");
  if (channels < 1) throw std::invalid_argument("ReconNet: image channels must be >= 1");
  const int ch = config_.channels;
  add_conv(params_, "conv_in", channels + 1, ch, seed);
  for (int b = 0; b < config_.blocks; ++b) {
    add_conv(params_, "block" + std::to_string(b) + ".conv1", ch, ch, seed);
    add_conv(params_, "block" + std::to_string(b) + ".conv2", ch, ch, seed);
  }
  add_conv(params_, "tail", ch, ch, seed);
  add_conv(params_, "conv_out", ch, channels, seed);
}

Var ReconNet::forward(const std::vector<Var>& bound, const Var& mask, const Var& samples) const {
  check_bound(bound, params_, "ReconNet");
  const auto& s = samples.value().shape();
  if (s.size() != 3 || s[0] != image_channels_) {
    throw ShapeError("ReconNet: samples " + shape_string(s) + ", expected dimension 0 of size " +
                     std::to_string(image_channels_));
  }
  Var base;
  if (input_ == ReconInput::Inpainted) {
    base = pullpush(mask, samples).data;
  } else {
    base = mul(samples, concat_channels(std::vector<Var>(image_channels_, mask)));
  }
  ConvCursor cur{bound};
  Var x = relu(cur.conv(concat_channels({base, mask})));
  x = residual_blocks(cur, x, config_.blocks);
  x = relu(cur.conv(x));
  x = cur.conv(x);
  return global_residual_ ? add(x, base) : x;
}

NdArray ReconNet::infer(const NdArray& mask, const NdArray& samples) const {
  Tape tape;
  const auto bound = bind_parameters(tape, params_, false);
  return forward(bound, tape.leaf(mask), tape.leaf(samples)).value();
}

namespace {

void clamp_channel(NdArray& a, int c) {
  float* p = a.channel(c);
  const std::size_t n = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  for (std::size_t i = 0; i < n; ++i) p[i] = std::clamp(p[i], 0.0f, 1.0f);
}

}  // namespace

NdArray postprocess_iso(const NdArray& out) {
  require_rank(out, 3, "postprocess_iso");
  if (out.dim(0) != 5) throw ShapeError("postprocess_iso: dimension 0 must be 5, got " + std::to_string(out.dim(0)));
  NdArray r = out;
  clamp_channel(r, 0);
  clamp_channel(r, 4);
  const std::size_t n = static_cast<std::size_t>(r.dim(1)) * r.dim(2);
  for (std::size_t i = 0; i < n; ++i) {
    double len = 0.0;
    for (int c = 1; c < 4; ++c) len += static_cast<double>(r[c * n + i]) * r[c * n + i];
    len = std::sqrt(len);
    if (len < 1e-6) continue;
    for (int c = 1; c < 4; ++c) r[c * n + i] = static_cast<float>(r[c * n + i] / len);
  }
  return r;
}

NdArray postprocess_dvr(const NdArray& out) {
  require_rank(out, 3, "postprocess_dvr");
  if (out.dim(0) < 5) throw ShapeError("postprocess_dvr: dimension 0 must be >= 5, got " + std::to_string(out.dim(0)));
  NdArray r = out;
  for (int c = 0; c < 5; ++c) clamp_channel(r, c);
  return r;
}

const std::string& Checkpoint::get(const std::string& key) const {
  const auto it = header.find(key);
  if (it == header.end()) throw IoError("checkpoint has no '" + key + "' entry");
  return it->second;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "ADSCKPT 1\n";
  for (const auto& [k, v] : checkpoint.header) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos || k == "param" || k == "end") {
      throw std::invalid_argument("checkpoint: bad header entry '" + k + "'");
    }
    out << k << ' ' << v << '\n';
  }
  for (const Parameter& p : checkpoint.params) {
    out << "param " << p.name;
    for (int d : p.value.shape()) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  for (const Parameter& p : checkpoint.params) {
    out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 4));
  }
  if (!out) throw IoError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != "ADSCKPT 1") throw IoError(path + ": not a checkpoint");
  Checkpoint ck;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "param") {
      Parameter p;
      std::vector<int> shape;
      ls >> p.name;
      for (int d; ls >> d;) shape.push_back(d);
      if (p.name.empty() || shape.empty()) throw IoError(path + ": malformed param line");
      for (int d : shape) {
        if (d < 1) throw IoError(path + ": bad shape for " + p.name);
      }
      p.value = NdArray(shape);
      ck.params.push_back(std::move(p));
    } else if (!key.empty()) {
      std::string rest;
      std::getline(ls >> std::ws, rest);
      ck.header[key] = rest;
    }
  }
  if (!ended) throw IoError(path + ": missing end of header");
  for (Parameter& p : ck.params) {
    in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(p.value.size() * 4)) throw IoError(path + ": truncated payload");
  }
  return ck;
}

void assign_parameters(std::vector<Parameter>& dst, const std::vector<Parameter>& src) {
  for (Parameter& d : dst) {
    const Parameter* match = nullptr;
    for (const Parameter& s : src) {
      if (s.name == d.name) match = &s;
    }
    if (!match) throw IoError("checkpoint lacks parameter " + d.name);
    if (match->value.shape() != d.value.shape()) {
      throw IoError("parameter " + d.name + " has shape " + shape_string(match->value.shape()) + ", expected " +
                    shape_string(d.value.shape()));
    }
    d.value = match->value;
  }
}

}  // namespace adasample
