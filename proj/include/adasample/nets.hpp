#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adasample/adam.hpp"
#include "adasample/ndarray.hpp"
#include "adasample/tape.hpp"

namespace adasample {

struct NetConfig {
  int channels = 16;
  int blocks = 3;

  void validate(const char* what) const;
};

// Importance from a constant map: ones of shape [1,height,width].
NdArray importance_constant(int height, int width);

// sum_c w_c |grad L_c|^2 with central differences (one-sided at borders),
// at the resolution of L. w may be empty (all ones).
NdArray gradient_magnitude(const NdArray& low_res, const std::vector<float>& weights = {});

// gradient_magnitude upsampled bilinearly by 8.
NdArray importance_gradient(const NdArray& low_res, const std::vector<float>& weights = {});

// Parameters bound as leaves of one tape, in declaration order.
std::vector<Var> bind_parameters(Tape& tape, const std::vector<Parameter>& params, bool requires_grad = true);
// Adjoints of bound parameters; zeros where backward never arrived.
std::vector<NdArray> collect_gradients(const std::vector<Var>& bound);

// Low-resolution image [C,h,w] -> importance [1,8h,8w]:
// conv relu, residual blocks, 2x up, conv relu, 2x up, conv relu, conv relu,
// conv 1, + 4x-upsampled gradient baseline, 2x up, softplus.
class ImportanceNet {
 public:
  ImportanceNet() = default;
  ImportanceNet(int in_channels, NetConfig config, std::uint64_t seed, bool use_baseline = true);

  int in_channels() const { return in_channels_; }
  const NetConfig& config() const { return config_; }
  bool use_baseline() const { return use_baseline_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  // bound comes from bind_parameters(tape, params()).
  Var forward(const std::vector<Var>& bound, const Var& low_res) const;
  NdArray infer(const NdArray& low_res) const;

 private:
  int in_channels_ = 0;
  NetConfig config_;
  bool use_baseline_ = true;
  std::vector<Parameter> params_;
};

enum class ReconInput { Inpainted, Raw };

// Sparse image (mask [1,H,W], data [C,H,W]) -> dense [C,H,W]:
// concat(x, mask), conv relu, residual blocks, conv relu, conv C, + x,
// where x is the pull-push fill (or mask * data). Data is not
// premultiplied; for a fractional mask pass the full-valued samples.
class ReconNet {
 public:
  ReconNet() = default;
  ReconNet(int channels, NetConfig config, std::uint64_t seed, bool global_residual = true,
           ReconInput input = ReconInput::Inpainted);

  int image_channels() const { return image_channels_; }
  const NetConfig& config() const { return config_; }
  bool global_residual() const { return global_residual_; }
  ReconInput input() const { return input_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  Var forward(const std::vector<Var>& bound, const Var& mask, const Var& samples) const;
  NdArray infer(const NdArray& mask, const NdArray& samples) const;

 private:
  int image_channels_ = 0;
  NetConfig config_;
  bool global_residual_ = true;
  ReconInput input_ = ReconInput::Inpainted;
  std::vector<Parameter> params_;
};

// Output clean-up for display and metrics: mask and depth clamped to
// [0,1], normals scaled to unit length.
NdArray postprocess_iso(const NdArray& out);
// rgba and depth clamped to [0,1].
NdArray postprocess_dvr(const NdArray& out);

// Text header "ADSCKPT 1", "key value" lines, one "param name d0 d1 ..."
// line per tensor, "end", then float32 LE values in param order.
struct Checkpoint {
  std::map<std::string, std::string> header;
  std::vector<Parameter> params;

  const std::string& get(const std::string& key) const;  // throws IoError if absent
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

// Copies values from src into dst matched by name; shapes must agree.
void assign_parameters(std::vector<Parameter>& dst, const std::vector<Parameter>& src);

}  // namespace adasample
