#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adasample/losses.hpp"
#include "adasample/nets.hpp"
#include "adasample/patterns.hpp"
#include "adasample/render.hpp"
#include "adasample/sampler.hpp"
#include "adasample/volume.hpp"

namespace adasample {

constexpr int kLowResFactor = 8;

// Synthetic toy set: two metaball and two torus volumes per split, with
// disjoint seeds for the held-out split.
enum class ToySplit { Train, HeldOut };
std::vector<VolumeGrid> toy_volumes(ToySplit split, int size = 48);

struct DatasetConfig {
  RenderMode mode = RenderMode::Iso;
  int views = 8;      // per volume
  int image = 128;    // full frame size
  int crop = 64;
  double min_coverage = 0.5;       // iso: fraction of crop pixels on the surface
  double min_coverage_dvr = 0.25;  // dvr: fraction with alpha > 0.01
  int crop_attempts = 32;
  int camera_attempts = 64;
  double distance_min = 1.3, distance_max = 2.2;  // times the bounding radius
  double fov_y = 0.8;
  IsoSettings iso;
  DvrSettings dvr;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainSample {
  int volume = 0;  // index into the volume list
  Camera camera;   // full frame with the crop window set
  RenderRequest request;
  NdArray low;     // [C,crop/8,crop/8], ray cast at low resolution
  NdArray target;  // [C,crop,crop]
};

// Throws std::runtime_error if some view finds no crop meeting the
// coverage rule.
std::vector<TrainSample> build_dataset(const std::vector<VolumeGrid>& volumes, const DatasetConfig& config);

// Channels fed to and produced by the networks.
int image_channels(RenderMode mode);

enum class ImportanceMode { Constant, Gradient, Net };
ImportanceMode parse_importance_mode(const std::string& name);
std::string to_string(ImportanceMode mode);

// Both networks plus what is needed to rebuild them.
struct Model {
  RenderMode mode = RenderMode::Iso;
  ImportanceMode importance = ImportanceMode::Net;
  std::optional<ImportanceNet> importance_net;
  std::optional<ReconNet> recon_net;

  int channels() const { return image_channels(mode); }
};

Checkpoint to_checkpoint(const Model& model, const std::map<std::string, std::string>& extra = {});
// Throws IoError on missing keys or parameter mismatches.
Model model_from_checkpoint(const Checkpoint& checkpoint);

struct TrainConfig {
  ImportanceMode importance = ImportanceMode::Net;
  bool importance_baseline = true;
  NetConfig importance_net{16, 3};
  NetConfig recon_net{16, 4};
  bool global_residual = true;
  ReconInput recon_input = ReconInput::Inpainted;
  float mu = 0.1f;
  float lower = 0.002f;
  float alpha = 50.0f;
  float lr = 1e-4f;
  bool freeze_importance = false;
  int steps = 200;
  int batch = 1;
  PatternKind pattern = PatternKind::Plastic;
  bool shift_pattern = true;
  LossWeights weights;
  bool shuffle_rgb = true;  // dvr only
  int checkpoint_every = 0;
  std::string checkpoint_path;  // intermediate files get "_step<N>" before the extension
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  Model model;
  std::vector<float> losses;  // one per step
};

// Batch mean loss and the unweighted terms of the last sample in the batch.
struct StepReport {
  float loss = 0.0f;
  std::vector<std::pair<std::string, float>> parts;
};

using StepCallback = std::function<void(int step, const StepReport& report)>;

// Joint training of both networks on smooth samples. A non-finite loss
// throws NumericError naming the step.
TrainResult train(const std::vector<TrainSample>& dataset, const TrainConfig& config,
                  const StepCallback& on_step = {});

// Mean loss over steps [begin, end), 1-based inclusive of begin.
double mean_loss(const std::vector<float>& losses, int begin, int end);

struct EvalConfig {
  ImportanceMode importance = ImportanceMode::Gradient;
  std::optional<bool> require_baseline;  // net mode: residual or not
  float mu = 0.05f;
  float lower = 0.002f;
  PatternKind pattern = PatternKind::Plastic;
  bool keep_images = false;

  void validate() const;
};

struct ViewImages {
  NdArray importance;  // [1,H,W] before normalization
  NdArray mask;        // [1,H,W] binary
  NdArray samples;     // [C,H,W] sparse ray cast
  NdArray inpainted;   // pull-push fill
  NdArray output;      // post-processed reconstruction
  NdArray target;
};

struct EvalResult {
  MetricReport report;
  std::vector<double> fractions;  // rendered pixel fraction per view
  std::vector<ViewImages> images;  // when keep_images
};

// Hard sampling, sparse ray cast of the taken pixels, reconstruction and
// scoring against each view's target. Without a recon net the pull-push
// fill is the output.
EvalResult evaluate(const Model* model, const std::vector<VolumeGrid>& volumes, const std::vector<TrainSample>& views,
                    const EvalConfig& config);

// Importance at full crop resolution for one low-res input.
NdArray compute_importance(const Model* model, ImportanceMode mode, const NdArray& low);

// Both scored on the display rgb (iso shaded, dvr over white).
double score_ssim(const NdArray& output, const NdArray& target, RenderMode mode, const Camera& camera);
double score_psnr(const NdArray& output, const NdArray& target, RenderMode mode, const Camera& camera);
NdArray postprocess(const NdArray& output, RenderMode mode);

// Display rgb [3,H,W] of an iso or dvr channel stack.
NdArray display_rgb(const NdArray& channels, RenderMode mode, const Camera& camera);

enum class GradStage { Sampler, PullPush, Conv, Ops, End2End };
GradStage parse_grad_stage(const std::string& name);
std::string to_string(GradStage stage);

struct GradCheckEntry {
  std::string input;
  double max_rel = 0.0;
  double tolerance = 0.0;
  int checked = 0;
  int skipped = 0;  // coordinates whose perturbation crossed a kink

  bool passed() const { return max_rel < tolerance; }
};

struct GradCheckReport {
  GradStage stage = GradStage::Sampler;
  std::vector<GradCheckEntry> entries;

  bool passed() const;
  double max_rel() const;
};

// Central differences against tape adjoints. size is the image extent
// (end2end needs size <= 32 and divisible by 8).
GradCheckReport gradcheck(GradStage stage, int size, std::uint64_t seed);

}  // namespace adasample
