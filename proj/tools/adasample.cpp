#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adasample/parallel.hpp"
#include "adasample/pipeline.hpp"
#include "adasample/tfgen.hpp"
#include "json.hpp"

using namespace adasample;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kNumeric = 3, kIo = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// "key=value" lines become "--key=value" arguments placed before the
// command line ones, so explicit flags win.
std::vector<std::string> read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::vector<std::string> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(n) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(path + ":" + std::to_string(n) + ": empty key");
    out.push_back("--" + key + "=" + value);
  }
  return out;
}

std::vector<std::string> expand_args(int argc, char** argv, const std::vector<std::string>& subcommands) {
  std::vector<std::string> args, config;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config") {
      if (i + 1 >= argc) throw UsageError("--config needs a file name");
      const auto c = read_config(argv[++i]);
      config.insert(config.end(), c.begin(), c.end());
    } else if (a.rfind("--config=", 0) == 0) {
      const auto c = read_config(a.substr(9));
      config.insert(config.end(), c.begin(), c.end());
    } else {
      args.push_back(a);
    }
  }
  auto at = args.end();
  for (auto it = args.begin(); it != args.end(); ++it) {
    if (std::find(subcommands.begin(), subcommands.end(), *it) != subcommands.end()) {
      at = it + 1;
      break;
    }
  }
  args.insert(at, config.begin(), config.end());
  args.insert(args.begin(), argv[0]);
  return args;
}

json typed(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (!text.empty() && end == text.c_str() + text.size() && std::isfinite(v)) return v;
  return text;
}

json resolved_options(const CLI::App& sub) {
  json out = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (opt->get_type_size() == 0) {
        out[name] = true;
      } else if (opt->get_expected_max() > 1) {
        json list = json::array();
        for (const auto& v : r) list.push_back(typed(v));
        out[name] = list;
      } else {
        out[name] = typed(r.back());
      }
    } else if (opt->get_type_size() == 0) {
      out[name] = false;
    } else if (opt->get_expected_max() > 1) {
      out[name] = json::array();
    } else if (!opt->get_default_str().empty()) {
      out[name] = typed(opt->get_default_str());
    }
  }
  return out;
}

void write_manifest(const fs::path& path, const CLI::App& sub, std::optional<std::uint64_t> seed,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
                    const json& extra = json::object()) {
  json m;
  m["subcommand"] = sub.get_name();
  m["config"] = resolved_options(sub);
  m["seed"] = seed ? json(*seed) : json(nullptr);
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["version"] = kVersion;
  m["threads"] = thread_count();
  for (const auto& [k, v] : extra.items()) m[k] = v;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << m.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T, typename Parse>
T parse_choice(const std::string& text, Parse parse, const char* what) {
  try {
    return parse(text);
  } catch (const std::invalid_argument&) {
    throw UsageError(std::string("unknown ") + what + " '" + text + "'");
  }
}

bool needs_seed(SyntheticKind k) { return k == SyntheticKind::Metaballs || k == SyntheticKind::ValueNoise; }

struct VolumeArgs {
  std::vector<std::string> paths;
  std::vector<std::string> synthetic;
  std::string toy;
  int dims = 48;

  void add(CLI::App* sub, int default_dims, bool allow_toy) {
    dims = default_dims;
    sub->add_option("--volume", paths, "raw volume file (reads <file>.meta)")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sub->add_option("--synthetic", synthetic, "sphere, torus, metaballs or value-noise")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    sub->add_option("--dims", dims, "grid size of synthetic volumes")->check(CLI::Range(8, 1024));
    if (allow_toy) sub->add_option("--toy", toy, "built-in toy set: train or held-out");
  }

  bool stochastic() const {
    for (const auto& s : synthetic) {
      if (needs_seed(parse_choice<SyntheticKind>(s, parse_synthetic_kind, "synthetic volume"))) return true;
    }
    return false;
  }

  std::vector<VolumeGrid> load(std::uint64_t seed, std::vector<std::string>& inputs) const {
    std::vector<VolumeGrid> out;
    for (const auto& p : paths) {
      out.push_back(load_raw(p));
      inputs.push_back(p);
    }
    for (std::size_t i = 0; i < synthetic.size(); ++i) {
      const SyntheticKind k = parse_choice<SyntheticKind>(synthetic[i], parse_synthetic_kind, "synthetic volume");
      out.push_back(make_synthetic(k, {dims, dims, dims}, seed + i));
      inputs.push_back("synthetic:" + to_string(k));
    }
    if (!toy.empty()) {
      if (toy != "train" && toy != "held-out") throw UsageError("--toy must be train or held-out");
      for (auto& v : toy_volumes(toy == "train" ? ToySplit::Train : ToySplit::HeldOut, dims)) out.push_back(std::move(v));
      inputs.push_back("toy:" + toy);
    }
    if (out.empty()) throw UsageError("no volume given (use --volume, --synthetic or --toy)");
    return out;
  }
};

std::uint64_t require_seed(const std::optional<std::uint64_t>& seed, const std::string& why) {
  if (!seed) throw UsageError("--seed is required " + why);
  return *seed;
}

TransferFunction random_tf(const VolumeGrid& volume, std::uint64_t seed, const std::string& colormap,
                           RandomTf* details = nullptr, int max_k = 5) {
  const auto densities = density_samples(volume, 100000, seed);
  if (densities.size() < static_cast<std::size_t>(10 * max_k)) {
    throw std::invalid_argument("volume has too few non-empty voxels for a transfer function");
  }
  const Gmm1D gmm = fit_gmm_bic(densities, max_k, seed);
  const Colormap* cm = colormap.empty() ? nullptr : &colormap_by_name(colormap);
  RandomTf r = sample_random_tf(gmm, cm, seed);
  if (details) *details = r;
  return r.tf;
}

// ---- render ----

struct RenderArgs {
  VolumeArgs vol;
  std::string mode = "iso";
  float iso = 0.5f;
  int size = 256;
  bool lowres = false;
  double azimuth = 0.6, elevation = 0.4, distance = 1.8, fov = 0.8;
  float step = 0.25f;
  std::string interp = "trilinear";
  std::string tf_path, colormap;
  bool gradient_channel = false;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_render(const CLI::App& sub, const RenderArgs& a) {
  if (a.vol.paths.size() + a.vol.synthetic.size() != 1) throw UsageError("render needs exactly one --volume or --synthetic");
  if (a.lowres && a.size % kLowResFactor != 0) {
    throw UsageError("--size " + std::to_string(a.size) + " is not divisible by 8, required by --lowres");
  }
  const RenderMode mode = parse_choice<RenderMode>(a.mode, parse_render_mode, "mode");
  const bool random_tf_needed = mode == RenderMode::Dvr && a.tf_path.empty();
  std::optional<std::uint64_t> seed = a.seed;
  if (a.vol.stochastic()) require_seed(seed, "for seeded synthetic volumes");
  if (random_tf_needed) require_seed(seed, "to generate a transfer function (or pass --tf)");

  std::vector<std::string> inputs;
  const VolumeGrid volume = a.vol.load(seed.value_or(0), inputs).front();
  RenderRequest req;
  req.mode = mode;
  req.iso.isovalue = a.iso;
  req.iso.step = a.step;
  req.iso.interp = parse_choice<Interpolation>(a.interp, parse_interpolation, "interpolation");
  req.dvr.step = a.step;
  req.dvr.interp = req.iso.interp;
  req.dvr.gradient_channel = a.gradient_channel;
  if (mode == RenderMode::Dvr) {
    if (!a.tf_path.empty()) {
      req.tf = read_tf(a.tf_path);
      inputs.push_back(a.tf_path);
    } else {
      req.tf = random_tf(volume, *seed, a.colormap);
    }
  }
  const double radius = 0.5 * length(volume.extent());
  const Camera cam = orbit_camera(volume.center(), a.distance * radius, a.azimuth, a.elevation, a.fov, a.size, a.size);
  const ChannelImage img = a.lowres ? render_lowres(volume, cam, req, kLowResFactor) : render(volume, cam, req);

  const std::string png = a.out + ".png", chan = a.out + ".chan";
  const fs::path parent = fs::path(a.out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_png(png, display_rgb(img.data, mode, cam));
  write_chan(chan, img);
  std::vector<std::string> outputs{png, chan};
  if (mode == RenderMode::Dvr) {
    write_tf(a.out + ".tf", req.tf);
    outputs.push_back(a.out + ".tf");
  }
  write_manifest(a.out + ".manifest.json", sub, seed, inputs, outputs);
  std::printf("wrote %s (%dx%d, %d channels)\n", png.c_str(), img.width(), img.height(), img.channels());
  return kOk;
}

// ---- pipeline / train shared dataset flags ----

struct DatasetArgs {
  VolumeArgs vol;
  std::string mode = "iso";
  int views = 4;
  int image = 128;
  int crop = 64;
  float iso = 0.5f;

  void add(CLI::App* sub, int default_views) {
    views = default_views;
    vol.add(sub, 48, true);
    sub->add_option("--mode", mode, "iso or dvr");
    sub->add_option("--views", views, "camera views per volume")->check(CLI::PositiveNumber);
    sub->add_option("--image", image, "full frame size");
    sub->add_option("--crop", crop, "crop size (multiple of 8)");
    sub->add_option("--iso", iso, "isovalue");
  }

  DatasetConfig config(std::uint64_t seed) const {
    DatasetConfig c;
    c.mode = parse_choice<RenderMode>(mode, parse_render_mode, "mode");
    c.views = views;
    c.image = image;
    c.crop = crop;
    c.iso.isovalue = iso;
    c.seed = seed;
    if (crop % kLowResFactor != 0) throw UsageError("--crop " + std::to_string(crop) + " is not divisible by 8");
    return c;
  }
};

// ---- pipeline ----

struct PipelineArgs {
  DatasetArgs data;
  float mu = -1.0f, lower = 0.002f;
  std::string importance = "gradient";
  std::string checkpoint;
  std::string pattern = "plastic";
  std::optional<std::uint64_t> seed;
  std::string out;
};

NdArray normalized_for_display(const NdArray& importance) {
  NdArray out = importance;
  float mx = 0.0f;
  for (float v : out.values()) mx = std::max(mx, v);
  if (mx > 0.0f) {
    for (auto& v : out.values()) v /= mx;
  }
  return out;
}

int cmd_pipeline(const CLI::App& sub, const PipelineArgs& a) {
  const std::uint64_t seed = require_seed(a.seed, "(camera placement is random)");
  const DatasetConfig dc = a.data.config(seed);
  EvalConfig ec;
  ec.mu = a.mu > 0.0f ? a.mu : (dc.mode == RenderMode::Iso ? 0.05f : 0.10f);
  ec.lower = a.lower;
  ec.pattern = parse_choice<PatternKind>(a.pattern, parse_pattern_kind, "pattern");
  ec.keep_images = true;
  if (a.importance == "net-residual" || a.importance == "net-noresidual") {
    ec.importance = ImportanceMode::Net;
    ec.require_baseline = a.importance == "net-residual";
    if (a.checkpoint.empty()) throw UsageError("--importance " + a.importance + " needs --checkpoint");
  } else if (a.importance == "net") {
    ec.importance = ImportanceMode::Net;
    if (a.checkpoint.empty()) throw UsageError("--importance net needs --checkpoint");
  } else {
    ec.importance = parse_choice<ImportanceMode>(a.importance, parse_importance_mode, "importance mode");
  }

  std::vector<std::string> inputs;
  const auto volumes = a.data.vol.load(seed, inputs);
  std::optional<Model> model;
  if (!a.checkpoint.empty()) {
    model = model_from_checkpoint(load_checkpoint(a.checkpoint));
    inputs.push_back(a.checkpoint);
  }
  const auto views = build_dataset(volumes, dc);
  const EvalResult r = evaluate(model ? &*model : nullptr, volumes, views, ec);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  std::vector<std::string> outputs;
  auto emit = [&](const fs::path& p, const NdArray& img) {
    write_png(p.string(), img);
    outputs.push_back(p.string());
  };
  for (std::size_t i = 0; i < views.size(); ++i) {
    const ViewImages& im = r.images[i];
    const Camera& cam = views[i].camera;
    const std::string stem = "view" + std::to_string(i) + "_";
    emit(dir / (stem + "importance.png"), normalized_for_display(im.importance));
    emit(dir / (stem + "samples.png"), display_rgb(im.samples, dc.mode, cam));
    emit(dir / (stem + "inpainted.png"), display_rgb(postprocess(im.inpainted, dc.mode), dc.mode, cam));
    emit(dir / (stem + "output.png"), display_rgb(im.output, dc.mode, cam));
    emit(dir / (stem + "target.png"), display_rgb(im.target, dc.mode, cam));
  }
  const std::string report = (dir / "report.txt").string();
  write_report(report, r.report);
  outputs.push_back(report);
  json fr = r.fractions;
  write_manifest(dir / "manifest.json", sub, seed, inputs, outputs, {{"sample_fractions", fr}});
  const Quartiles ps = r.report.psnr_summary(), ss = r.report.ssim_summary();
  std::printf("%zu views  psnr median %.3f [%.3f, %.3f]  ssim median %.4f [%.4f, %.4f]\n", views.size(), ps.median, ps.q25,
              ps.q75, ss.median, ss.q25, ss.q75);
  return kOk;
}

// ---- train ----

struct TrainArgs {
  DatasetArgs data;
  int steps = 200;
  float lr = 1e-4f, mu = 0.1f, lower = 0.002f, alpha = 50.0f;
  int batch = 1;
  std::string importance = "net";
  bool no_baseline = false, no_global_residual = false, raw_input = false, freeze_importance = false;
  int channels = 16, importance_blocks = 3, recon_blocks = 4;
  int checkpoint_every = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_train(const CLI::App& sub, const TrainArgs& a) {
  const std::uint64_t seed = require_seed(a.seed, "(cameras and initialization are random)");
  const DatasetConfig dc = a.data.config(seed);
  TrainConfig tc;
  tc.importance = parse_choice<ImportanceMode>(a.importance, parse_importance_mode, "importance mode");
  tc.importance_baseline = !a.no_baseline;
  tc.importance_net = {a.channels, a.importance_blocks};
  tc.recon_net = {a.channels, a.recon_blocks};
  tc.global_residual = !a.no_global_residual;
  tc.recon_input = a.raw_input ? ReconInput::Raw : ReconInput::Inpainted;
  tc.mu = a.mu;
  tc.lower = a.lower;
  tc.alpha = a.alpha;
  tc.lr = a.lr;
  tc.steps = a.steps;
  tc.batch = a.batch;
  tc.freeze_importance = a.freeze_importance;
  tc.checkpoint_every = a.checkpoint_every;
  tc.checkpoint_path = a.out;
  tc.seed = seed;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  std::vector<std::string> inputs;
  const auto volumes = a.data.vol.load(seed, inputs);
  const auto dataset = build_dataset(volumes, dc);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path loss_path = out.parent_path() / (out.stem().string() + "_loss.txt");
  std::ofstream loss(loss_path);
  if (!loss) throw IoError("cannot write " + loss_path.string());
  const int every = std::max(1, a.steps / 10);
  const TrainResult r = train(dataset, tc, [&](int step, const StepReport& s) {
    loss << step << ' ' << s.loss << '\n';
    if (step % every == 0 || step == 1) std::printf("step %d loss %.5f\n", step, s.loss);
  });
  loss.close();
  if (!loss) throw IoError("write failed for " + loss_path.string());
  std::vector<std::string> outputs{a.out, loss_path.string()};
  if (a.checkpoint_every > 0) {
    for (int s = a.checkpoint_every; s < a.steps; s += a.checkpoint_every) {
      outputs.push_back((out.parent_path() / (out.stem().string() + "_step" + std::to_string(s) + out.extension().string())).string());
    }
  }
  write_manifest(a.out + ".manifest.json", sub, seed, inputs, outputs,
                 {{"samples", dataset.size()}, {"final_loss", r.losses.back()}});
  std::printf("wrote %s\n", a.out.c_str());
  return kOk;
}

// ---- gradcheck ----

struct GradArgs {
  std::string stage = "all";
  int size = 0;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gradcheck(const CLI::App& sub, const GradArgs& a) {
  const std::uint64_t seed = require_seed(a.seed, "(inputs are random)");
  std::vector<GradStage> stages;
  if (a.stage == "all") {
    stages = {GradStage::Sampler, GradStage::PullPush, GradStage::Conv, GradStage::Ops, GradStage::End2End};
  } else {
    stages = {parse_choice<GradStage>(a.stage, parse_grad_stage, "stage")};
  }
  bool ok = true;
  json results = json::array();
  for (GradStage st : stages) {
    const int size = a.size > 0 ? a.size : (st == GradStage::End2End ? 16 : 8);
    GradCheckReport r;
    try {
      r = gradcheck(st, size, seed);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    for (const auto& e : r.entries) {
      std::printf("%-8s %-28s max_rel %.3e  tol %.0e  checked %d skipped %d  %s\n", to_string(st).c_str(),
                  e.input.c_str(), e.max_rel, e.tolerance, e.checked, e.skipped, e.passed() ? "ok" : "FAIL");
      results.push_back({{"stage", to_string(st)}, {"input", e.input}, {"max_rel", e.max_rel},
                         {"tolerance", e.tolerance}, {"checked", e.checked}, {"skipped", e.skipped}});
    }
    std::printf("%s max rel. error %.3e  %s\n", to_string(st).c_str(), r.max_rel(), r.passed() ? "PASS" : "FAIL");
    ok = ok && r.passed();
  }
  if (!a.out.empty()) write_manifest(a.out, sub, seed, {}, {a.out}, {{"results", results}, {"passed", ok}});
  return ok ? kOk : kNumeric;
}

// ---- tfgen ----

struct TfArgs {
  VolumeArgs vol;
  std::string colormap;
  int max_k = 5;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_tfgen(const CLI::App& sub, const TfArgs& a) {
  const std::uint64_t seed = require_seed(a.seed, "(peaks are random)");
  if (a.vol.paths.size() + a.vol.synthetic.size() != 1) throw UsageError("tfgen needs exactly one --volume or --synthetic");
  if (!a.colormap.empty()) {
    try {
      colormap_by_name(a.colormap);
    } catch (const std::invalid_argument&) {
      throw UsageError("unknown colormap '" + a.colormap + "'");
    }
  }
  std::vector<std::string> inputs;
  const VolumeGrid volume = a.vol.load(seed, inputs).front();
  RandomTf details;
  const TransferFunction tf = random_tf(volume, seed, a.colormap, &details, a.max_k);
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_tf(a.out, tf);
  json peaks = json::array();
  for (const auto& p : details.peaks) {
    peaks.push_back({{"density", p.density}, {"width", p.width}, {"opacity", p.opacity}});
    std::printf("peak density %.4f width %.4f opacity %.3f\n", p.density, p.width, p.opacity);
  }
  write_manifest(a.out + ".manifest.json", sub, seed, inputs, {a.out}, {{"peaks", peaks}, {"colormap", details.colormap}});
  std::printf("wrote %s (%zu peaks, colormap %s)\n", a.out.c_str(), details.peaks.size(), details.colormap.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive sampling and reconstruction for volume visualization"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  int threads = 0;
  app.add_option("--threads", threads, "worker threads (default: ADASAMPLE_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.fallthrough();
  app.footer("Options may also come from --config FILE with one key=value per line; flags on the command line win.");

  RenderArgs ra;
  CLI::App* render_cmd = app.add_subcommand("render", "ray cast one image of a volume");
  ra.vol.add(render_cmd, 64, false);
  render_cmd->add_option("--mode", ra.mode, "iso or dvr");
  render_cmd->add_option("--iso", ra.iso, "isovalue");
  render_cmd->add_option("--size", ra.size, "image width and height")->check(CLI::Range(1, 8192));
  render_cmd->add_flag("--lowres", ra.lowres, "render at 1/8 resolution");
  render_cmd->add_option("--azimuth", ra.azimuth, "camera azimuth (radians)");
  render_cmd->add_option("--elevation", ra.elevation, "camera elevation (radians)");
  render_cmd->add_option("--distance", ra.distance, "camera distance in bounding radii");
  render_cmd->add_option("--fov", ra.fov, "vertical field of view (radians)");
  render_cmd->add_option("--step", ra.step, "ray step in voxels");
  render_cmd->add_option("--interp", ra.interp, "trilinear or tricubic");
  render_cmd->add_option("--tf", ra.tf_path, "transfer function file (dvr)");
  render_cmd->add_option("--colormap", ra.colormap, "colormap for a generated transfer function");
  render_cmd->add_flag("--gradient-channel", ra.gradient_channel, "add the gradient channels (dvr)");
  render_cmd->add_option("--seed", ra.seed, "seed for random volumes and transfer functions");
  render_cmd->add_option("--out", ra.out, "output prefix")->required();

  PipelineArgs pa;
  CLI::App* pipeline_cmd = app.add_subcommand("pipeline", "sample, reconstruct and score views");
  pa.data.add(pipeline_cmd, 4);
  pipeline_cmd->add_option("--mu", pa.mu, "mean sample fraction (default 0.05 iso, 0.10 dvr)");
  pipeline_cmd->add_option("--lower", pa.lower, "minimal sampling probability");
  pipeline_cmd->add_option("--importance", pa.importance, "constant, gradient, net, net-residual or net-noresidual");
  pipeline_cmd->add_option("--checkpoint", pa.checkpoint, "trained model");
  pipeline_cmd->add_option("--pattern", pa.pattern, "random, regular, halton or plastic");
  pipeline_cmd->add_option("--seed", pa.seed, "seed (required)");
  pipeline_cmd->add_option("--out", pa.out, "output directory")->required();

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "train the importance and reconstruction networks");
  ta.data.add(train_cmd, 8);
  train_cmd->add_option("--steps", ta.steps, "optimizer steps");
  train_cmd->add_option("--lr", ta.lr, "Adam learning rate");
  train_cmd->add_option("--mu", ta.mu, "mean sample fraction during training");
  train_cmd->add_option("--lower", ta.lower, "minimal sampling probability");
  train_cmd->add_option("--alpha", ta.alpha, "sigmoid steepness");
  train_cmd->add_option("--batch", ta.batch, "samples per step");
  train_cmd->add_option("--importance", ta.importance, "net, constant or gradient");
  train_cmd->add_flag("--no-baseline", ta.no_baseline, "importance net without the gradient baseline");
  train_cmd->add_flag("--no-global-residual", ta.no_global_residual, "reconstruction without the global residual");
  train_cmd->add_flag("--raw-input", ta.raw_input, "reconstruction from raw samples instead of the pull-push fill");
  train_cmd->add_flag("--freeze-importance", ta.freeze_importance, "keep the importance net fixed");
  train_cmd->add_option("--channels", ta.channels, "network width");
  train_cmd->add_option("--importance-blocks", ta.importance_blocks, "residual blocks of the importance net");
  train_cmd->add_option("--recon-blocks", ta.recon_blocks, "residual blocks of the reconstruction net");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "write intermediate checkpoints");
  train_cmd->add_option("--seed", ta.seed, "seed (required)");
  train_cmd->add_option("--out", ta.out, "checkpoint file")->required();

  GradArgs ga;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "compare adjoints with finite differences");
  grad_cmd->add_option("--stage", ga.stage, "sampler, pullpush, conv, ops, end2end or all");
  grad_cmd->add_option("--size", ga.size, "image size (default 8, end2end 16)");
  grad_cmd->add_option("--seed", ga.seed, "seed (required)");
  grad_cmd->add_option("--out", ga.out, "optional json report");

  TfArgs fa;
  CLI::App* tf_cmd = app.add_subcommand("tfgen", "random transfer function from the density distribution");
  fa.vol.add(tf_cmd, 64, false);
  tf_cmd->add_option("--colormap", fa.colormap, "viridis, coolwarm, blue-orange, green-purple or ember");
  tf_cmd->add_option("--max-k", fa.max_k, "largest GMM component count")->check(CLI::Range(1, 10));
  tf_cmd->add_option("--seed", fa.seed, "seed (required)");
  tf_cmd->add_option("--out", fa.out, "transfer function file")->required();

  try {
    const auto args = expand_args(argc, argv, {"render", "pipeline", "train", "gradcheck", "tfgen"});
    std::vector<const char*> cargs;
    for (const auto& s : args) cargs.push_back(s.c_str());
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  }

  try {
    if (threads > 0) set_thread_count(threads);
    if (render_cmd->parsed()) return cmd_render(*render_cmd, ra);
    if (pipeline_cmd->parsed()) return cmd_pipeline(*pipeline_cmd, pa);
    if (train_cmd->parsed()) return cmd_train(*train_cmd, ta);
    if (grad_cmd->parsed()) return cmd_gradcheck(*grad_cmd, ga);
    if (tf_cmd->parsed()) return cmd_tfgen(*tf_cmd, fa);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\nrun with --help for usage\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
