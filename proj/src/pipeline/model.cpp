#include <stdexcept>

#include "adasample/pipeline.hpp"

namespace adasample {

ImportanceMode parse_importance_mode(const std::string& name) {
  if (name == "constant") return ImportanceMode::Constant;
  if (name == "gradient") return ImportanceMode::Gradient;
  if (name == "net") return ImportanceMode::Net;
  throw std::invalid_argument("unknown importance mode '" + name + "'");
}

std::string to_string(ImportanceMode mode) {
  switch (mode) {
    case ImportanceMode::Constant:
      return "constant";
    case ImportanceMode::Gradient:
      return "gradient";
    case ImportanceMode::Net:
      return "net";
  }
  return "?";
}

namespace {

void append_prefixed(std::vector<Parameter>& dst, const std::vector<Parameter>& src, const std::string& prefix) {
  for (const Parameter& p : src) dst.push_back({prefix + p.name, p.value});
}

std::vector<Parameter> with_prefix(const std::vector<Parameter>& all, const std::string& prefix) {
  std::vector<Parameter> out;
  for (const Parameter& p : all) {
    if (p.name.rfind(prefix, 0) == 0) out.push_back({p.name.substr(prefix.size()), p.value});
  }
  return out;
}

int to_int(const Checkpoint& ck, const std::string& key) {
  const std::string& v = ck.get(key);
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw IoError("checkpoint entry " + key + " is not an integer: '" + v + "'");
  }
}

}  // namespace

Checkpoint to_checkpoint(const Model& model, const std::map<std::string, std::string>& extra) {
  Checkpoint ck;
  ck.header = extra;
  ck.header["mode"] = model.mode == RenderMode::Iso ? "iso" : "dvr";
  ck.header["importance"] = to_string(model.importance);
  if (model.importance_net) {
    const ImportanceNet& n = *model.importance_net;
    ck.header["importance_channels"] = std::to_string(n.config().channels);
    ck.header["importance_blocks"] = std::to_string(n.config().blocks);
    ck.header["importance_baseline"] = n.use_baseline() ? "1" : "0";
    append_prefixed(ck.params, n.params(), "importance.");
  }
  ck.header["recon"] = model.recon_net ? "1" : "0";
  if (model.recon_net) {
    const ReconNet& n = *model.recon_net;
    ck.header["recon_channels"] = std::to_string(n.config().channels);
    ck.header["recon_blocks"] = std::to_string(n.config().blocks);
    ck.header["global_residual"] = n.global_residual() ? "1" : "0";
    ck.header["recon_input"] = n.input() == ReconInput::Inpainted ? "inpainted" : "raw";
    append_prefixed(ck.params, n.params(), "recon.");
  }
  return ck;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model m;
  try {
    m.mode = parse_render_mode(ck.get("mode"));
    m.importance = parse_importance_mode(ck.get("importance"));
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  const int c = image_channels(m.mode);
  if (m.importance == ImportanceMode::Net) {
    const NetConfig cfg{to_int(ck, "importance_channels"), to_int(ck, "importance_blocks")};
    ImportanceNet net(c, cfg, 0, to_int(ck, "importance_baseline") != 0);
    assign_parameters(net.params(), with_prefix(ck.params, "importance."));
    m.importance_net = std::move(net);
  }
  if (to_int(ck, "recon") != 0) {
    const NetConfig cfg{to_int(ck, "recon_channels"), to_int(ck, "recon_blocks")};
    const std::string& input = ck.get("recon_input");
    if (input != "inpainted" && input != "raw") throw IoError("checkpoint: unknown recon_input '" + input + "'");
    ReconNet net(c, cfg, 0, to_int(ck, "global_residual") != 0,
                 input == "raw" ? ReconInput::Raw : ReconInput::Inpainted);
    assign_parameters(net.params(), with_prefix(ck.params, "recon."));
    m.recon_net = std::move(net);
  }
  return m;
}

}  // namespace adasample
