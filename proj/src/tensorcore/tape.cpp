#include "adasample/tape.hpp"

#include <utility>


namespace adasample {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Conv3x3: return "conv3x3";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softplus: return "softplus";
    case OpKind::Clamp01: return "clamp01";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Upsample2x: return "upsample2x";
    case OpKind::AvgPool2x: return "avg_pool2x";
    case OpKind::MaxPool2x: return "max_pool2x";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::UnitNormalize: return "unit_normalize";
    case OpKind::Sum: return "sum";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::NormalizeImportance: return "normalize_importance";
    case OpKind::SampleSmooth: return "sample_smooth";
    case OpKind::PullPush: return "pullpush";
    case OpKind::L1Channel: return "l1_channel";
    case OpKind::BceMask: return "bce_mask";
    case OpKind::BoundsLoss: return "bounds_loss";
    case OpKind::ImportancePrior: return "importance_prior";
    case OpKind::SsimLoss: return "ssim_loss";
  }
  return "unknown";
}

const NdArray& Var::value() const { return tape_->value(id_); }
const NdArray& Var::grad() const { return tape_->grad_or_empty(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(NdArray value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(OpKind kind, NdArray value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node;
  node.kind = kind;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument(std::string(op_name(kind)) + ": input from another tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

NdArray& Tape::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && !n.value.empty()) n.grad = NdArray::zeros_like(n.value);
  return n.grad;
}

void Tape::zero_grad() {
  for (auto& n : nodes_) n.grad = NdArray();
}

void Tape::backward(const Var& root) {
  NdArray seed(root.value().shape(), 1.0f);
  backward(root, seed);
}

void Tape::backward(const Var& root, const NdArray& seed) {
  require_same_shape(root.value(), seed, "backward seed");
  if (!nodes_[root.id()].requires_grad) return;
  NdArray& g = grad(root.id());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

}  // namespace adasample
