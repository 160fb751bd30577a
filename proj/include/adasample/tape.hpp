#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "adasample/ndarray.hpp"

namespace adasample {

enum class OpKind {
  Leaf,
  Conv3x3,
  Relu,
  Sigmoid,
  Softplus,
  Clamp01,
  Add,
  Mul,
  Scale,
  Upsample2x,
  AvgPool2x,
  MaxPool2x,
  Concat,
  Slice,
  UnitNormalize,
  Sum,
  WeightedSum,
  NormalizeImportance,
  SampleSmooth,
  PullPush,
  L1Channel,
  BceMask,
  BoundsLoss,
  ImportancePrior,
  SsimLoss,
};

const char* op_name(OpKind kind);

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives and
// has not been cleared.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const NdArray& value() const;
  // Accumulated adjoint; empty if backward never reached this node.
  const NdArray& grad() const;
  const std::vector<int>& shape() const { return value().shape(); }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode differentiation tape. Nodes are appended in evaluation
// order, so reverse insertion order is a reverse topological order.
class Tape {
 public:
  // Receives the tape and the id of the node being differentiated. Reads
  // grad(node) and accumulates into grad(input) for inputs that require it.
  using BackwardFn = std::function<void(Tape&, int)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(NdArray value, bool requires_grad = false);
  Var record(OpKind kind, NdArray value, const std::vector<Var>& inputs, BackwardFn backward);

  // Seeds the root with ones (scalar roots) or the given adjoint and runs
  // every reachable backward rule exactly once.
  void backward(const Var& root);
  void backward(const Var& root, const NdArray& seed);

  const NdArray& value(int id) const { return nodes_[id].value; }
  // Materializes a zero adjoint on first access.
  NdArray& grad(int id);
  const NdArray& grad_or_empty(int id) const { return nodes_[id].grad; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  OpKind kind(int id) const { return nodes_[id].kind; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }

  std::size_t size() const { return nodes_.size(); }
  void zero_grad();
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    NdArray value;
    NdArray grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
  };
  // deque keeps value references stable while nodes are appended
  std::deque<Node> nodes_;
};

}  // namespace adasample
