#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "adasample/ndarray.hpp"
#include "adasample/random.hpp"
#include "adasample/tape.hpp"

namespace fdtest {

using adasample::NdArray;
using adasample::Tape;
using adasample::Var;

using Graph = std::function<Var(Tape&, const std::vector<Var>&)>;

inline NdArray random_array(std::vector<int> shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  NdArray a(std::move(shape));
  adasample::Rng rng(seed);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(rng.uniform(lo, hi));
  return a;
}

// <r, f(x)> accumulated in double.
inline double project(const NdArray& y, const NdArray& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * r[i];
  return s;
}

struct Check {
  double max_rel = 0.0;
  double max_abs = 0.0;
  int skipped = 0;  // coordinates dropped as kink crossings
};

struct Adjoint {
  NdArray r;         // output projection
  NdArray analytic;  // d<r, f>/d inputs[which]
};

inline Adjoint adjoint_of(const Graph& graph, const std::vector<NdArray>& inputs, int which, std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  Var out = graph(tape, vars);
  Adjoint a;
  a.r = random_array(out.shape(), seed ^ 0x9e3779b97f4a7c15ULL);
  tape.backward(out, a.r);
  a.analytic = vars[which].grad();
  if (a.analytic.empty()) a.analytic = NdArray::zeros_like(inputs[which]);
  return a;
}

// Which side of each ReLU / clamp kink every element sits on.
inline std::vector<bool> kink_pattern(const Tape& tape) {
  std::vector<bool> bits;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const auto kind = tape.kind(static_cast<int>(id));
    if (kind == adasample::OpKind::Relu || kind == adasample::OpKind::Clamp01) {
      const NdArray& x = tape.value(tape.inputs(static_cast<int>(id))[0]);
      for (float v : x.values()) {
        bits.push_back(v > 0.0f);
        if (kind == adasample::OpKind::Clamp01) bits.push_back(v < 1.0f);
      }
    } else if (kind == adasample::OpKind::NormalizeImportance) {
      for (float v : tape.value(static_cast<int>(id)).values()) bits.push_back(v >= 1.0f);
    }
  }
  return bits;
}

inline double evaluate(const Graph& graph, const std::vector<NdArray>& xs, const NdArray& r,
                       std::vector<bool>* pattern = nullptr) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& in : xs) vars.push_back(tape.leaf(in, false));
  const double v = project(graph(tape, vars).value(), r);
  if (pattern) *pattern = kink_pattern(tape);
  return v;
}

// Central differences per coordinate. rel is the norm-wise relative error
// |a - fd| / max(|a|, |fd|) over the whole input tensor; max_abs is the
// largest per-entry deviation.
// With skip_kinks, a perturbation that flips any ReLU, clamp or
// normalization-clamp decision is retried with a step four times smaller, up
// to three times; coordinates that still flip are left out.
inline Check check(const Graph& graph, const std::vector<NdArray>& inputs, int which, std::uint64_t seed,
                   double step = 1e-3, bool skip_kinks = false) {
  const Adjoint adj = adjoint_of(graph, inputs, which, seed);
  std::vector<NdArray> xs = inputs;
  double err2 = 0.0, a2 = 0.0, f2 = 0.0;
  Check c;
  std::vector<bool> base, pu, pd;
  if (skip_kinks) evaluate(graph, xs, adj.r, &base);
  for (std::size_t i = 0; i < adj.analytic.size(); ++i) {
    double fd = 0.0;
    bool clean = false;
    for (double h = step; h >= step / 64.0 && !clean; h /= 4.0) {
      const float orig = xs[which][i];
      const float up = static_cast<float>(orig + h), down = static_cast<float>(orig - h);
      xs[which][i] = up;
      const double fp = evaluate(graph, xs, adj.r, skip_kinks ? &pu : nullptr);
      xs[which][i] = down;
      const double fm = evaluate(graph, xs, adj.r, skip_kinks ? &pd : nullptr);
      xs[which][i] = orig;
      fd = (fp - fm) / (static_cast<double>(up) - down);
      clean = !skip_kinks || (pu == base && pd == base);
    }
    if (!clean) {
      ++c.skipped;
      continue;
    }
    const double a = adj.analytic[i];
    err2 += (a - fd) * (a - fd);
    a2 += a * a;
    f2 += fd * fd;
    c.max_abs = std::max(c.max_abs, std::abs(a - fd));
  }
  const double denom = std::sqrt(std::max(a2, f2));
  c.max_rel = denom > 0.0 ? std::sqrt(err2) / denom : std::sqrt(err2);
  return c;
}

}  // namespace fdtest
