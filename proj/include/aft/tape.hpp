#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "aft/conv.hpp"
#include "aft/kernels.hpp"
#include "aft/rng.hpp"
#include "aft/tensor.hpp"

namespace aft {

using ValueId = std::int64_t;

/// Reverse-mode autodiff over the tensor kernels. Operations evaluate eagerly
/// when recorded; `recompute` re-runs the whole graph after leaf values have
/// been mutated in place, which is what finite-difference checking and the
/// latency benchmark rely on.
template <typename S>
class Tape {
  enum class Op : std::uint8_t {
    Leaf,
    ConvLinear,
    ConvTranspose,
    MaxPool2x2,
    GlobalAvgPool,
    UpsampleNearest2x,
    ConcatChannels,
    Sigmoid,
    Silu,
    MulBroadcast,
    SumAll,
    DotConst,
  };

  struct Node {
    Op op = Op::Leaf;
    std::vector<ValueId> inputs;
    Tensor<S> value;
    ConvSpec conv;
    std::int64_t tk = 0;
    std::int64_t ts = 0;
    std::vector<std::int64_t> argmax;
    Tensor<S> dot_weights;
  };

 public:
  ValueId leaf(Tensor<S> v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n));
  }

  /// Records the linear map and, when the conv spec asks for one, a separate
  /// activation node. Returns the id of the activated value.
  ValueId conv2d(ValueId x, const ConvSpec& sp, ValueId w,
                 std::optional<ValueId> b = std::nullopt) {
    require(sp.has_bias == b.has_value(),
            "tape conv2d: bias presence must match spec");
    Node n;
    n.op = Op::ConvLinear;
    n.conv = sp;
    n.inputs = {check(x), check(w)};
    if (b) n.inputs.push_back(check(*b));
    ValueId y = push(std::move(n));
    switch (sp.activation) {
      case Activation::Identity: return y;
      case Activation::Sigmoid: return sigmoid(y);
      case Activation::Silu: return silu(y);
    }
    return y;
  }

  ValueId conv_transpose2d(ValueId x, ValueId w, std::optional<ValueId> b,
                           std::int64_t stride, std::int64_t kernel) {
    Node n;
    n.op = Op::ConvTranspose;
    n.tk = kernel;
    n.ts = stride;
    n.inputs = {check(x), check(w)};
    if (b) n.inputs.push_back(check(*b));
    return push(std::move(n));
  }

  ValueId maxpool2d(ValueId x) { return push(unary(Op::MaxPool2x2, x)); }
  ValueId global_avgpool(ValueId x) { return push(unary(Op::GlobalAvgPool, x)); }
  ValueId upsample_nearest2x(ValueId x) {
    return push(unary(Op::UpsampleNearest2x, x));
  }
  ValueId sigmoid(ValueId x) { return push(unary(Op::Sigmoid, x)); }
  ValueId silu(ValueId x) { return push(unary(Op::Silu, x)); }
  ValueId sum_all(ValueId x) { return push(unary(Op::SumAll, x)); }

  ValueId concat_channels(const std::vector<ValueId>& parts) {
    Node n;
    n.op = Op::ConcatChannels;
    for (ValueId p : parts) n.inputs.push_back(check(p));
    return push(std::move(n));
  }

  ValueId mul_broadcast(ValueId x, ValueId gate) {
    Node n;
    n.op = Op::MulBroadcast;
    n.inputs = {check(x), check(gate)};
    return push(std::move(n));
  }

  /// Scalar loss <x, weights> against a fixed weight tensor.
  ValueId dot_const(ValueId x, Tensor<S> weights) {
    Node n;
    n.op = Op::DotConst;
    n.inputs = {check(x)};
    n.dot_weights = std::move(weights);
    return push(std::move(n));
  }

  const Tensor<S>& value(ValueId id) const { return nodes_[check(id)].value; }

  /// Mutable access to a leaf value for in-place perturbation.
  Tensor<S>& leaf_value(ValueId id) {
    require(nodes_[check(id)].op == Op::Leaf,
            "leaf_value: node ", id, " is not a leaf");
    return nodes_[id].value;
  }

  const Tensor<S>& grad(ValueId id) const {
    check(id);
    require(!grads_.empty(), "grad: backward has not been run");
    require(!grads_[id].empty(),
            "grad: value ", id, " is not reachable from the output");
    return grads_[id];
  }

  std::size_t size() const { return nodes_.size(); }

  /// Re-evaluates every non-leaf node from current leaf values.
  void recompute() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) eval(static_cast<ValueId>(i));
  }

  /// Accumulates gradients of a scalar output into every reachable node.
  void backward(ValueId out) {
    const Tensor<S>& v = nodes_[check(out)].value;
    require(v.size() == 1,
            "backward: output must be scalar (or pass an explicit seed), got ",
            v.dims().str());
    Tensor<S> seed = Tensor<S>::full(v.dims(), S(1));
    backward(out, seed);
  }

  void backward(ValueId out, const Tensor<S>& seed) {
    check(out);
    require(seed.dims() == nodes_[out].value.dims(),
            "backward: seed dims ", seed.dims().str(),
            " do not match output ", nodes_[out].value.dims().str());

    std::vector<char> reach(nodes_.size(), 0);
    mark_reachable(out, reach);

    grads_.assign(nodes_.size(), Tensor<S>());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (reach[i]) grads_[i] = Tensor<S>(nodes_[i].value.dims());
    grads_[out].array() += seed.array();

    for (ValueId id = out; id >= 0; --id) {
      if (!reach[id] || grads_[id].empty()) continue;
      propagate(id);
    }
  }

 private:
  Node unary(Op op, ValueId x) {
    Node n;
    n.op = op;
    n.inputs = {check(x)};
    return n;
  }

  ValueId check(ValueId id) const {
    require(id >= 0 && id < static_cast<ValueId>(nodes_.size()),
            "tape: value id ", id, " is out of range");
    return id;
  }

  ValueId push(Node n) {
    nodes_.push_back(std::move(n));
    ValueId id = static_cast<ValueId>(nodes_.size() - 1);
    eval(id);
    return id;
  }

  void mark_reachable(ValueId root, std::vector<char>& reach) const {
    std::vector<ValueId> stack = {root};
    while (!stack.empty()) {
      ValueId id = stack.back();
      stack.pop_back();
      if (reach[id]) continue;
      reach[id] = 1;
      for (ValueId in : nodes_[id].inputs) stack.push_back(in);
    }
  }

  const Tensor<S>& in_val(const Node& n, std::size_t i) const {
    return nodes_[n.inputs[i]].value;
  }

  void eval(ValueId id) {
    Node& n = nodes_[id];
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::ConvLinear: {
        const Tensor<S>* b =
            n.conv.has_bias ? &in_val(n, 2) : nullptr;
        n.value = conv2d_linear(in_val(n, 0), n.conv, in_val(n, 1), b);
        return;
      }
      case Op::ConvTranspose: {
        const Tensor<S>* b = n.inputs.size() > 2 ? &in_val(n, 2) : nullptr;
        n.value = aft::conv_transpose2d(in_val(n, 0), in_val(n, 1), b, n.ts, n.tk);
        return;
      }
      case Op::MaxPool2x2:
        n.value = aft::maxpool2d(in_val(n, 0), &n.argmax);
        return;
      case Op::GlobalAvgPool:
        n.value = aft::global_avgpool(in_val(n, 0));
        return;
      case Op::UpsampleNearest2x:
        n.value = aft::upsample_nearest(in_val(n, 0), 2);
        return;
      case Op::ConcatChannels: {
        std::vector<const Tensor<S>*> parts;
        parts.reserve(n.inputs.size());
        for (ValueId in : n.inputs) parts.push_back(&nodes_[in].value);
        n.value = aft::concat_channels(parts);
        return;
      }
      case Op::Sigmoid:
        n.value = aft::sigmoid(in_val(n, 0));
        return;
      case Op::Silu:
        n.value = aft::silu(in_val(n, 0));
        return;
      case Op::MulBroadcast:
        n.value = aft::mul_broadcast(in_val(n, 0), in_val(n, 1));
        return;
      case Op::SumAll: {
        const Tensor<S>& x = in_val(n, 0);
        S acc = 0;
        for (std::int64_t i = 0; i < x.size(); ++i) acc += x[i];
        n.value = Tensor<S>::full(Dims{1, 1, 1, 1}, acc);
        return;
      }
      case Op::DotConst: {
        const Tensor<S>& x = in_val(n, 0);
        require(x.dims() == n.dot_weights.dims(),
                "dot_const: weight dims ", n.dot_weights.dims().str(),
                " do not match input ", x.dims().str());
        S acc = 0;
        for (std::int64_t i = 0; i < x.size(); ++i)
          acc += x[i] * n.dot_weights[i];
        n.value = Tensor<S>::full(Dims{1, 1, 1, 1}, acc);
        return;
      }
    }
  }

  void add_grad(ValueId id, const Tensor<S>& g) {
    if (grads_[id].empty()) return;
    grads_[id].array() += g.array();
  }

  void propagate(ValueId id) {
    const Node& n = nodes_[id];
    const Tensor<S>& dy = grads_[id];
    switch (n.op) {
      case Op::Leaf:
        return;
      case Op::ConvLinear: {
        const Tensor<S>& x = in_val(n, 0);
        const Tensor<S>& w = in_val(n, 1);
        add_grad(n.inputs[0], conv2d_backward_input(dy, n.conv, w, x.dims()));
        add_grad(n.inputs[1], conv2d_backward_weights(dy, n.conv, x));
        if (n.inputs.size() > 2) add_grad(n.inputs[2], bias_backward(dy));
        return;
      }
      case Op::ConvTranspose: {
        const Tensor<S>& x = in_val(n, 0);
        const Tensor<S>& w = in_val(n, 1);
        add_grad(n.inputs[0],
                 conv_transpose2d_backward_input(dy, w, n.ts, n.tk, x.dims()));
        add_grad(n.inputs[1], conv_transpose2d_backward_weights(
                                  dy, x, n.ts, n.tk, w.dims().c));
        if (n.inputs.size() > 2) add_grad(n.inputs[2], bias_backward(dy));
        return;
      }
      case Op::MaxPool2x2:
        add_grad(n.inputs[0],
                 maxpool2d_backward(dy, n.argmax, in_val(n, 0).dims()));
        return;
      case Op::GlobalAvgPool:
        add_grad(n.inputs[0],
                 global_avgpool_backward(dy, in_val(n, 0).dims()));
        return;
      case Op::UpsampleNearest2x:
        add_grad(n.inputs[0],
                 upsample_nearest_backward(dy, 2, in_val(n, 0).dims()));
        return;
      case Op::ConcatChannels: {
        std::int64_t c_off = 0;
        for (ValueId in : n.inputs) {
          const std::int64_t pc = nodes_[in].value.dims().c;
          add_grad(in, slice_channels(dy, c_off, c_off + pc));
          c_off += pc;
        }
        return;
      }
      case Op::Sigmoid: {
        const Tensor<S>& y = n.value;
        Tensor<S> dx(y.dims());
        for (std::int64_t i = 0; i < y.size(); ++i)
          dx[i] = dy[i] * y[i] * (S(1) - y[i]);
        add_grad(n.inputs[0], dx);
        return;
      }
      case Op::Silu: {
        const Tensor<S>& x = in_val(n, 0);
        Tensor<S> dx(x.dims());
        for (std::int64_t i = 0; i < x.size(); ++i) {
          const S s = sigmoid_scalar(x[i]);
          dx[i] = dy[i] * s * (S(1) + x[i] * (S(1) - s));
        }
        add_grad(n.inputs[0], dx);
        return;
      }
      case Op::MulBroadcast: {
        const Tensor<S>& x = in_val(n, 0);
        const Tensor<S>& g = in_val(n, 1);
        add_grad(n.inputs[0], aft::mul_broadcast(dy, g));
        const Dims d = x.dims();
        Tensor<S> dg(g.dims());
        const std::int64_t plane = d.h * d.w;
        for (std::int64_t b = 0; b < d.n; ++b)
          for (std::int64_t c = 0; c < d.c; ++c) {
            const S* xp = x.data() + (b * d.c + c) * plane;
            const S* dp = dy.data() + (b * d.c + c) * plane;
            S acc = 0;
            for (std::int64_t i = 0; i < plane; ++i) acc += xp[i] * dp[i];
            dg.at(b, c, 0, 0) = acc;
          }
        add_grad(n.inputs[1], dg);
        return;
      }
      case Op::SumAll: {
        Tensor<S> dx = Tensor<S>::full(in_val(n, 0).dims(), dy[0]);
        add_grad(n.inputs[0], dx);
        return;
      }
      case Op::DotConst: {
        Tensor<S> dx(n.dot_weights.dims());
        for (std::int64_t i = 0; i < dx.size(); ++i)
          dx[i] = dy[0] * n.dot_weights[i];
        add_grad(n.inputs[0], dx);
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<S>> grads_;
};

/// A named differentiable leaf, used to address parameters in gradcheck
/// reports and to locate them for perturbation.
struct BoundValue {
  std::string name;
  ValueId id = -1;
};

/// Bound parameter collector. Block forward methods take an optional pointer;
/// when present, every parameter leaf the call records is appended under its
/// dotted name so gradcheck and checkpoint code can address it.
using BindList = std::vector<BoundValue>;

struct GradCheckOptions {
  double eps = 1e-6;
  double tol = 1e-4;
  std::uint64_t seed = 1234;
  /// When set, the analytic gradient of the named value is scaled by 1.5
  /// before comparison. Exists to prove the harness catches wrong gradients.
  std::string corrupt_param;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  double tol = 0.0;

  bool pass() const { return max_rel_err <= tol; }
};

/// Central finite-difference check of every bound leaf against the tape's
/// analytic gradients. The builder receives a double-precision tape plus a
/// list to append bound values to, and returns the graph output; a random
/// linear functional turns that output into the checked scalar loss.
///
/// rel_err = |analytic - numeric| / max(1, |analytic|, |numeric|)
template <typename Builder>
GradCheckReport gradcheck(Builder&& build, const GradCheckOptions& opt = {}) {
  Tape<double> tape;
  std::vector<BoundValue> bound;
  ValueId out = build(tape, bound);
  require(!bound.empty(), "gradcheck: builder bound no values");

  CounterRng rng(opt.seed, "gradcheck.loss");
  Tensor<double> lw =
      Tensor<double>::uniform(tape.value(out).dims(), rng, 0.5, 1.5);
  ValueId loss = tape.dot_const(out, std::move(lw));
  tape.backward(loss);

  bool corrupt_found = false;
  std::vector<Tensor<double>> analytic;
  analytic.reserve(bound.size());
  for (const BoundValue& bv : bound) {
    Tensor<double> g = tape.grad(bv.id);
    if (bv.name == opt.corrupt_param) {
      g.array() *= 1.5;
      corrupt_found = true;
    }
    analytic.push_back(std::move(g));
  }
  require(opt.corrupt_param.empty() || corrupt_found,
          "gradcheck: corrupt_param '", opt.corrupt_param,
          "' does not name a bound value");

  GradCheckReport report;
  report.tol = opt.tol;
  for (std::size_t p = 0; p < bound.size(); ++p) {
    GradCheckEntry entry;
    entry.name = bound[p].name;
    Tensor<double>& leaf = tape.leaf_value(bound[p].id);
    entry.checked = leaf.size();
    for (std::int64_t i = 0; i < leaf.size(); ++i) {
      const double orig = leaf[i];
      leaf[i] = orig + opt.eps;
      tape.recompute();
      const double lp = tape.value(loss)[0];
      leaf[i] = orig - opt.eps;
      tape.recompute();
      const double lm = tape.value(loss)[0];
      leaf[i] = orig;
      const double fd = (lp - lm) / (2.0 * opt.eps);
      const double an = analytic[p][i];
      const double rel =
          std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  tape.recompute();
  return report;
}

}  // namespace aft
