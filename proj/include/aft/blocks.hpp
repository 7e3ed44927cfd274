#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "aft/tape.hpp"

namespace aft {

namespace detail {

template <typename S>
Tensor<S> init_weights(Dims d, std::int64_t fan_in, std::uint64_t seed,
                       const std::string& name) {
  CounterRng rng(seed, name);
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor<S>::uniform(d, rng, -s, s);
}

}  // namespace detail

/// A convolution with owned weights. `name` is the dotted path of the block
/// inside its model and prefixes its parameter names.
template <typename S>
struct ConvBlock {
  std::string name;
  ConvSpec spec;
  Tensor<S> weight;
  Tensor<S> bias;

  static ConvBlock make(std::string name, ConvSpec spec, std::uint64_t seed) {
    ConvBlock b;
    b.weight = detail::init_weights<S>(spec.weight_dims(), spec.fan_in(), seed,
                                       name + ".weight");
    if (spec.has_bias) b.bias = Tensor<S>(spec.bias_dims());
    b.name = std::move(name);
    b.spec = spec;
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv2d(x, spec, weight, spec.has_bias ? &bias : nullptr);
  }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    ValueId w = tape.leaf(weight);
    std::optional<ValueId> b;
    if (spec.has_bias) b = tape.leaf(bias);
    if (bind) {
      bind->push_back({name + ".weight", w});
      if (b) bind->push_back({name + ".bias", *b});
    }
    return tape.conv2d(x, spec, w, b);
  }

  template <typename F>
  void visit(F&& f) {
    f(name + ".weight", weight);
    if (spec.has_bias) f(name + ".bias", bias);
  }
  template <typename F>
  void visit(F&& f) const {
    f(name + ".weight", weight);
    if (spec.has_bias) f(name + ".bias", bias);
  }
};

/// Learned 2x upsampling: transposed conv, kernel 2, stride 2, then an
/// activation. Weights are (in, out, 2, 2).
template <typename S>
struct DeconvBlock {
  std::string name;
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 2;
  std::int64_t stride = 2;
  Activation activation = Activation::Silu;
  Tensor<S> weight;
  Tensor<S> bias;

  static DeconvBlock make(std::string name, std::int64_t in_ch,
                          std::int64_t out_ch, std::uint64_t seed) {
    DeconvBlock b;
    b.weight = detail::init_weights<S>(Dims{in_ch, out_ch, 2, 2}, in_ch * 4,
                                       seed, name + ".weight");
    b.bias = Tensor<S>(Dims{1, out_ch, 1, 1});
    b.name = std::move(name);
    b.in_channels = in_ch;
    b.out_channels = out_ch;
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tensor<S> y = conv_transpose2d(x, weight, &bias, stride, kernel);
    apply_activation(y, activation);
    return y;
  }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    ValueId w = tape.leaf(weight);
    ValueId b = tape.leaf(bias);
    if (bind) {
      bind->push_back({name + ".weight", w});
      bind->push_back({name + ".bias", b});
    }
    ValueId y = tape.conv_transpose2d(x, w, b, stride, kernel);
    switch (activation) {
      case Activation::Identity: return y;
      case Activation::Sigmoid: return tape.sigmoid(y);
      case Activation::Silu: return tape.silu(y);
    }
    return y;
  }

  template <typename F>
  void visit(F&& f) {
    f(name + ".weight", weight);
    f(name + ".bias", bias);
  }
  template <typename F>
  void visit(F&& f) const {
    f(name + ".weight", weight);
    f(name + ".bias", bias);
  }
};

/// Squeeze-and-gate attention: global average pool, 1x1 conv, sigmoid.
/// Produces a per-channel gate in (0, 1) of shape (n, c, 1, 1).
template <typename S>
struct GateParams {
  ConvBlock<S> conv;

  static GateParams make(const std::string& name, std::int64_t channels,
                         std::uint64_t seed) {
    ConvSpec sp;
    sp.in_channels = channels;
    sp.out_channels = channels;
    sp.activation = Activation::Sigmoid;
    return GateParams{ConvBlock<S>::make(name + ".conv", sp, seed)};
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    return conv.forward(global_avgpool(x));
  }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    return conv.forward(tape, tape.global_avgpool(x), bind);
  }

  template <typename F>
  void visit(F&& f) { conv.visit(f); }
  template <typename F>
  void visit(F&& f) const { conv.visit(f); }
};

/// Attention-gated 2x upsampling. Two parallel paths at half width (learned
/// transposed conv and nearest-neighbour plus 1x1 conv) are concatenated,
/// scaled by a channel gate computed from the input, and fused back to the
/// full channel count.
template <typename S>
struct AuParams {
  std::string name;
  GateParams<S> gate;
  DeconvBlock<S> deconv;
  ConvBlock<S> up_conv;
  ConvBlock<S> fuse;

  static AuParams make(std::string name, std::int64_t channels,
                       std::uint64_t seed) {
    require(channels % 2 == 0, "attention_upsample: channels must be even, got ",
            channels);
    const std::int64_t half = channels / 2;
    AuParams p;
    p.gate = GateParams<S>::make(name + ".gate", channels, seed);
    p.deconv = DeconvBlock<S>::make(name + ".deconv", channels, half, seed);
    ConvSpec up;
    up.in_channels = channels;
    up.out_channels = half;
    up.activation = Activation::Silu;
    p.up_conv = ConvBlock<S>::make(name + ".up_conv", up, seed);
    ConvSpec fu;
    fu.in_channels = channels;
    fu.out_channels = channels;
    fu.activation = Activation::Silu;
    p.fuse = ConvBlock<S>::make(name + ".fuse", fu, seed);
    p.name = std::move(name);
    return p;
  }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    ValueId g = gate.forward(tape, x, bind);
    ValueId u1 = deconv.forward(tape, x, bind);
    ValueId u2 = up_conv.forward(tape, tape.upsample_nearest2x(x), bind);
    ValueId cat = tape.concat_channels({u1, u2});
    return fuse.forward(tape, tape.mul_broadcast(cat, g), bind);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tape<S> tape;
    return tape.value(forward(tape, tape.leaf(x)));
  }

  template <typename F>
  void visit(F&& f) {
    gate.visit(f);
    deconv.visit(f);
    up_conv.visit(f);
    fuse.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    gate.visit(f);
    deconv.visit(f);
    up_conv.visit(f);
    fuse.visit(f);
  }
};

/// Attention-gated 2x downsampling, mirroring the upsample block: a strided
/// 3x3 conv and a maxpool-plus-1x1-conv path at half width, concatenated,
/// gated, and fused with a 3x3 conv.
template <typename S>
struct AdParams {
  std::string name;
  GateParams<S> gate;
  ConvBlock<S> stride_conv;
  ConvBlock<S> pool_conv;
  ConvBlock<S> fuse;

  static AdParams make(std::string name, std::int64_t channels,
                       std::uint64_t seed) {
    require(channels % 2 == 0,
            "attention_downsample: channels must be even, got ", channels);
    const std::int64_t half = channels / 2;
    AdParams p;
    p.gate = GateParams<S>::make(name + ".gate", channels, seed);
    ConvSpec st;
    st.in_channels = channels;
    st.out_channels = half;
    st.kh = st.kw = 3;
    st.stride = 2;
    st.padding = 1;
    st.activation = Activation::Silu;
    p.stride_conv = ConvBlock<S>::make(name + ".stride_conv", st, seed);
    ConvSpec pc;
    pc.in_channels = channels;
    pc.out_channels = half;
    pc.activation = Activation::Silu;
    p.pool_conv = ConvBlock<S>::make(name + ".pool_conv", pc, seed);
    ConvSpec fu;
    fu.in_channels = channels;
    fu.out_channels = channels;
    fu.kh = fu.kw = 3;
    fu.padding = 1;
    fu.activation = Activation::Silu;
    p.fuse = ConvBlock<S>::make(name + ".fuse", fu, seed);
    p.name = std::move(name);
    return p;
  }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    ValueId g = gate.forward(tape, x, bind);
    ValueId d1 = stride_conv.forward(tape, x, bind);
    ValueId d2 = pool_conv.forward(tape, tape.maxpool2d(x), bind);
    ValueId cat = tape.concat_channels({d1, d2});
    return fuse.forward(tape, tape.mul_broadcast(cat, g), bind);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tape<S> tape;
    return tape.value(forward(tape, tape.leaf(x)));
  }

  template <typename F>
  void visit(F&& f) {
    gate.visit(f);
    stride_conv.visit(f);
    pool_conv.visit(f);
    fuse.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    gate.visit(f);
    stride_conv.visit(f);
    pool_conv.visit(f);
    fuse.visit(f);
  }
};

/// Parallel atrous convolution: three 3x3 branches at dilation 1, 2, 3 (each
/// padded to preserve extent), concatenated and merged by a 1x1 conv back to
/// the branch width.
template <typename S>
struct PacParams {
  std::string name;
  std::array<ConvBlock<S>, 3> branches;
  ConvBlock<S> merge;

  static PacParams make(std::string name, std::int64_t channels,
                        std::uint64_t seed) {
    PacParams p;
    for (int i = 0; i < 3; ++i) {
      ConvSpec sp;
      sp.in_channels = channels;
      sp.out_channels = channels;
      sp.kh = sp.kw = 3;
      sp.dilation = i + 1;
      sp.padding = sp.dilation;
      sp.activation = Activation::Silu;
      p.branches[i] = ConvBlock<S>::make(
          name + ".branch" + std::to_string(i + 1), sp, seed);
    }
    ConvSpec mg;
    mg.in_channels = 3 * channels;
    mg.out_channels = channels;
    mg.activation = Activation::Silu;
    p.merge = ConvBlock<S>::make(name + ".merge", mg, seed);
    p.name = std::move(name);
    return p;
  }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    std::vector<ValueId> outs;
    for (const auto& br : branches) outs.push_back(br.forward(tape, x, bind));
    return merge.forward(tape, tape.concat_channels(outs), bind);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tape<S> tape;
    return tape.value(forward(tape, tape.leaf(x)));
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& br : branches) br.visit(f);
    merge.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    for (const auto& br : branches) br.visit(f);
    merge.visit(f);
  }
};

/// Cross-stage fusion block. The main path narrows to an inner width, runs
/// either a parallel atrous block or a plain 3x3 conv, and is concatenated
/// with a 1x1 shortcut before a final 1x1 projection to the output width.
template <typename S>
struct CspFuseParams {
  std::string name;
  std::int64_t mid_channels = 0;
  ConvBlock<S> main_in;
  std::variant<PacParams<S>, ConvBlock<S>> inner;
  ConvBlock<S> shortcut;
  ConvBlock<S> out;

  static CspFuseParams make(std::string name, std::int64_t in_ch,
                            std::int64_t mid_ch, std::int64_t out_ch,
                            bool use_pac, std::uint64_t seed) {
    CspFuseParams p;
    p.mid_channels = mid_ch;
    ConvSpec mi;
    mi.in_channels = in_ch;
    mi.out_channels = mid_ch;
    mi.activation = Activation::Silu;
    p.main_in = ConvBlock<S>::make(name + ".main_in", mi, seed);
    if (use_pac) {
      p.inner = PacParams<S>::make(name + ".pac", mid_ch, seed);
    } else {
      ConvSpec pl;
      pl.in_channels = mid_ch;
      pl.out_channels = mid_ch;
      pl.kh = pl.kw = 3;
      pl.padding = 1;
      pl.activation = Activation::Silu;
      p.inner = ConvBlock<S>::make(name + ".conv", pl, seed);
    }
    ConvSpec sc;
    sc.in_channels = in_ch;
    sc.out_channels = mid_ch;
    sc.activation = Activation::Silu;
    p.shortcut = ConvBlock<S>::make(name + ".shortcut", sc, seed);
    ConvSpec ou;
    ou.in_channels = 2 * mid_ch;
    ou.out_channels = out_ch;
    ou.activation = Activation::Silu;
    p.out = ConvBlock<S>::make(name + ".out", ou, seed);
    p.name = std::move(name);
    return p;
  }

  bool uses_pac() const { return std::holds_alternative<PacParams<S>>(inner); }

  ValueId forward(Tape<S>& tape, ValueId x, BindList* bind = nullptr) const {
    ValueId m = main_in.forward(tape, x, bind);
    m = std::visit([&](const auto& blk) { return blk.forward(tape, m, bind); },
                   inner);
    ValueId s = shortcut.forward(tape, x, bind);
    return out.forward(tape, tape.concat_channels({m, s}), bind);
  }

  Tensor<S> forward(const Tensor<S>& x) const {
    Tape<S> tape;
    return tape.value(forward(tape, tape.leaf(x)));
  }

  template <typename F>
  void visit(F&& f) {
    main_in.visit(f);
    std::visit([&](auto& blk) { blk.visit(f); }, inner);
    shortcut.visit(f);
    out.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    main_in.visit(f);
    std::visit([&](const auto& blk) { blk.visit(f); }, inner);
    shortcut.visit(f);
    out.visit(f);
  }
};

/// Counts the scalars in anything that exposes visit().
template <typename Block>
std::int64_t count_block_params(const Block& b) {
  std::int64_t total = 0;
  b.visit([&](const std::string&, const auto& t) { total += t.size(); });
  return total;
}

}  // namespace aft
