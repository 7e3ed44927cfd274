#pragma once

#include <array>
#include <fstream>
#include <json.hpp>
#include <string>
#include <variant>

#include "aft/blocks.hpp"

namespace aft {

[[noreturn]] inline void config_fail(const std::string& what) {
  throw std::invalid_argument("config error: " + what);
}

/// Feature pyramid configuration. `input_size` is the square image extent the
/// stub backbone consumes; pyramid levels sit at strides 8, 16 and 32.
struct NeckConfig {
  std::int64_t hidden_dim = 64;
  std::int64_t input_size = 320;
  bool use_au = true;
  bool use_ad = true;
  bool use_csp_pac = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_dim < 4)
      config_fail("hidden_dim must be >= 4, got " + std::to_string(hidden_dim));
    if (hidden_dim % 2 != 0)
      config_fail("hidden_dim must be even (the up/down paths split channels "
                  "in half), got " + std::to_string(hidden_dim));
    if (input_size < 32 || input_size % 32 != 0)
      config_fail("input_size must be a positive multiple of 32 (five stride-2 "
                  "stages), got " + std::to_string(input_size));
  }

  std::array<std::int64_t, 3> level_extents() const {
    return {input_size / 8, input_size / 16, input_size / 32};
  }
};

inline NeckConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) config_fail("top-level value must be a JSON object");
  NeckConfig cfg;
  for (const auto& [key, val] : j.items()) {
    if (key == "hidden_dim") {
      if (!val.is_number_integer()) config_fail("hidden_dim must be an integer");
      cfg.hidden_dim = val.get<std::int64_t>();
    } else if (key == "input_size") {
      if (!val.is_number_integer()) config_fail("input_size must be an integer");
      cfg.input_size = val.get<std::int64_t>();
    } else if (key == "use_au") {
      if (!val.is_boolean()) config_fail("use_au must be a boolean");
      cfg.use_au = val.get<bool>();
    } else if (key == "use_ad") {
      if (!val.is_boolean()) config_fail("use_ad must be a boolean");
      cfg.use_ad = val.get<bool>();
    } else if (key == "use_csp_pac") {
      if (!val.is_boolean()) config_fail("use_csp_pac must be a boolean");
      cfg.use_csp_pac = val.get<bool>();
    } else if (key == "seed") {
      if (!val.is_number_unsigned())
        config_fail("seed must be a non-negative integer");
      cfg.seed = val.get<std::uint64_t>();
    } else {
      config_fail("unknown key '" + key +
                  "' (expected hidden_dim, input_size, use_au, use_ad, "
                  "use_csp_pac, seed)");
    }
  }
  cfg.validate();
  return cfg;
}

inline nlohmann::ordered_json config_to_json(const NeckConfig& cfg) {
  nlohmann::ordered_json j;
  j["hidden_dim"] = cfg.hidden_dim;
  j["input_size"] = cfg.input_size;
  j["use_au"] = cfg.use_au;
  j["use_ad"] = cfg.use_ad;
  j["use_csp_pac"] = cfg.use_csp_pac;
  j["seed"] = cfg.seed;
  return j;
}

inline NeckConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_fail("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    config_fail("cannot parse '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

/// Plain 2x downsampling used when the attention block is toggled off:
/// a single 3x3 stride-2 conv at full width.
template <typename S>
ConvBlock<S> make_baseline_down(std::string name, std::int64_t channels,
                                std::uint64_t seed) {
  ConvSpec sp;
  sp.in_channels = channels;
  sp.out_channels = channels;
  sp.kh = sp.kw = 3;
  sp.stride = 2;
  sp.padding = 1;
  sp.activation = Activation::Silu;
  return ConvBlock<S>::make(std::move(name), sp, seed);
}

/// Marker for the parameter-free nearest-neighbour upsampling baseline.
struct NearestUpsample {};

template <typename S>
using UpStage = std::variant<AuParams<S>, NearestUpsample>;
template <typename S>
using DownStage = std::variant<AdParams<S>, ConvBlock<S>>;

/// Three-level feature pyramid neck. The top-down pass refines P4 and P3 with
/// upsampled context; the bottom-up pass rebuilds N4 and N5 from the refined
/// fine level. Every merge concatenates two hidden-width maps and fuses them
/// back to hidden width with a cross-stage block.
///
/// Stage names are fixed regardless of which toggles are active so parameter
/// tables and checkpoints line up across configurations:
///   td0.* (P5 -> P4 merge), td1.* (P4 -> P3 merge),
///   bu0.* (N3 -> N4 merge), bu1.* (N4 -> N5 merge).
template <typename S>
struct NeckGraph {
  using Scalar = S;

  NeckConfig cfg;
  UpStage<S> up0;
  UpStage<S> up1;
  DownStage<S> down0;
  DownStage<S> down1;
  std::array<CspFuseParams<S>, 4> fuse;

  static NeckGraph build(const NeckConfig& cfg) {
    cfg.validate();
    NeckGraph g;
    g.cfg = cfg;
    const std::int64_t hd = cfg.hidden_dim;
    const std::uint64_t seed = cfg.seed;

    if (cfg.use_au) {
      g.up0 = AuParams<S>::make("td0.up", hd, seed);
      g.up1 = AuParams<S>::make("td1.up", hd, seed);
    } else {
      g.up0 = NearestUpsample{};
      g.up1 = NearestUpsample{};
    }
    if (cfg.use_ad) {
      g.down0 = AdParams<S>::make("bu0.down", hd, seed);
      g.down1 = AdParams<S>::make("bu1.down", hd, seed);
    } else {
      g.down0 = make_baseline_down<S>("bu0.down", hd, seed);
      g.down1 = make_baseline_down<S>("bu1.down", hd, seed);
    }

    const std::int64_t mid = std::max<std::int64_t>(1, hd / 4);
    const char* fuse_names[4] = {"td0.fuse", "td1.fuse", "bu0.fuse",
                                 "bu1.fuse"};
    for (int i = 0; i < 4; ++i)
      g.fuse[i] = CspFuseParams<S>::make(fuse_names[i], 2 * hd, mid, hd,
                                         cfg.use_csp_pac, seed);
    return g;
  }

  ValueId run_up(const UpStage<S>& st, Tape<S>& tape, ValueId x,
                 BindList* bind) const {
    if (std::holds_alternative<NearestUpsample>(st))
      return tape.upsample_nearest2x(x);
    return std::get<AuParams<S>>(st).forward(tape, x, bind);
  }

  ValueId run_down(const DownStage<S>& st, Tape<S>& tape, ValueId x,
                   BindList* bind) const {
    return std::visit(
        [&](const auto& blk) { return blk.forward(tape, x, bind); }, st);
  }

  /// Inputs must already be projected to hidden width, with P4 at half and
  /// P5 at a quarter of the P3 extent. Returns {N3, N4, N5}.
  std::array<ValueId, 3> forward(Tape<S>& tape, ValueId p3, ValueId p4,
                                 ValueId p5, BindList* bind = nullptr) const {
    check_level(tape.value(p3).dims(), tape.value(p4).dims(), "P3", "P4");
    check_level(tape.value(p4).dims(), tape.value(p5).dims(), "P4", "P5");

    ValueId t5 = p5;
    ValueId f4 = fuse[0].forward(
        tape, tape.concat_channels({run_up(up0, tape, t5, bind), p4}), bind);
    ValueId n3 = fuse[1].forward(
        tape, tape.concat_channels({run_up(up1, tape, f4, bind), p3}), bind);
    ValueId n4 = fuse[2].forward(
        tape, tape.concat_channels({run_down(down0, tape, n3, bind), f4}),
        bind);
    ValueId n5 = fuse[3].forward(
        tape, tape.concat_channels({run_down(down1, tape, n4, bind), t5}),
        bind);
    return {n3, n4, n5};
  }

  std::array<Tensor<S>, 3> forward(const Tensor<S>& p3, const Tensor<S>& p4,
                                   const Tensor<S>& p5) const {
    Tape<S> tape;
    auto out =
        forward(tape, tape.leaf(p3), tape.leaf(p4), tape.leaf(p5), nullptr);
    return {tape.value(out[0]), tape.value(out[1]), tape.value(out[2])};
  }

  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  void check_level(const Dims& fine, const Dims& coarse, const char* fname,
                   const char* cname) const {
    require(fine.c == cfg.hidden_dim && coarse.c == cfg.hidden_dim,
            "neck: inputs must have hidden width ", cfg.hidden_dim, ", got ",
            fname, "=", fine.str(), " ", cname, "=", coarse.str());
    require(fine.n == coarse.n, "neck: batch mismatch between ", fname,
            " and ", cname);
    require(fine.h == 2 * coarse.h && fine.w == 2 * coarse.w, "neck: ", fname,
            " extent ", fine.str(), " must be exactly twice ", cname,
            " extent ", coarse.str());
  }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    std::visit([&](auto& blk) { visit_stage(blk, f); }, self.up0);
    self.fuse[0].visit(f);
    std::visit([&](auto& blk) { visit_stage(blk, f); }, self.up1);
    self.fuse[1].visit(f);
    std::visit([&](auto& blk) { visit_stage(blk, f); }, self.down0);
    self.fuse[2].visit(f);
    std::visit([&](auto& blk) { visit_stage(blk, f); }, self.down1);
    self.fuse[3].visit(f);
  }

  template <typename Blk, typename F>
  static void visit_stage(Blk& blk, F& f) {
    blk.visit(f);
  }
  template <typename F>
  static void visit_stage(NearestUpsample&, F&) {}
  template <typename F>
  static void visit_stage(const NearestUpsample&, F&) {}
};

/// Per-level 1x1 projections that bring backbone features to hidden width.
template <typename S>
struct Projections {
  using Scalar = S;

  std::array<ConvBlock<S>, 3> convs;

  static Projections make(std::array<std::int64_t, 3> in_channels,
                          std::int64_t hidden, std::uint64_t seed) {
    Projections p;
    const char* names[3] = {"proj.p3", "proj.p4", "proj.p5"};
    for (int i = 0; i < 3; ++i) {
      ConvSpec sp;
      sp.in_channels = in_channels[i];
      sp.out_channels = hidden;
      p.convs[i] = ConvBlock<S>::make(names[i], sp, seed);
    }
    return p;
  }

  std::array<ValueId, 3> forward(Tape<S>& tape, ValueId p3, ValueId p4,
                                 ValueId p5, BindList* bind = nullptr) const {
    const Dims d3 = tape.value(p3).dims();
    const Dims d4 = tape.value(p4).dims();
    const Dims d5 = tape.value(p5).dims();
    require(d3.h == 2 * d4.h && d3.w == 2 * d4.w && d4.h == 2 * d5.h &&
                d4.w == 2 * d5.w,
            "project_inputs: levels must halve in extent, got ", d3.str(), " ",
            d4.str(), " ", d5.str());
    return {convs[0].forward(tape, p3, bind), convs[1].forward(tape, p4, bind),
            convs[2].forward(tape, p5, bind)};
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& c : convs) c.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    for (const auto& c : convs) c.visit(f);
  }
};

inline constexpr std::array<std::int64_t, 3> kBackboneOutChannels = {64, 128,
                                                                     256};

/// Deterministic stand-in for a real backbone: five seeded 3x3 stride-2
/// convs produce P3, P4 and P5 at strides 8, 16 and 32.
template <typename S>
struct StubBackbone {
  using Scalar = S;

  std::array<ConvBlock<S>, 5> stages;

  static StubBackbone make(std::uint64_t seed) {
    const std::int64_t widths[6] = {3, 16, 32, 64, 128, 256};
    StubBackbone b;
    for (int i = 0; i < 5; ++i) {
      ConvSpec sp;
      sp.in_channels = widths[i];
      sp.out_channels = widths[i + 1];
      sp.kh = sp.kw = 3;
      sp.stride = 2;
      sp.padding = 1;
      sp.activation = Activation::Silu;
      b.stages[i] = ConvBlock<S>::make("backbone.stage" + std::to_string(i + 1),
                                       sp, seed);
    }
    return b;
  }

  std::array<ValueId, 3> forward(Tape<S>& tape, ValueId image,
                                 BindList* bind = nullptr) const {
    const Dims d = tape.value(image).dims();
    require(d.c == 3, "backbone: image must have 3 channels, got ", d.str());
    require(d.h % 32 == 0 && d.w % 32 == 0 && d.h > 0 && d.w > 0,
            "backbone: image extent must be a positive multiple of 32, got ",
            d.str());
    ValueId x = image;
    std::array<ValueId, 3> out{};
    for (int i = 0; i < 5; ++i) {
      x = stages[i].forward(tape, x, bind);
      if (i >= 2) out[i - 2] = x;
    }
    return out;
  }

  template <typename F>
  void visit(F&& f) {
    for (auto& s : stages) s.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    for (const auto& s : stages) s.visit(f);
  }
};

/// Backbone, projections and neck bundled for the command-line tool.
template <typename S>
struct FullModel {
  using Scalar = S;

  NeckConfig cfg;
  StubBackbone<S> backbone;
  Projections<S> proj;
  NeckGraph<S> neck;

  static FullModel make(const NeckConfig& cfg) {
    cfg.validate();
    FullModel m;
    m.cfg = cfg;
    m.backbone = StubBackbone<S>::make(cfg.seed);
    m.proj = Projections<S>::make(kBackboneOutChannels, cfg.hidden_dim, cfg.seed);
    m.neck = NeckGraph<S>::build(cfg);
    return m;
  }

  std::array<ValueId, 3> forward(Tape<S>& tape, ValueId image,
                                 BindList* bind = nullptr) const {
    auto p = backbone.forward(tape, image, bind);
    auto q = proj.forward(tape, p[0], p[1], p[2], bind);
    return neck.forward(tape, q[0], q[1], q[2], bind);
  }

  std::array<Tensor<S>, 3> forward(const Tensor<S>& image) const {
    Tape<S> tape;
    auto out = forward(tape, tape.leaf(image));
    return {tape.value(out[0]), tape.value(out[1]), tape.value(out[2])};
  }

  template <typename F>
  void visit(F&& f) {
    backbone.visit(f);
    proj.visit(f);
    neck.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    backbone.visit(f);
    proj.visit(f);
    neck.visit(f);
  }
};

}  // namespace aft
