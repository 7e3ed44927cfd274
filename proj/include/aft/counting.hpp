#pragma once

#include <cstdio>
#include <iomanip>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "aft/pyramid.hpp"

namespace aft {

// FLOP convention, applied everywhere a count is produced:
//   one multiply-accumulate = 2 FLOPs
//   conv / deconv           2 * Cout * Cin * kh * kw * Hout * Wout (bias free)
//   activation (non-id)     1 per output element
//   sigmoid gate multiply   1 per output element
//   global average pool     1 per input element
//   2x2 max pool            4 per output element
//   nearest upsample        1 per output element
//   concat                  0

inline std::int64_t act_flops(Activation a, std::int64_t outputs) {
  return a == Activation::Identity ? 0 : outputs;
}

inline std::int64_t conv_flops(const ConvSpec& sp, Dims in) {
  const Dims od = sp.out_dims(in);
  const std::int64_t mac =
      od.c * sp.in_channels * sp.kh * sp.kw * od.h * od.w * od.n;
  return 2 * mac + act_flops(sp.activation, od.numel());
}

template <typename S>
std::int64_t block_flops(const ConvBlock<S>& b, Dims in) {
  return conv_flops(b.spec, in);
}

template <typename S>
std::int64_t block_flops(const DeconvBlock<S>& b, Dims in) {
  const Dims od{in.n, b.out_channels, (in.h - 1) * b.stride + b.kernel,
                (in.w - 1) * b.stride + b.kernel};
  const std::int64_t mac =
      in.c * b.out_channels * b.kernel * b.kernel * in.h * in.w * in.n;
  return 2 * mac + act_flops(b.activation, od.numel());
}

template <typename S>
std::int64_t block_flops(const GateParams<S>& g, Dims in) {
  return in.numel() + conv_flops(g.conv.spec, Dims{in.n, in.c, 1, 1});
}

template <typename S>
std::int64_t block_flops(const AuParams<S>& au, Dims in) {
  const Dims up{in.n, in.c, 2 * in.h, 2 * in.w};
  std::int64_t f = block_flops(au.gate, in);
  f += block_flops(au.deconv, in);
  f += up.numel();
  f += conv_flops(au.up_conv.spec, up);
  f += up.numel();
  f += conv_flops(au.fuse.spec, up);
  return f;
}

template <typename S>
std::int64_t block_flops(const AdParams<S>& ad, Dims in) {
  const Dims down{in.n, in.c, in.h / 2, in.w / 2};
  std::int64_t f = block_flops(ad.gate, in);
  f += conv_flops(ad.stride_conv.spec, in);
  f += 4 * down.numel();
  f += conv_flops(ad.pool_conv.spec, down);
  f += down.numel();
  f += conv_flops(ad.fuse.spec, down);
  return f;
}

template <typename S>
std::int64_t block_flops(const PacParams<S>& pac, Dims in) {
  std::int64_t f = 0;
  for (const auto& br : pac.branches) f += conv_flops(br.spec, in);
  f += conv_flops(pac.merge.spec, Dims{in.n, 3 * in.c, in.h, in.w});
  return f;
}

template <typename S>
std::int64_t block_flops(const CspFuseParams<S>& c, Dims in) {
  const Dims mid{in.n, c.mid_channels, in.h, in.w};
  std::int64_t f = conv_flops(c.main_in.spec, in);
  f += std::visit([&](const auto& blk) { return block_flops(blk, mid); },
                  c.inner);
  f += conv_flops(c.shortcut.spec, in);
  f += conv_flops(c.out.spec, Dims{in.n, 2 * c.mid_channels, in.h, in.w});
  return f;
}

inline std::int64_t block_flops(const NearestUpsample&, Dims in) {
  return 4 * in.numel();
}

struct CountRow {
  std::string name;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

/// Parameter and FLOP table for the projections plus neck at batch 1.
struct CountReport {
  NeckConfig cfg;
  std::vector<CountRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_flops = 0;
};

namespace detail {

inline std::string human_count(std::int64_t v) {
  char buf[32];
  const double d = static_cast<double>(v);
  if (v >= 1000000000)
    std::snprintf(buf, sizeof buf, "%.3fG", d / 1e9);
  else if (v >= 1000000)
    std::snprintf(buf, sizeof buf, "%.3fM", d / 1e6);
  else if (v >= 1000)
    std::snprintf(buf, sizeof buf, "%.1fK", d / 1e3);
  else
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
  return buf;
}

}  // namespace detail

/// Walks a pyramid configuration and produces one row per stage. Counts cover
/// the level projections and the neck; the stub backbone is input plumbing
/// and is excluded.
inline CountReport count_pyramid(const NeckConfig& cfg) {
  cfg.validate();
  using S = float;
  const auto proj = Projections<S>::make(kBackboneOutChannels, cfg.hidden_dim,
                                         cfg.seed);
  const auto neck = NeckGraph<S>::build(cfg);

  const auto ext = cfg.level_extents();
  const std::int64_t hd = cfg.hidden_dim;
  const Dims p3{1, hd, ext[0], ext[0]};
  const Dims p4{1, hd, ext[1], ext[1]};
  const Dims p5{1, hd, ext[2], ext[2]};
  const Dims cat4{1, 2 * hd, ext[1], ext[1]};
  const Dims cat3{1, 2 * hd, ext[0], ext[0]};
  const Dims cat5{1, 2 * hd, ext[2], ext[2]};

  CountReport rep;
  rep.cfg = cfg;

  auto add = [&rep](const std::string& name, std::int64_t params,
                    std::int64_t flops) {
    rep.rows.push_back({name, params, flops});
    rep.total_params += params;
    rep.total_flops += flops;
  };
  auto add_block = [&add](const auto& blk, Dims in) {
    add(blk.name, count_block_params(blk), block_flops(blk, in));
  };

  for (int i = 0; i < 3; ++i) {
    const Dims in{1, kBackboneOutChannels[i], ext[i], ext[i]};
    add_block(proj.convs[i], in);
  }

  auto add_up = [&](const UpStage<S>& st, const std::string& name, Dims in) {
    if (std::holds_alternative<NearestUpsample>(st))
      add(name, 0, block_flops(NearestUpsample{}, in));
    else
      add_block(std::get<AuParams<S>>(st), in);
  };
  auto add_down = [&](const DownStage<S>& st, Dims in) {
    std::visit([&](const auto& blk) { add_block(blk, in); }, st);
  };

  add_up(neck.up0, "td0.up", p5);
  add_block(neck.fuse[0], cat4);
  add_up(neck.up1, "td1.up", p4);
  add_block(neck.fuse[1], cat3);
  add_down(neck.down0, p3);
  add_block(neck.fuse[2], cat4);
  add_down(neck.down1, p4);
  add_block(neck.fuse[3], cat5);
  return rep;
}

/// Difference table between two configurations sharing stage names.
struct DeltaReport {
  CountReport base;
  CountReport full;
  std::vector<CountRow> rows;
  std::int64_t delta_params = 0;
  std::int64_t delta_flops = 0;
};

inline DeltaReport delta_report(const NeckConfig& base_cfg,
                                const NeckConfig& full_cfg) {
  require(base_cfg.hidden_dim == full_cfg.hidden_dim &&
              base_cfg.input_size == full_cfg.input_size,
          "delta report: configs must share hidden_dim and input_size");
  DeltaReport d;
  d.base = count_pyramid(base_cfg);
  d.full = count_pyramid(full_cfg);
  require(d.base.rows.size() == d.full.rows.size(),
          "delta report: stage tables do not align");
  for (std::size_t i = 0; i < d.base.rows.size(); ++i) {
    require(d.base.rows[i].name == d.full.rows[i].name,
            "delta report: stage tables do not align at row ", i);
    d.rows.push_back({d.full.rows[i].name,
                      d.full.rows[i].params - d.base.rows[i].params,
                      d.full.rows[i].flops - d.base.rows[i].flops});
  }
  d.delta_params = d.full.total_params - d.base.total_params;
  d.delta_flops = d.full.total_flops - d.base.total_flops;
  return d;
}

/// Reference ablation delta reported for RT-DETR++ at hidden 256, 640x640.
inline constexpr std::int64_t kReferenceDeltaParams = 1500000;
inline constexpr std::int64_t kReferenceDeltaFlops = 3600000000;

inline const char* kFlopConventionLine =
    "flops: 1 MAC = 2 FLOPs; conv bias free; activations, gating and "
    "upsampling 1/element; maxpool 4/output; avgpool 1/input; concat 0";

inline std::string render_text(const CountReport& rep) {
  std::ostringstream os;
  os << "stage table (batch 1, input " << rep.cfg.input_size << "x"
     << rep.cfg.input_size << ", hidden " << rep.cfg.hidden_dim << ", au="
     << (rep.cfg.use_au ? "on" : "off") << " ad="
     << (rep.cfg.use_ad ? "on" : "off") << " csp_pac="
     << (rep.cfg.use_csp_pac ? "on" : "off") << ")\n";
  os << kFlopConventionLine << "\n\n";
  os << std::left << std::setw(12) << "stage" << std::right << std::setw(12)
     << "params" << std::setw(16) << "flops" << "\n";
  for (const auto& r : rep.rows)
    os << std::left << std::setw(12) << r.name << std::right << std::setw(12)
       << r.params << std::setw(16) << r.flops << "\n";
  os << std::left << std::setw(12) << "total" << std::right << std::setw(12)
     << rep.total_params << std::setw(16) << rep.total_flops << "  ("
     << detail::human_count(rep.total_params) << " params, "
     << detail::human_count(rep.total_flops) << " FLOPs)\n";
  return os.str();
}

inline std::string render_text(const DeltaReport& d) {
  std::ostringstream os;
  os << render_text(d.base) << "\n" << render_text(d.full) << "\n";
  os << "delta (second table minus first)\n";
  os << std::left << std::setw(12) << "stage" << std::right << std::setw(12)
     << "params" << std::setw(16) << "flops" << "\n";
  for (const auto& r : d.rows)
    if (r.params != 0 || r.flops != 0)
      os << std::left << std::setw(12) << r.name << std::right << std::setw(12)
         << r.params << std::setw(16) << r.flops << "\n";
  os << std::left << std::setw(12) << "total" << std::right << std::setw(12)
     << d.delta_params << std::setw(16) << d.delta_flops << "  ("
     << detail::human_count(d.delta_params) << " params, "
     << detail::human_count(d.delta_flops) << " FLOPs)\n";
  os << "reference delta (RT-DETR++ encoder-neck ablation at hidden 256, "
        "640x640): +"
     << detail::human_count(kReferenceDeltaParams) << " params, +"
     << detail::human_count(kReferenceDeltaFlops) << " FLOPs\n";
  return os.str();
}

inline nlohmann::ordered_json to_json(const CountReport& rep) {
  nlohmann::ordered_json j;
  j["config"] = config_to_json(rep.cfg);
  j["flop_convention"] = kFlopConventionLine;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rep.rows)
    j["rows"].push_back({{"stage", r.name}, {"params", r.params},
                         {"flops", r.flops}});
  j["total_params"] = rep.total_params;
  j["total_flops"] = rep.total_flops;
  return j;
}

inline nlohmann::ordered_json to_json(const DeltaReport& d) {
  nlohmann::ordered_json j;
  j["base"] = to_json(d.base);
  j["full"] = to_json(d.full);
  j["delta"] = nlohmann::ordered_json::array();
  for (const auto& r : d.rows)
    j["delta"].push_back({{"stage", r.name}, {"params", r.params},
                          {"flops", r.flops}});
  j["delta_params"] = d.delta_params;
  j["delta_flops"] = d.delta_flops;
  j["reference_delta_params"] = kReferenceDeltaParams;
  j["reference_delta_flops"] = kReferenceDeltaFlops;
  return j;
}

}  // namespace aft
