#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <thread>

#include "aft/bench.hpp"
#include "aft/counting.hpp"

using aft::ConvSpec;
using aft::Dims;
using aft::NeckConfig;
using aft::Tensor;

TEST_CASE("conv params and flops match the convention examples") {
  // 1x1 conv, 8 -> 8, bias: 72 params; on a 4x4 map with identity
  // activation: 2 * 8 * 8 * 16 = 2048 FLOPs
  ConvSpec sp;
  sp.in_channels = 8;
  sp.out_channels = 8;
  const auto blk = aft::ConvBlock<float>::make("t", sp, 0);
  CHECK(aft::count_block_params(blk) == 72);
  CHECK(aft::conv_flops(sp, Dims{1, 8, 4, 4}) == 2048);

  // silu costs one flop per output element on top
  ConvSpec act = sp;
  act.activation = aft::Activation::Silu;
  CHECK(aft::conv_flops(act, Dims{1, 8, 4, 4}) == 2048 + 128);

  // batch scales flops linearly, never params
  CHECK(aft::conv_flops(sp, Dims{3, 8, 4, 4}) == 3 * 2048);
}

TEST_CASE("stride-1 shape-preserving graphs scale flops by exactly 4x") {
  const auto pac = aft::PacParams<float>::make("pac", 16, 1);
  const std::int64_t f1 = aft::block_flops(pac, Dims{1, 16, 10, 10});
  const std::int64_t f2 = aft::block_flops(pac, Dims{1, 16, 20, 20});
  CHECK(f2 == 4 * f1);

  const auto csp = aft::CspFuseParams<float>::make("c", 32, 8, 16, true, 1);
  CHECK(aft::block_flops(csp, Dims{1, 32, 14, 14}) * 4 ==
        aft::block_flops(csp, Dims{1, 32, 28, 28}));
}

TEST_CASE("au/ad block flops follow their stage decomposition") {
  const auto au = aft::AuParams<float>::make("au", 8, 2);
  const Dims in{1, 8, 4, 4};
  const Dims up{1, 8, 8, 8};
  std::int64_t want = in.numel() + aft::conv_flops(au.gate.conv.spec, Dims{1, 8, 1, 1});
  want += 2 * 8 * 4 * 2 * 2 * 4 * 4 + up.numel() / 2;  // deconv macs + silu
  want += up.numel();                                   // nearest upsample
  want += aft::conv_flops(au.up_conv.spec, up);
  want += up.numel();                                   // gate multiply
  want += aft::conv_flops(au.fuse.spec, up);
  CHECK(aft::block_flops(au, in) == want);

  const auto ad = aft::AdParams<float>::make("ad", 8, 2);
  const Dims din{1, 8, 8, 8};
  const Dims down{1, 8, 4, 4};
  std::int64_t dwant =
      din.numel() + aft::conv_flops(ad.gate.conv.spec, Dims{1, 8, 1, 1});
  dwant += aft::conv_flops(ad.stride_conv.spec, din);
  dwant += 4 * down.numel();
  dwant += aft::conv_flops(ad.pool_conv.spec, down);
  dwant += down.numel();
  dwant += aft::conv_flops(ad.fuse.spec, down);
  CHECK(aft::block_flops(ad, din) == dwant);
}

TEST_CASE("count report totals equal the sum of rows") {
  NeckConfig cfg;
  cfg.hidden_dim = 16;
  cfg.input_size = 64;
  const auto rep = aft::count_pyramid(cfg);
  REQUIRE(rep.rows.size() == 11);  // 3 projections + 8 neck stages
  std::int64_t p = 0, f = 0;
  for (const auto& r : rep.rows) {
    p += r.params;
    f += r.flops;
    CHECK(r.flops > 0);
  }
  CHECK(p == rep.total_params);
  CHECK(f == rep.total_flops);
}

TEST_CASE("count params equals direct enumeration of the graph tensors") {
  NeckConfig cfg;
  cfg.hidden_dim = 16;
  cfg.input_size = 64;
  const auto rep = aft::count_pyramid(cfg);

  std::int64_t enumerated = 0;
  aft::Projections<float>::make(aft::kBackboneOutChannels, cfg.hidden_dim,
                                cfg.seed)
      .visit([&](const std::string&, const Tensor<float>& t) {
        enumerated += t.size();
      });
  aft::NeckGraph<float>::build(cfg).visit(
      [&](const std::string&, const Tensor<float>& t) {
        enumerated += t.size();
      });
  CHECK(enumerated == rep.total_params);
}

TEST_CASE("delta report: identical configs cancel, toggles decompose") {
  NeckConfig cfg;
  cfg.hidden_dim = 32;
  cfg.input_size = 64;
  const auto zero = aft::delta_report(cfg, cfg);
  CHECK(zero.delta_params == 0);
  CHECK(zero.delta_flops == 0);
  for (const auto& r : zero.rows) {
    CHECK(r.params == 0);
    CHECK(r.flops == 0);
  }

  // toggling only csp_pac: the delta is exactly the four fusion blocks'
  // difference, computed independently per block
  NeckConfig base = cfg;
  base.use_csp_pac = false;
  const auto d = aft::delta_report(base, cfg);
  const std::int64_t mid = cfg.hidden_dim / 4;
  const auto with_pac = aft::CspFuseParams<float>::make(
      "x", 2 * cfg.hidden_dim, mid, cfg.hidden_dim, true, 0);
  const auto plain = aft::CspFuseParams<float>::make(
      "x", 2 * cfg.hidden_dim, mid, cfg.hidden_dim, false, 0);
  const std::int64_t params_per_block =
      aft::count_block_params(with_pac) - aft::count_block_params(plain);
  CHECK(d.delta_params == 4 * params_per_block);

  const auto ext = cfg.level_extents();
  std::int64_t want_flops = 0;
  const std::int64_t sizes[4] = {ext[1], ext[0], ext[1], ext[2]};
  for (int i = 0; i < 4; ++i) {
    const Dims in{1, 2 * cfg.hidden_dim, sizes[i], sizes[i]};
    want_flops += aft::block_flops(with_pac, in) - aft::block_flops(plain, in);
  }
  CHECK(d.delta_flops == want_flops);
}

TEST_CASE("delta report refuses mismatched geometry") {
  NeckConfig a, b;
  a.hidden_dim = 32;
  b.hidden_dim = 64;
  CHECK_THROWS_AS(aft::delta_report(a, b), std::invalid_argument);
}

TEST_CASE("ablation lattice grows strictly at every toggle") {
  for (std::int64_t hd : {16, 64}) {
    NeckConfig cfg;
    cfg.hidden_dim = hd;
    cfg.input_size = 64;
    cfg.use_au = cfg.use_ad = cfg.use_csp_pac = false;
    auto prev = aft::count_pyramid(cfg);
    for (int step = 0; step < 3; ++step) {
      if (step == 0) cfg.use_au = true;
      if (step == 1) cfg.use_ad = true;
      if (step == 2) cfg.use_csp_pac = true;
      const auto cur = aft::count_pyramid(cfg);
      CHECK(cur.total_params > prev.total_params);
      CHECK(cur.total_flops > prev.total_flops);
      prev = cur;
    }
  }
}

TEST_CASE("render and json carry the convention and the rows") {
  NeckConfig cfg;
  cfg.hidden_dim = 16;
  cfg.input_size = 64;
  const auto rep = aft::count_pyramid(cfg);
  const std::string text = aft::render_text(rep);
  CHECK(text.find("1 MAC = 2 FLOPs") != std::string::npos);
  CHECK(text.find("td0.up") != std::string::npos);
  CHECK(text.find("total") != std::string::npos);

  const auto j = aft::to_json(rep);
  CHECK(j["total_params"].get<std::int64_t>() == rep.total_params);
  CHECK(j["rows"].size() == rep.rows.size());

  NeckConfig base = cfg;
  base.use_au = false;
  const auto d = aft::delta_report(base, cfg);
  const std::string dt = aft::render_text(d);
  CHECK(dt.find("reference delta") != std::string::npos);
  CHECK(dt.find("delta") != std::string::npos);
  const auto dj = aft::to_json(d);
  CHECK(dj["delta_params"].get<std::int64_t>() == d.delta_params);
  CHECK(dj["reference_delta_params"].get<std::int64_t>() == 1500000);
}

TEST_CASE("bench aggregates ordered stats and validates inputs") {
  int calls = 0;
  const auto r = aft::bench_latency(
      "noop",
      [&] {
        ++calls;
        std::this_thread::sleep_for(std::chrono::microseconds(200));
      },
      10, 3);
  CHECK(calls == 13);
  CHECK(r.iterations == 10);
  CHECK(r.warmup == 3);
  CHECK(r.min_ms > 0.0);
  CHECK(r.min_ms <= r.median_ms);
  CHECK(r.median_ms <= r.p95_ms);

  CHECK_THROWS_AS(aft::bench_latency("bad", [] {}, 9, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(aft::bench_latency("bad", [] {}, 10, -1),
                  std::invalid_argument);

  const std::string line = aft::render_text(r);
  CHECK(line.find("median") != std::string::npos);
  const auto j = aft::to_json(r);
  CHECK(j["iterations"].get<int>() == 10);
}
