#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "aft/pyramid.hpp"
#include "support/oracles.hpp"

using aft::Dims;
using aft::NeckConfig;
using aft::NeckGraph;
using aft::Tensor;

namespace {

Tensor<double> rnd(Dims d, std::uint64_t seed) {
  aft::CounterRng rng(seed, "pyr.rnd");
  return Tensor<double>::uniform(d, rng, -1.0, 1.0);
}

NeckConfig tiny_config() {
  NeckConfig cfg;
  cfg.hidden_dim = 4;
  cfg.input_size = 64;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects bad values with real messages") {
  NeckConfig cfg;
  cfg.hidden_dim = 7;
  CHECK_THROWS_WITH_AS(cfg.validate(),
                       doctest::Contains("hidden_dim must be even"),
                       std::invalid_argument);
  cfg.hidden_dim = 2;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("hidden_dim"),
                       std::invalid_argument);
  cfg.hidden_dim = 64;
  cfg.input_size = 100;
  CHECK_THROWS_WITH_AS(cfg.validate(),
                       doctest::Contains("multiple of 32"),
                       std::invalid_argument);
  cfg.input_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.input_size = 320;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config json round trip and rejection of unknown keys") {
  const auto j = nlohmann::json::parse(
      R"({"hidden_dim": 32, "input_size": 64, "use_au": false,
          "use_ad": true, "use_csp_pac": false, "seed": 9})");
  const NeckConfig cfg = aft::config_from_json(j);
  CHECK(cfg.hidden_dim == 32);
  CHECK(cfg.input_size == 64);
  CHECK_FALSE(cfg.use_au);
  CHECK(cfg.use_ad);
  CHECK_FALSE(cfg.use_csp_pac);
  CHECK(cfg.seed == 9);

  const auto back = aft::config_to_json(cfg);
  CHECK(aft::config_from_json(back).hidden_dim == 32);

  CHECK_THROWS_WITH_AS(
      aft::config_from_json(nlohmann::json::parse(R"({"hiden_dim": 32})")),
      doctest::Contains("hiden_dim"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      aft::config_from_json(nlohmann::json::parse(R"({"use_au": 1})")),
      doctest::Contains("use_au"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      aft::config_from_json(nlohmann::json::parse(R"({"seed": -4})")),
      doctest::Contains("seed"), std::invalid_argument);
  CHECK_THROWS_AS(aft::config_from_json(nlohmann::json::parse("[1,2]")),
                  std::invalid_argument);

  // defaults survive a partial config
  const NeckConfig partial =
      aft::config_from_json(nlohmann::json::parse(R"({"hidden_dim": 8})"));
  CHECK(partial.hidden_dim == 8);
  CHECK(partial.input_size == 320);
  CHECK(partial.use_au);
}

TEST_CASE("neck forward shapes across all toggle combinations") {
  for (bool au : {false, true})
    for (bool ad : {false, true})
      for (bool csp : {false, true}) {
        NeckConfig cfg;
        cfg.hidden_dim = 8;
        cfg.input_size = 64;
        cfg.use_au = au;
        cfg.use_ad = ad;
        cfg.use_csp_pac = csp;
        const auto neck = NeckGraph<double>::build(cfg);
        const auto outs = neck.forward(rnd(Dims{2, 8, 8, 8}, 100),
                                       rnd(Dims{2, 8, 4, 4}, 101),
                                       rnd(Dims{2, 8, 2, 2}, 102));
        CHECK(outs[0].dims() == Dims{2, 8, 8, 8});
        CHECK(outs[1].dims() == Dims{2, 8, 4, 4});
        CHECK(outs[2].dims() == Dims{2, 8, 2, 2});
      }
}

TEST_CASE("neck rejects mis-shaped inputs") {
  NeckConfig cfg;
  cfg.hidden_dim = 8;
  cfg.input_size = 64;
  const auto neck = NeckGraph<double>::build(cfg);
  // wrong channel width
  CHECK_THROWS_AS(neck.forward(rnd(Dims{1, 4, 8, 8}, 110),
                               rnd(Dims{1, 8, 4, 4}, 111),
                               rnd(Dims{1, 8, 2, 2}, 112)),
                  std::invalid_argument);
  // extents that do not halve
  CHECK_THROWS_AS(neck.forward(rnd(Dims{1, 8, 8, 8}, 113),
                               rnd(Dims{1, 8, 6, 6}, 114),
                               rnd(Dims{1, 8, 2, 2}, 115)),
                  std::invalid_argument);
  // batch mismatch
  CHECK_THROWS_AS(neck.forward(rnd(Dims{2, 8, 8, 8}, 116),
                               rnd(Dims{1, 8, 4, 4}, 117),
                               rnd(Dims{1, 8, 2, 2}, 118)),
                  std::invalid_argument);
}

TEST_CASE("projections bring backbone widths to hidden and check halving") {
  auto proj = aft::Projections<double>::make({64, 128, 256}, 16, 5);
  aft::Tape<double> tape;
  auto p3 = tape.leaf(rnd(Dims{1, 64, 16, 16}, 120));
  auto p4 = tape.leaf(rnd(Dims{1, 128, 8, 8}, 121));
  auto p5 = tape.leaf(rnd(Dims{1, 256, 4, 4}, 122));
  const auto out = proj.forward(tape, p3, p4, p5);
  CHECK(tape.value(out[0]).dims() == Dims{1, 16, 16, 16});
  CHECK(tape.value(out[1]).dims() == Dims{1, 16, 8, 8});
  CHECK(tape.value(out[2]).dims() == Dims{1, 16, 4, 4});

  auto bad4 = tape.leaf(rnd(Dims{1, 128, 7, 7}, 123));
  CHECK_THROWS_AS(proj.forward(tape, p3, bad4, p5), std::invalid_argument);
}

TEST_CASE("projection with identity weights passes features through") {
  auto proj = aft::Projections<double>::make({16, 16, 16}, 16, 6);
  auto& blk = proj.convs[0];
  blk.weight.fill(0);
  for (std::int64_t c = 0; c < 16; ++c) blk.weight.at(c, c, 0, 0) = 1;
  blk.bias.fill(0);

  aft::Tape<double> tape;
  const auto x3 = rnd(Dims{1, 16, 8, 8}, 130);
  auto p3 = tape.leaf(x3);
  auto p4 = tape.leaf(rnd(Dims{1, 16, 4, 4}, 131));
  auto p5 = tape.leaf(rnd(Dims{1, 16, 2, 2}, 132));
  const auto out = proj.forward(tape, p3, p4, p5);
  CHECK(tape.value(out[0]).same_values(x3));
}

TEST_CASE("stub backbone produces strides 8/16/32 deterministically") {
  const auto bb = aft::StubBackbone<double>::make(7);
  aft::Tape<double> tape;
  aft::CounterRng rng(1, "img");
  const auto img = Tensor<double>::uniform(Dims{1, 3, 64, 64}, rng, 0, 1);
  const auto feats = bb.forward(tape, tape.leaf(img));
  CHECK(tape.value(feats[0]).dims() == Dims{1, 64, 8, 8});
  CHECK(tape.value(feats[1]).dims() == Dims{1, 128, 4, 4});
  CHECK(tape.value(feats[2]).dims() == Dims{1, 256, 2, 2});

  aft::Tape<double> tape2;
  const auto feats2 = bb.forward(tape2, tape2.leaf(img));
  CHECK(tape.value(feats[2]).same_values(tape2.value(feats2[2])));

  CHECK_THROWS_AS(bb.forward(tape, tape.leaf(rnd(Dims{1, 3, 100, 100}, 140))),
                  std::invalid_argument);
  CHECK_THROWS_AS(bb.forward(tape, tape.leaf(rnd(Dims{1, 1, 64, 64}, 141))),
                  std::invalid_argument);
}

TEST_CASE("full model forward runs end to end at several input sizes") {
  NeckConfig cfg = tiny_config();
  const auto model = aft::FullModel<float>::make(cfg);
  for (std::int64_t s : {32, 64, 96}) {
    aft::CounterRng rng(2, "img");
    const auto img = Tensor<float>::uniform(Dims{1, 3, s, s}, rng, 0, 1);
    const auto outs = model.forward(img);
    CHECK(outs[0].dims() == Dims{1, 4, s / 8, s / 8});
    CHECK(outs[1].dims() == Dims{1, 4, s / 16, s / 16});
    CHECK(outs[2].dims() == Dims{1, 4, s / 32, s / 32});
  }
}

TEST_CASE("information only flows from P5 to N3 through the up path") {
  NeckConfig cfg = tiny_config();
  auto neck = NeckGraph<double>::build(cfg);

  const auto p3 = rnd(Dims{1, 4, 8, 8}, 150);
  const auto p4 = rnd(Dims{1, 4, 4, 4}, 151);
  const auto p5 = rnd(Dims{1, 4, 2, 2}, 152);
  auto p5b = p5;
  p5b.at(0, 1, 1, 1) += 0.5;

  const auto n3_a = neck.forward(p3, p4, p5)[0];
  const auto n3_b = neck.forward(p3, p4, p5b)[0];
  CHECK_FALSE(n3_a.same_values(n3_b));

  // silencing td0 (the P5 -> P4 merge) cuts the only route
  auto& au = std::get<aft::AuParams<double>>(neck.up0);
  au.gate.conv.weight.fill(0);
  au.gate.conv.bias.fill(0);
  au.deconv.weight.fill(0);
  au.deconv.bias.fill(0);
  au.up_conv.weight.fill(0);
  au.up_conv.bias.fill(0);
  const auto n3_c = neck.forward(p3, p4, p5)[0];
  const auto n3_d = neck.forward(p3, p4, p5b)[0];
  CHECK(n3_c.same_values(n3_d));
}

TEST_CASE("tiny full-pyramid gradcheck, all toggle corners") {
  for (bool full : {true, false}) {
    NeckConfig cfg = tiny_config();
    cfg.use_au = cfg.use_ad = cfg.use_csp_pac = full;
    const auto rep =
        aft::gradcheck([cfg](aft::Tape<double>& t, aft::BindList& b) {
          auto neck = NeckGraph<double>::build(cfg);
          auto p3 = t.leaf(rnd(Dims{1, 4, 8, 8}, 160));
          auto p4 = t.leaf(rnd(Dims{1, 4, 4, 4}, 161));
          auto p5 = t.leaf(rnd(Dims{1, 4, 2, 2}, 162));
          b.push_back({"p3", p3});
          b.push_back({"p4", p4});
          b.push_back({"p5", p5});
          const auto outs = neck.forward(t, p3, p4, p5, &b);
          return t.concat_channels(
              {outs[0], t.upsample_nearest2x(outs[1]),
               t.upsample_nearest2x(t.upsample_nearest2x(outs[2]))});
        });
    CHECK(rep.max_rel_err <= 1e-4);
  }
}

TEST_CASE("neck parameter names stay aligned across toggle settings") {
  auto names_of = [](const NeckConfig& cfg) {
    std::vector<std::string> names;
    NeckGraph<double>::build(cfg).visit(
        [&](const std::string& n, const Tensor<double>&) {
          names.push_back(n);
        });
    return names;
  };
  NeckConfig full = tiny_config();
  NeckConfig base = tiny_config();
  base.use_au = base.use_ad = base.use_csp_pac = false;

  const auto fn = names_of(full);
  const auto bn = names_of(base);
  // every baseline stage name prefix also exists in the full graph
  for (const auto& n : bn) {
    const std::string stage = n.substr(0, n.find('.', n.find('.') + 1));
    bool found = false;
    for (const auto& m : fn)
      if (m.rfind(stage, 0) == 0) found = true;
    CHECK_MESSAGE(found, "stage ", stage, " missing from full graph");
  }
}

TEST_CASE("full model visit covers backbone, projections and neck") {
  const auto model = aft::FullModel<float>::make(tiny_config());
  bool saw_backbone = false, saw_proj = false, saw_neck = false;
  model.visit([&](const std::string& n, const Tensor<float>&) {
    saw_backbone = saw_backbone || n.rfind("backbone.", 0) == 0;
    saw_proj = saw_proj || n.rfind("proj.", 0) == 0;
    saw_neck = saw_neck || n.rfind("td0.", 0) == 0;
  });
  CHECK(saw_backbone);
  CHECK(saw_proj);
  CHECK(saw_neck);
}
