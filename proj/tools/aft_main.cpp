// Command-line front end for the feature pyramid: forward runs, gradient
// checking, parameter/FLOP accounting, latency benchmarks and config
// inspection. Exit codes: 0 success, 1 verification failure, 2 usage or
// config error.

#include <CLI11.hpp>
#include <array>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "aft/bench.hpp"
#include "aft/counting.hpp"
#include "aft/io.hpp"
#include "aft/manifest.hpp"
#include "aft/pyramid.hpp"
#include "aft/tape.hpp"
#include "aft/version.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFail = 1;
constexpr int kExitUsage = 2;

struct GlobalOpts {
  std::string config_path;
  std::string precision = "f32";
  std::string json_path;
  std::optional<std::uint64_t> seed;
};

aft::NeckConfig resolve_config(const GlobalOpts& g) {
  aft::NeckConfig cfg;
  if (!g.config_path.empty()) cfg = aft::load_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void write_json_file(const std::string& path, const nlohmann::ordered_json& j) {
  aft::detail::write_file_atomic(path, j.dump(2) + "\n");
}

/// Parses a synthetic input spec "NxHxW" into image dims.
aft::Dims parse_synthetic(const std::string& spec) {
  std::int64_t vals[3];
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    std::size_t used = 0;
    try {
      vals[i] = std::stoll(spec.substr(pos), &used);
    } catch (const std::exception&) {
      aft::fail("synthetic spec '", spec, "' must look like 1x320x320");
    }
    pos += used;
    if (i < 2) {
      if (pos >= spec.size() || spec[pos] != 'x')
        aft::fail("synthetic spec '", spec, "' must look like 1x320x320");
      ++pos;
    }
  }
  if (pos != spec.size() || vals[0] < 1 || vals[1] < 1 || vals[2] < 1)
    aft::fail("synthetic spec '", spec, "' must be three positive sizes");
  return aft::Dims{vals[0], 3, vals[1], vals[2]};
}

struct ForwardOpts {
  std::string image_path;
  std::string tensor_path;
  std::string synthetic;
  std::string out_dir = "aft-out";
  std::string checkpoint;
  std::string save_checkpoint;
};

template <typename S>
int run_forward(const GlobalOpts& g, const ForwardOpts& fo) {
  const aft::NeckConfig cfg = resolve_config(g);
  const int sources = (fo.image_path.empty() ? 0 : 1) +
                      (fo.tensor_path.empty() ? 0 : 1) +
                      (fo.synthetic.empty() ? 0 : 1);
  if (sources > 1)
    aft::fail("choose one input: --image, --tensor or --synthetic");

  aft::Tensor<S> image;
  std::string input_desc;
  if (!fo.image_path.empty()) {
    image = aft::load_image_pnm<S>(fo.image_path);
    input_desc = "image:" + fo.image_path;
  } else if (!fo.tensor_path.empty()) {
    image = aft::tensor_as<S>(aft::read_tensor(fo.tensor_path));
    input_desc = "tensor:" + fo.tensor_path;
  } else {
    const std::string spec =
        fo.synthetic.empty()
            ? "1x" + std::to_string(cfg.input_size) + "x" +
                  std::to_string(cfg.input_size)
            : fo.synthetic;
    aft::CounterRng rng(cfg.seed, "input.synthetic");
    image = aft::Tensor<S>::uniform(parse_synthetic(spec), rng, 0.0, 1.0);
    input_desc = "synthetic:" + spec;
  }

  auto model = aft::FullModel<S>::make(cfg);
  if (!fo.checkpoint.empty()) aft::load_checkpoint_into(fo.checkpoint, model);

  const auto outs = model.forward(image);

  std::filesystem::create_directories(fo.out_dir);
  const char* names[3] = {"n3.aft", "n4.aft", "n5.aft"};
  aft::RunManifest manifest;
  manifest.command = "forward";
  manifest.precision = g.precision;
  manifest.config = cfg;
  manifest.input = input_desc;
  for (int i = 0; i < 3; ++i) {
    const std::string path = fo.out_dir + "/" + names[i];
    aft::write_tensor(path, outs[i]);
    manifest.outputs.emplace_back(names[i], outs[i].dims());
    std::cout << names[i] << "  " << outs[i].dims().str() << "\n";
  }
  manifest.write(fo.out_dir + "/manifest.json");
  if (!fo.save_checkpoint.empty()) aft::save_checkpoint(fo.save_checkpoint, model);
  if (!g.json_path.empty()) write_json_file(g.json_path, manifest.to_json());
  std::cout << "wrote " << fo.out_dir << "/manifest.json\n";
  return kExitOk;
}

struct GradcheckOpts {
  double eps = 1e-6;
  double tol = 1e-4;
  std::string corrupt;
};

struct Fixture {
  std::string label;
  std::function<aft::ValueId(aft::Tape<double>&, aft::BindList&)> build;
};

/// Small graphs exercising every op and block. Extents are fixed tiny so the
/// central-difference sweep over each parameter finishes in seconds; the
/// config contributes its toggles via the full-neck fixture.
std::vector<Fixture> gradcheck_suite(const aft::NeckConfig& cfg) {
  using aft::BindList;
  using aft::Dims;
  using aft::Tape;
  using aft::Tensor;
  using aft::ValueId;

  auto rnd = [](Dims d, const std::string& name) {
    aft::CounterRng rng(99, name);
    return Tensor<double>::uniform(d, rng, -1.0, 1.0);
  };
  auto bound_leaf = [](Tape<double>& t, BindList& b, const std::string& name,
                       Tensor<double> v) {
    ValueId id = t.leaf(std::move(v));
    b.push_back({name, id});
    return id;
  };

  std::vector<Fixture> fx;

  fx.push_back({"op.conv2d", [=](Tape<double>& t, BindList& b) {
    aft::ConvSpec sp;
    sp.in_channels = 3;
    sp.out_channels = 4;
    sp.kh = sp.kw = 3;
    sp.stride = 2;
    sp.padding = 2;
    sp.dilation = 2;
    sp.activation = aft::Activation::Silu;
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{2, 3, 7, 6}, "gc.conv.x"));
    ValueId w = bound_leaf(t, b, "weight",
                           rnd(sp.weight_dims(), "gc.conv.w"));
    ValueId bias = bound_leaf(t, b, "bias", rnd(sp.bias_dims(), "gc.conv.b"));
    return t.conv2d(x, sp, w, bias);
  }});

  fx.push_back({"op.conv_transpose2d", [=](Tape<double>& t, BindList& b) {
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{2, 3, 4, 3}, "gc.deconv.x"));
    ValueId w = bound_leaf(t, b, "weight", rnd(Dims{3, 4, 2, 2}, "gc.deconv.w"));
    ValueId bias = bound_leaf(t, b, "bias", rnd(Dims{1, 4, 1, 1}, "gc.deconv.b"));
    return t.conv_transpose2d(x, w, bias, 2, 2);
  }});

  fx.push_back({"op.maxpool2d", [=](Tape<double>& t, BindList& b) {
    return t.maxpool2d(bound_leaf(t, b, "x", rnd(Dims{2, 3, 6, 4}, "gc.pool.x")));
  }});

  fx.push_back({"op.global_avgpool", [=](Tape<double>& t, BindList& b) {
    return t.global_avgpool(
        bound_leaf(t, b, "x", rnd(Dims{2, 3, 5, 4}, "gc.gap.x")));
  }});

  fx.push_back({"op.upsample_nearest", [=](Tape<double>& t, BindList& b) {
    return t.upsample_nearest2x(
        bound_leaf(t, b, "x", rnd(Dims{2, 3, 3, 4}, "gc.up.x")));
  }});

  fx.push_back({"op.concat_channels", [=](Tape<double>& t, BindList& b) {
    ValueId a = bound_leaf(t, b, "a", rnd(Dims{2, 2, 3, 3}, "gc.cat.a"));
    ValueId c = bound_leaf(t, b, "b", rnd(Dims{2, 3, 3, 3}, "gc.cat.b"));
    return t.concat_channels({a, c});
  }});

  fx.push_back({"op.mul_broadcast", [=](Tape<double>& t, BindList& b) {
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{2, 3, 4, 4}, "gc.mul.x"));
    ValueId gate = bound_leaf(t, b, "gate", rnd(Dims{2, 3, 1, 1}, "gc.mul.g"));
    return t.mul_broadcast(x, gate);
  }});

  fx.push_back({"op.sigmoid", [=](Tape<double>& t, BindList& b) {
    return t.sigmoid(bound_leaf(t, b, "x", rnd(Dims{2, 3, 4, 4}, "gc.sig.x")));
  }});

  fx.push_back({"op.silu", [=](Tape<double>& t, BindList& b) {
    return t.silu(bound_leaf(t, b, "x", rnd(Dims{2, 3, 4, 4}, "gc.silu.x")));
  }});

  auto bind_block = [](Tape<double>& t, BindList& b, auto& block,
                       aft::ValueId x) {
    return block.forward(t, x, &b);
  };

  fx.push_back({"block.channel_gate", [=](Tape<double>& t, BindList& b) {
    auto gate = aft::GateParams<double>::make("gate", 6, 5);
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{1, 6, 4, 4}, "gc.gate.x"));
    return bind_block(t, b, gate, x);
  }});

  fx.push_back({"block.attention_upsample", [=](Tape<double>& t, BindList& b) {
    auto au = aft::AuParams<double>::make("au", 6, 5);
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{1, 6, 3, 3}, "gc.au.x"));
    return bind_block(t, b, au, x);
  }});

  fx.push_back({"block.attention_downsample", [=](Tape<double>& t, BindList& b) {
    auto ad = aft::AdParams<double>::make("ad", 6, 5);
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{1, 6, 4, 4}, "gc.ad.x"));
    return bind_block(t, b, ad, x);
  }});

  fx.push_back({"block.pac", [=](Tape<double>& t, BindList& b) {
    auto pac = aft::PacParams<double>::make("pac", 4, 5);
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{1, 4, 7, 7}, "gc.pac.x"));
    return bind_block(t, b, pac, x);
  }});

  fx.push_back({"block.csp_pac", [=](Tape<double>& t, BindList& b) {
    auto csp = aft::CspFuseParams<double>::make("csp", 6, 3, 4, true, 5);
    ValueId x = bound_leaf(t, b, "x", rnd(Dims{1, 6, 7, 7}, "gc.csp.x"));
    return bind_block(t, b, csp, x);
  }});

  aft::NeckConfig tiny = cfg;
  tiny.hidden_dim = 8;
  tiny.input_size = 64;
  fx.push_back({"neck.full", [=](Tape<double>& t, BindList& b) {
    auto neck = aft::NeckGraph<double>::build(tiny);
    ValueId p3 = bound_leaf(t, b, "p3", rnd(Dims{1, 8, 8, 8}, "gc.neck.p3"));
    ValueId p4 = bound_leaf(t, b, "p4", rnd(Dims{1, 8, 4, 4}, "gc.neck.p4"));
    ValueId p5 = bound_leaf(t, b, "p5", rnd(Dims{1, 8, 2, 2}, "gc.neck.p5"));
    auto outs = neck.forward(t, p3, p4, p5, &b);
    return t.concat_channels({outs[0],
                              t.upsample_nearest2x(outs[1]),
                              t.upsample_nearest2x(t.upsample_nearest2x(outs[2]))});
  }});

  return fx;
}

int run_gradcheck(const GlobalOpts& g, const GradcheckOpts& go) {
  const aft::NeckConfig cfg = resolve_config(g);
  auto suite = gradcheck_suite(cfg);

  bool corrupt_matched = go.corrupt.empty();
  std::cout << "gradcheck: eps " << go.eps << ", tol " << go.tol
            << ", f64 central differences\n";
  std::cout << std::left << std::setw(28) << "target" << std::right
            << std::setw(10) << "checked" << std::setw(14) << "max_rel_err"
            << "  status\n";

  nlohmann::ordered_json jout;
  jout["eps"] = go.eps;
  jout["tol"] = go.tol;
  jout["targets"] = nlohmann::ordered_json::array();

  bool all_pass = true;
  for (const auto& fx : suite) {
    aft::GradCheckOptions opt;
    opt.eps = go.eps;
    opt.tol = go.tol;
    if (!go.corrupt.empty()) {
      aft::Tape<double> probe;
      aft::BindList bound;
      fx.build(probe, bound);
      for (const auto& bv : bound)
        if (bv.name == go.corrupt) {
          opt.corrupt_param = go.corrupt;
          corrupt_matched = true;
          break;
        }
    }
    const aft::GradCheckReport rep = aft::gradcheck(fx.build, opt);
    std::int64_t checked = 0;
    for (const auto& e : rep.entries) checked += e.checked;
    const bool pass = rep.pass();
    all_pass = all_pass && pass;
    std::cout << std::left << std::setw(28) << fx.label << std::right
              << std::setw(10) << checked << std::setw(14)
              << std::scientific << std::setprecision(2) << rep.max_rel_err
              << std::defaultfloat << "  " << (pass ? "pass" : "FAIL");
    if (!pass) {
      double worst = -1.0;
      std::string worst_name;
      for (const auto& e : rep.entries)
        if (e.max_rel_err > worst) {
          worst = e.max_rel_err;
          worst_name = e.name;
        }
      std::cout << "  (worst: " << worst_name << ")";
    }
    std::cout << "\n";
    nlohmann::ordered_json jt;
    jt["target"] = fx.label;
    jt["checked"] = checked;
    jt["max_rel_err"] = rep.max_rel_err;
    jt["pass"] = pass;
    jout["targets"].push_back(jt);
  }
  if (!corrupt_matched)
    aft::fail("--corrupt-param '", go.corrupt,
              "' does not name any checked parameter");

  jout["pass"] = all_pass;
  if (!g.json_path.empty()) write_json_file(g.json_path, jout);
  std::cout << (all_pass ? "gradcheck passed" : "gradcheck FAILED") << "\n";
  return all_pass ? kExitOk : kExitVerifyFail;
}

int run_count(const GlobalOpts& g, const std::string& baseline_path) {
  const aft::NeckConfig cfg = resolve_config(g);
  if (baseline_path.empty()) {
    const aft::CountReport rep = aft::count_pyramid(cfg);
    std::cout << aft::render_text(rep);
    if (!g.json_path.empty()) write_json_file(g.json_path, aft::to_json(rep));
    return kExitOk;
  }
  aft::NeckConfig base = aft::load_config(baseline_path);
  if (g.seed) base.seed = *g.seed;
  const aft::DeltaReport rep = aft::delta_report(base, cfg);
  std::cout << aft::render_text(rep);
  if (!g.json_path.empty()) write_json_file(g.json_path, aft::to_json(rep));
  return kExitOk;
}

template <typename S>
int run_bench(const GlobalOpts& g, int iters, int warmup) {
  const aft::NeckConfig cfg = resolve_config(g);
  const auto ext = cfg.level_extents();

  auto proj = aft::Projections<S>::make(aft::kBackboneOutChannels,
                                        cfg.hidden_dim, cfg.seed);
  auto neck = aft::NeckGraph<S>::build(cfg);

  aft::Tape<S> tape;
  aft::CounterRng rng(cfg.seed, "bench.features");
  std::array<aft::ValueId, 3> feats{};
  for (int i = 0; i < 3; ++i)
    feats[i] = tape.leaf(aft::Tensor<S>::uniform(
        aft::Dims{1, aft::kBackboneOutChannels[i], ext[i], ext[i]}, rng, -1.0,
        1.0));
  auto p = proj.forward(tape, feats[0], feats[1], feats[2]);
  neck.forward(tape, p[0], p[1], p[2]);

  std::ostringstream label;
  label << "pyramid " << cfg.input_size << "x" << cfg.input_size << " hidden "
        << cfg.hidden_dim << " au=" << (cfg.use_au ? "on" : "off")
        << " ad=" << (cfg.use_ad ? "on" : "off")
        << " csp_pac=" << (cfg.use_csp_pac ? "on" : "off") << " " << g.precision;
  const aft::BenchResult r = aft::bench_latency(
      label.str(), [&] { tape.recompute(); }, iters, warmup);
  std::cout << aft::render_text(r) << "\n";
  if (!g.json_path.empty()) write_json_file(g.json_path, aft::to_json(r));
  return kExitOk;
}

int run_dump_config(const GlobalOpts& g) {
  const aft::NeckConfig cfg = resolve_config(g);
  const auto j = aft::config_to_json(cfg);
  std::cout << j.dump(2) << "\n";
  if (!g.json_path.empty()) write_json_file(g.json_path, j);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature pyramid tool: forward runs, gradient checks, "
               "parameter/FLOP counts, latency benchmarks"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  std::uint64_t seed_val = 0;
  app.add_option("--config", g.config_path, "JSON config file");
  auto* seed_opt =
      app.add_option("--seed", seed_val, "override the config seed");
  app.add_option("--precision", g.precision, "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--json", g.json_path, "also write results as JSON here");

  auto* fwd = app.add_subcommand("forward", "run the pyramid and save N3/N4/N5");
  ForwardOpts fo;
  fwd->add_option("--image", fo.image_path, "binary PGM/PPM input image");
  fwd->add_option("--tensor", fo.tensor_path, "tensor file input (n,3,h,w)");
  fwd->add_option("--synthetic", fo.synthetic,
                  "seeded random input, NxHxW (default 1x<input_size>^2)");
  fwd->add_option("--out", fo.out_dir, "output directory (default aft-out)");
  fwd->add_option("--checkpoint", fo.checkpoint, "load parameters before running");
  fwd->add_option("--save-checkpoint", fo.save_checkpoint,
                  "save parameters after running");

  auto* gc = app.add_subcommand(
      "gradcheck", "finite-difference check of every op and block (f64)");
  GradcheckOpts go;
  gc->add_option("--eps", go.eps, "central difference step (default 1e-6)");
  gc->add_option("--tol", go.tol, "max relative error allowed (default 1e-4)");
  gc->add_option("--corrupt-param", go.corrupt,
                 "scale this parameter's analytic gradient by 1.5x to prove "
                 "the check catches bad gradients");

  auto* cnt = app.add_subcommand("count", "parameter and FLOP table");
  std::string baseline_path;
  cnt->add_option("--baseline", baseline_path,
                  "second config; prints the delta (config minus baseline)");

  auto* bn = app.add_subcommand("bench", "single-thread forward latency");
  int iters = 30, warmup = 5;
  bn->add_option("--iters", iters, "measured iterations, >= 10 (default 30)");
  bn->add_option("--warmup", warmup, "warmup iterations (default 5)");

  auto* dc = app.add_subcommand("dump-config", "print the effective config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed_val;

  try {
    if (*fwd)
      return g.precision == "f64" ? run_forward<double>(g, fo)
                                  : run_forward<float>(g, fo);
    if (*gc) return run_gradcheck(g, go);
    if (*cnt) return run_count(g, baseline_path);
    if (*bn)
      return g.precision == "f64" ? run_bench<double>(g, iters, warmup)
                                  : run_bench<float>(g, iters, warmup);
    if (*dc) return run_dump_config(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
