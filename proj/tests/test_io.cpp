#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "aft/counting.hpp"
#include "aft/io.hpp"
#include "aft/manifest.hpp"
#include "aft/pyramid.hpp"

using aft::Dims;
using aft::Tensor;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("aft-io-test-" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const {
    return (path / name).string();
  }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename S>
Tensor<S> rnd(Dims d, std::uint64_t seed) {
  aft::CounterRng rng(seed, "io.rnd");
  return Tensor<S>::uniform(d, rng, -2.0, 2.0);
}

// counting scope is projections + neck, so serialize exactly those
struct CountingScope {
  using Scalar = float;
  aft::Projections<float> proj;
  aft::NeckGraph<float> neck;
  template <typename F>
  void visit(F&& f) const {
    proj.visit(f);
    neck.visit(f);
  }
};

}  // namespace

TEST_CASE("tensor files round trip byte for byte") {
  TempDir tmp;
  const auto t64 = rnd<double>(Dims{2, 3, 4, 5}, 1);
  const std::string p = tmp.file("a.aft");
  aft::write_tensor(p, t64);
  const auto loaded = aft::read_tensor(p);
  REQUIRE(std::holds_alternative<Tensor<double>>(loaded));
  CHECK(std::get<Tensor<double>>(loaded).same_values(t64));

  const std::string p2 = tmp.file("b.aft");
  aft::write_tensor(p2, std::get<Tensor<double>>(loaded));
  CHECK(slurp(p) == slurp(p2));

  const auto t32 = rnd<float>(Dims{1, 1, 2, 2}, 2);
  const std::string q = tmp.file("c.aft");
  aft::write_tensor(q, t32);
  const auto back = aft::read_tensor(q);
  REQUIRE(std::holds_alternative<Tensor<float>>(back));
  CHECK(std::get<Tensor<float>>(back).same_values(t32));

  // header layout: magic, kind, rank, 4 dims of 8 bytes, then payload
  const std::string bytes = slurp(q);
  CHECK(bytes.size() == 4 + 1 + 1 + 32 + 4 * 4);
  CHECK(bytes.substr(0, 4) == "AFT1");
  CHECK(bytes[4] == 0);
  CHECK(bytes[5] == 4);
}

TEST_CASE("tensor files with negative zero and denormals survive") {
  Tensor<double> t(Dims{1, 1, 1, 4});
  t[0] = -0.0;
  t[1] = std::numeric_limits<double>::denorm_min();
  t[2] = -std::numeric_limits<double>::max();
  t[3] = 0.1;
  TempDir tmp;
  const std::string p = tmp.file("z.aft");
  aft::write_tensor(p, t);
  const auto r = std::get<Tensor<double>>(aft::read_tensor(p));
  CHECK(std::signbit(r[0]));
  CHECK(r[1] == std::numeric_limits<double>::denorm_min());
  CHECK(r[2] == -std::numeric_limits<double>::max());
  CHECK(r[3] == 0.1);
}

TEST_CASE("tensor reader rejects malformed files") {
  TempDir tmp;
  const std::string p = tmp.file("bad.aft");

  spit(p, "NOPE");
  CHECK_THROWS_WITH_AS(aft::read_tensor(p), doctest::Contains("magic"),
                       std::runtime_error);

  spit(p, "AFT1");
  CHECK_THROWS_WITH_AS(aft::read_tensor(p), doctest::Contains("truncated"),
                       std::runtime_error);

  std::string bytes = slurp(tmp.file("bad.aft"));
  {
    const auto t = rnd<float>(Dims{1, 1, 1, 1}, 3);
    aft::write_tensor(p, t);
    bytes = slurp(p);
  }
  bytes[4] = 7;  // unknown scalar kind
  spit(p, bytes);
  CHECK_THROWS_WITH_AS(aft::read_tensor(p), doctest::Contains("kind"),
                       std::runtime_error);

  bytes[4] = 0;
  bytes[5] = 3;  // unsupported rank
  spit(p, bytes);
  CHECK_THROWS_WITH_AS(aft::read_tensor(p), doctest::Contains("rank"),
                       std::runtime_error);

  bytes[5] = 4;
  spit(p, bytes + "xx");  // trailing garbage
  CHECK_THROWS_WITH_AS(aft::read_tensor(p), doctest::Contains("trailing"),
                       std::runtime_error);

  CHECK_THROWS_WITH_AS(aft::read_tensor(tmp.file("missing.aft")),
                       doctest::Contains("cannot open"), std::runtime_error);
}

TEST_CASE("checkpoints round trip models byte for byte") {
  TempDir tmp;
  aft::NeckConfig cfg;
  cfg.hidden_dim = 8;
  cfg.input_size = 64;
  cfg.seed = 11;
  auto model = aft::FullModel<float>::make(cfg);

  const std::string p = tmp.file("m.ckpt");
  aft::save_checkpoint(p, model);

  aft::NeckConfig cfg2 = cfg;
  cfg2.seed = 99;  // different init, then overwritten by the load
  auto model2 = aft::FullModel<float>::make(cfg2);
  aft::load_checkpoint_into(p, model2);

  const std::string q = tmp.file("m2.ckpt");
  aft::save_checkpoint(q, model2);
  CHECK(slurp(p) == slurp(q));

  // loaded model computes the same outputs
  aft::CounterRng rng(5, "img");
  const auto img = Tensor<float>::uniform(Dims{1, 3, 64, 64}, rng, 0, 1);
  const auto a = model.forward(img);
  const auto b = model2.forward(img);
  for (int i = 0; i < 3; ++i) CHECK(a[i].same_values(b[i]));
}

TEST_CASE("checkpoint datatype, shape and name mismatches are named") {
  TempDir tmp;
  aft::NeckConfig cfg;
  cfg.hidden_dim = 8;
  cfg.input_size = 64;
  const auto model64 = aft::FullModel<double>::make(cfg);
  const std::string p = tmp.file("m64.ckpt");
  aft::save_checkpoint(p, model64);

  auto model32 = aft::FullModel<float>::make(cfg);
  CHECK_THROWS_WITH_AS(aft::load_checkpoint_into(p, model32),
                       doctest::Contains("scalar type"), std::runtime_error);

  aft::NeckConfig wider = cfg;
  wider.hidden_dim = 16;
  auto model_wide = aft::FullModel<double>::make(wider);
  CHECK_THROWS_WITH_AS(aft::load_checkpoint_into(p, model_wide),
                       doctest::Contains("proj.p3.weight"),
                       std::runtime_error);

  // truncated entry list
  aft::NeckGraph<double> neck_only = aft::NeckGraph<double>::build(cfg);
  const std::string q = tmp.file("neck.ckpt");
  aft::save_checkpoint(q, neck_only);
  auto full = aft::FullModel<double>::make(cfg);
  CHECK_THROWS_AS(aft::load_checkpoint_into(q, full), std::runtime_error);
}

TEST_CASE("checkpoint parameter count equals the count report") {
  aft::NeckConfig cfg;
  cfg.hidden_dim = 16;
  cfg.input_size = 64;
  TempDir tmp;

  CountingScope scope{aft::Projections<float>::make(aft::kBackboneOutChannels,
                                                    cfg.hidden_dim, cfg.seed),
                      aft::NeckGraph<float>::build(cfg)};

  const std::string p = tmp.file("scope.ckpt");
  aft::save_checkpoint(p, scope);
  const auto data = aft::read_checkpoint(p);

  std::int64_t scalars = 0;
  for (const auto& [name, t] : data)
    scalars += std::visit([](const auto& x) { return x.size(); }, t);
  CHECK(scalars == aft::count_pyramid(cfg).total_params);
}

TEST_CASE("pnm images load as (1,3,h,w) in [0,1]") {
  TempDir tmp;

  const std::string ppm = tmp.file("img.ppm");
  // 2x2 P6: red, green, blue, white
  spit(ppm, std::string("P6\n2 2\n255\n") +
                std::string("\xff\x00\x00\x00\xff\x00\x00\x00\xff\xff\xff\xff",
                            12));
  const auto img = aft::load_image_pnm<double>(ppm);
  REQUIRE(img.dims() == Dims{1, 3, 2, 2});
  CHECK(img.at(0, 0, 0, 0) == 1.0);
  CHECK(img.at(0, 1, 0, 0) == 0.0);
  CHECK(img.at(0, 1, 0, 1) == 1.0);
  CHECK(img.at(0, 2, 1, 0) == 1.0);
  CHECK(img.at(0, 0, 1, 1) == 1.0);
  CHECK(img.at(0, 1, 1, 1) == 1.0);
  CHECK(img.at(0, 2, 1, 1) == 1.0);

  const std::string pgm = tmp.file("img.pgm");
  spit(pgm, std::string("P5\n# comment line\n2 1\n255\n") +
                std::string("\x00\x80", 2));
  const auto gray = aft::load_image_pnm<float>(pgm);
  REQUIRE(gray.dims() == Dims{1, 3, 1, 2});
  for (int c = 0; c < 3; ++c) {
    CHECK(gray.at(0, c, 0, 0) == 0.0f);
    CHECK(gray.at(0, c, 0, 1) == doctest::Approx(128.0f / 255.0f));
  }
}

TEST_CASE("pnm loader rejects what it does not support") {
  TempDir tmp;
  const std::string p = tmp.file("img.pnm");

  spit(p, "P3\n1 1\n255\n255 0 0\n");
  CHECK_THROWS_WITH_AS(aft::load_image_pnm<float>(p),
                       doctest::Contains("P3"), std::runtime_error);

  spit(p, std::string("P5\n1 1\n65535\n") + std::string("\x00\x00", 2));
  CHECK_THROWS_WITH_AS(aft::load_image_pnm<float>(p),
                       doctest::Contains("maxval"), std::runtime_error);

  spit(p, "P6\n4 4\n255\n\x01\x02");
  CHECK_THROWS_WITH_AS(aft::load_image_pnm<float>(p),
                       doctest::Contains("truncated"), std::runtime_error);

  spit(p, "P6\nnope\n");
  CHECK_THROWS_AS(aft::load_image_pnm<float>(p), std::runtime_error);
}

TEST_CASE("manifests are deterministic") {
  aft::RunManifest m;
  m.command = "forward";
  m.precision = "f32";
  m.config = aft::NeckConfig{};
  m.input = "synthetic:1x320x320";
  m.outputs.emplace_back("n3.aft", Dims{1, 64, 40, 40});

  TempDir tmp;
  const std::string a = tmp.file("a.json");
  const std::string b = tmp.file("b.json");
  m.write(a);
  m.write(b);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a).find("\"command\": \"forward\"") != std::string::npos);

  const auto j = m.to_json();
  CHECK(j["outputs"][0]["dims"][1].get<int>() == 64);
}

TEST_CASE("atomic write leaves no temp file behind") {
  TempDir tmp;
  const std::string p = tmp.file("t.aft");
  aft::write_tensor(p, rnd<float>(Dims{1, 1, 2, 2}, 9));
  CHECK(fs::exists(p));
  CHECK_FALSE(fs::exists(p + ".tmp"));
}
