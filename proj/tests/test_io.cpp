#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "maskattn/checkpoint.hpp"
#include "maskattn/config.hpp"
#include "maskattn/image_io.hpp"
#include "maskattn/rng.hpp"
#include "support/oracles.hpp"

using namespace maskattn;

namespace {

diff::UNetGeometry tiny_geo() {
  diff::UNetGeometry g;
  g.latent_hw = 4;
  g.latent_ch = 1;
  g.c_stem = 2;
  g.c_down = 3;
  g.d_model = 4;
  g.n_heads = 1;
  g.n_sites = 1;
  g.n_tokens = 2;
  g.vocab = 5;
  return g;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("empty config text yields the defaults") {
  cfg::RunConfig c = cfg::parse_config("");
  cfg::RunConfig d;
  CHECK(c.seed == d.seed);
  CHECK(c.latent_hw == d.latent_hw);
  CHECK(c.t_steps == d.t_steps);
  CHECK(c.lr_peak == d.lr_peak);
  CHECK(c.gate_mode == cfg::GateChoice::auto_mode);
  CHECK(cfg::to_text(c) == cfg::to_text(d));
  c.validate();
}

TEST_CASE("config keys parse into their fields") {
  cfg::RunConfig c = cfg::parse_config(
      "# a comment\n"
      "\n"
      "seed = 99\n"
      "latent_hw=8\n"
      "t_steps = 50\n"
      "beta_end = 0.03\n"
      "gate_mode = learned\n"
      "out_dir = scratch\n"
      "batch=2\n");
  CHECK(c.seed == 99);
  CHECK(c.latent_hw == 8);
  CHECK(c.t_steps == 50);
  CHECK(c.beta_end == 0.03);
  CHECK(c.gate_mode == cfg::GateChoice::learned);
  CHECK(c.out_dir == "scratch");
  CHECK(c.batch == 2);
  c.validate();
}

TEST_CASE("config rejects typos, repeats, and junk with line numbers") {
  CHECK_THROWS_AS(cfg::parse_config("sede=1\n"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::parse_config("seed=1\nseed=2\n"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::parse_config("seed\n"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::parse_config("=5\n"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::parse_config("batch=two\n"), std::invalid_argument);
  try {
    cfg::parse_config("seed=1\nbatch=two\n");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg::parse_gate_choice("open"), std::invalid_argument);
  CHECK_THROWS_AS(cfg::load_config("/nonexistent/path.cfg"), std::invalid_argument);

  cfg::RunConfig bad;
  bad.latent_hw = 6;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg::RunConfig{};
  bad.t_steps = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg::RunConfig{};
  bad.batch = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg::RunConfig{};
  bad.clip_norm = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("canonical text round-trips and leaves the output directory out") {
  cfg::RunConfig c;
  c.seed = 777;
  c.beta_end = 0.025;
  c.lambda_train = 12.5;
  c.gate_mode = cfg::GateChoice::forced_open;
  c.out_dir = "somewhere/else";

  std::string text = cfg::to_text(c);
  CHECK(text.find("out_dir") == std::string::npos);
  CHECK(text.find("somewhere") == std::string::npos);

  cfg::RunConfig back = cfg::parse_config(text);
  CHECK(back.seed == c.seed);
  CHECK(back.beta_end == c.beta_end);
  CHECK(back.lambda_train == c.lambda_train);
  CHECK(back.gate_mode == c.gate_mode);
  CHECK(back.out_dir == "out");  // the default, not the original
  CHECK(cfg::to_text(back) == text);

  // moving artifacts must not change what counts as "the same run"
  cfg::RunConfig moved = c;
  moved.out_dir = "third/place";
  CHECK(cfg::to_text(moved) == text);
}

TEST_CASE("gate choices map to modes and lambdas") {
  for (auto choice : {cfg::GateChoice::auto_mode, cfg::GateChoice::off,
                      cfg::GateChoice::forced_open, cfg::GateChoice::learned})
    CHECK(cfg::parse_gate_choice(cfg::gate_choice_name(choice)) == choice);

  cfg::RunConfig c;
  CHECK(c.resolved_gate_mode(gate::GateMode::forced_open) == gate::GateMode::forced_open);
  CHECK(c.resolved_gate_mode(gate::GateMode::learned) == gate::GateMode::learned);
  c.gate_mode = cfg::GateChoice::off;
  CHECK(c.resolved_gate_mode(gate::GateMode::learned) == gate::GateMode::off);

  c.gate_mode = cfg::GateChoice::learned;
  attn::GateRun train = c.gate_run(gate::GateMode::forced_open, false);
  CHECK(train.mode == gate::GateMode::learned);
  CHECK(train.lambda == c.lambda_train);
  attn::GateRun infer = c.gate_run(gate::GateMode::forced_open, true);
  CHECK(infer.lambda == c.lambda_infer);
}

TEST_CASE("pixel quantization clamps then rounds") {
  Tensor t = Tensor::zeros({3, 1, 2});
  double vals[] = {0.0, 1.0, 0.5, -0.2, 1.7, 128.4 / 255.0};
  std::copy(std::begin(vals), std::end(vals), t.data().begin());
  img::Image8 im = img::planes_to_rgb8(t);
  CHECK(im.width == 2);
  CHECK(im.height == 1);
  CHECK(im.channels == 3);
  // interleaved rgb per pixel: pixel 0 gets planes {0.0, 0.5, 1.7}
  CHECK(im.pixels == std::vector<std::uint8_t>{0, 128, 255, 255, 0, 128});
  CHECK_THROWS_AS(img::planes_to_rgb8(Tensor::zeros({1, 2, 2})), std::invalid_argument);

  Tensor z = Tensor::zeros({1, 1, 4});
  z.data() = {-1.0, 1.0, 0.0, -3.0};
  Tensor imgd = img::latent_to_image(z);
  CHECK(imgd.data() == std::vector<double>{0.0, 1.0, 0.5, 0.0});
}

TEST_CASE("image files read back exactly what was written") {
  std::string dir = oracle::temp_dir("img");
  Rng rng(801);
  img::Image8 rgb;
  rgb.width = 5;
  rgb.height = 4;
  rgb.channels = 3;
  for (int i = 0; i < 60; ++i)
    rgb.pixels.push_back(static_cast<std::uint8_t>(rng.next_below(256)));
  img::write_ppm(dir + "/a.ppm", rgb);
  img::Image8 rgb2 = img::read_ppm(dir + "/a.ppm");
  CHECK(rgb2.width == rgb.width);
  CHECK(rgb2.height == rgb.height);
  CHECK(rgb2.channels == 3);
  CHECK(rgb2.pixels == rgb.pixels);

  img::Image8 gray;
  gray.width = 3;
  gray.height = 2;
  gray.channels = 1;
  gray.pixels = {0, 63, 127, 128, 200, 255};
  img::write_pgm(dir + "/b.pgm", gray);
  img::Image8 gray2 = img::read_pgm(dir + "/b.pgm");
  CHECK(gray2.channels == 1);
  CHECK(gray2.pixels == gray.pixels);

  CHECK_THROWS_AS(img::write_ppm(dir + "/c.ppm", gray), std::invalid_argument);
  CHECK_THROWS_AS(img::write_pgm(dir + "/c.pgm", rgb), std::invalid_argument);
  CHECK_THROWS_AS(img::read_pgm(dir + "/a.ppm"), std::runtime_error);
  CHECK_THROWS_AS(img::read_ppm(dir + "/missing.ppm"), std::runtime_error);

  std::string bytes = oracle::read_file(dir + "/a.ppm");
  oracle::write_file(dir + "/short.ppm", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(img::read_ppm(dir + "/short.ppm"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints restore the exact run state") {
  std::string dir = oracle::temp_dir("ckpt");
  Rng rng(802);
  diff::UNetGeometry g = tiny_geo();
  diff::ToyUNet m = diff::init_unet(rng, g, 4);
  cfg::RunConfig rc;
  std::string cfg_text = cfg::to_text(rc);

  // give the optimizer a real step so its moments are nonzero
  std::vector<Tensor> params;
  std::vector<std::string> names;
  for (auto& [name, t] : diff::named_params(m)) {
    params.push_back(t);
    names.push_back(name);
  }
  optim::AdamWState state;
  state.init(params);
  for (Tensor& p : params) {
    p.zero_grad();
    for (double& gr : p.grad()) gr = rng.normal();
  }
  optim::adamw_step(params, state, 1e-3);

  ckpt::Checkpoint ck = ckpt::snapshot(m, ckpt::phase_gates, 42, cfg_text);
  ckpt::attach_opt(ck, names, state);
  std::string path = dir + "/run.ckpt";
  ckpt::write_checkpoint(path, ck);

  std::string bytes = oracle::read_file(path);
  CHECK(bytes.size() > 8);
  CHECK(bytes.compare(0, 8, "MASKATN1") == 0);

  ckpt::Checkpoint rd = ckpt::read_checkpoint(path);
  CHECK(rd.phase == ckpt::phase_gates);
  CHECK(rd.step == 42);
  CHECK(rd.config_text == cfg_text);
  CHECK(rd.has_opt);
  CHECK(rd.opt_step == 1);
  REQUIRE(rd.params.size() == ck.params.size());
  for (std::size_t i = 0; i < rd.params.size(); ++i) {
    CHECK(rd.params[i].first == ck.params[i].first);
    CHECK(bitwise_equal(rd.params[i].second, ck.params[i].second));
  }
  REQUIRE(rd.opt.size() == names.size());
  for (std::size_t i = 0; i < rd.opt.size(); ++i) {
    CHECK(rd.opt[i].name == names[i]);
    CHECK(rd.opt[i].m == state.m[i]);
    CHECK(rd.opt[i].v == state.v[i]);
  }

  // writing what was read reproduces the file byte for byte
  ckpt::write_checkpoint(dir + "/again.ckpt", rd);
  CHECK(oracle::read_file(dir + "/again.ckpt") == bytes);

  // parameters copied back land bitwise in a fresh model
  Rng rng2(999);
  diff::ToyUNet m2 = diff::init_unet(rng2, g, 4);
  ckpt::load_params(rd, m2);
  auto pa = diff::named_params(m);
  auto pb = diff::named_params(m2);
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(bitwise_equal(pa[i].second, pb[i].second));

  optim::AdamWState back = ckpt::restore_opt(rd, names, state.cfg);
  CHECK(back.step == state.step);
  CHECK(back.m == state.m);
  CHECK(back.v == state.v);
  std::filesystem::remove_all(dir);
}

TEST_CASE("damaged checkpoints fail loudly") {
  std::string dir = oracle::temp_dir("ckpt_bad");
  Rng rng(803);
  diff::ToyUNet m = diff::init_unet(rng, tiny_geo(), 4);
  ckpt::Checkpoint ck = ckpt::snapshot(m, ckpt::phase_backbone, 7, "x=1\n");
  std::string path = dir + "/ok.ckpt";
  ckpt::write_checkpoint(path, ck);
  std::string bytes = oracle::read_file(path);

  oracle::write_file(dir + "/short.ckpt", bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(ckpt::read_checkpoint(dir + "/short.ckpt"), ckpt::Truncated);

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  oracle::write_file(dir + "/magic.ckpt", wrong_magic);
  CHECK_THROWS_AS(ckpt::read_checkpoint(dir + "/magic.ckpt"), ckpt::BadMagic);

  std::string wrong_version = bytes;
  wrong_version[8] = 2;
  oracle::write_file(dir + "/version.ckpt", wrong_version);
  CHECK_THROWS_AS(ckpt::read_checkpoint(dir + "/version.ckpt"), ckpt::BadVersion);

  oracle::write_file(dir + "/tail.ckpt", bytes + '\0');
  CHECK_THROWS_AS(ckpt::read_checkpoint(dir + "/tail.ckpt"), ckpt::Error);

  CHECK_THROWS_AS(ckpt::read_checkpoint(dir + "/nothing.ckpt"), ckpt::Error);

  // a model with a different layout cannot take these parameters
  diff::UNetGeometry other = tiny_geo();
  other.c_stem = 3;
  Rng rng2(804);
  diff::ToyUNet m2 = diff::init_unet(rng2, other, 4);
  ckpt::Checkpoint rd = ckpt::read_checkpoint(path);
  CHECK_THROWS_AS(ckpt::load_params(rd, m2), ckpt::Error);

  CHECK_THROWS_AS(ckpt::restore_opt(rd, {"conv_in.w"}, optim::AdamWConfig{}), ckpt::Error);
  std::filesystem::remove_all(dir);
}
