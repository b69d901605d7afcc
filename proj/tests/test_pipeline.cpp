#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "hperl/config.hpp"
#include "hperl/pipeline.hpp"
#include "test_util.hpp"

using namespace hperl;
namespace fs = std::filesystem;

namespace {

const AnchorPoseSet& poses() {
  static const AnchorPoseSet p = AnchorPoseSet::load_default();
  return p;
}

const Dataset& small_dataset() {
  static const Dataset d = [] {
    DatasetConfig dc;
    dc.scenes = 6;
    dc.seed = 4;
    dc.max_pedestrians = 2;
    return generate_dataset(dc, poses());
  }();
  return d;
}

ModelConfig small_config() {
  ModelConfig c;
  c.channels = 4;
  c.gn_groups = 2;
  c.stage1_hidden = 6;
  c.stage2_hidden = 8;
  c.top_n = 6;
  c.pre_nms_top = 40;
  c.rpn_batch = 16;
  c.seed = 5;
  c.epochs = 3;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hperl_pipe_" + tag + "_" + std::to_string(std::random_device{}()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.config = "epochs = 3\nseed = 9\n";
  c.tensors.push_back({"a.weight", {2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7}});
  c.tensors.push_back({"b", {1}, {42}});
  c.first_moment = {{0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, {1}};
  c.second_moment = {{1, 2, 3, 4, 5, 6}, {2}};
  c.optimizer_steps = 17;
  c.epochs_done = 2;
  c.global_step = 17;
  c.best_loss = 0.125;
  c.best_epoch = 1;
  c.loss_log = std::string(kLossLogHeader) + "\n0,1,0.001,1,1,1,1,1,5\n";
  return c;
}

}  // namespace

TEST_CASE("checkpoint encoding round trips and detects corruption") {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = encode_checkpoint(c);
  CHECK(decode_checkpoint(bytes) == c);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);

  auto bad = bytes;
  bad[bytes.size() / 2] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(bad), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint({bytes.begin(), bytes.begin() + 20}), CheckpointError);
  auto magic = bytes;
  magic[0] = 'Z';
  CHECK_THROWS_AS(decode_checkpoint(magic), CheckpointError);
  auto version = bytes;
  version[8] = 77;
  CHECK_THROWS_AS(decode_checkpoint(version), CheckpointError);

  TempDir dir("ckpt");
  fs::create_directories(dir.path);
  save_checkpoint(c, dir.path / "x.ckpt");
  CHECK(load_checkpoint(dir.path / "x.ckpt") == c);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.ckpt"), CheckpointError);
}

TEST_CASE("model tensors survive a checkpoint") {
  const auto cfg = small_config();
  Trainer t(cfg, small_dataset(), poses());
  t.train_step(small_dataset().scenes[0], 1e-3);
  RunConfig rc;
  rc.model = cfg;
  const Checkpoint c = decode_checkpoint(encode_checkpoint(t.checkpoint(config_text(rc))));
  ToyNet back = model_from_checkpoint(c, poses());
  for (const auto& p : t.model().parameters()) CHECK(back.parameter(p.name).value() == p.tensor.value());

  ToyNet other(cfg, poses());
  auto tensors = model_tensors(t.model());
  tensors[0].shape.push_back(1);
  CHECK_THROWS(load_model_tensors(other, tensors));
}

TEST_CASE("resuming reproduces an uninterrupted run bitwise") {
  auto cfg = small_config();
  TempDir full("full"), part("part"), rest("rest");

  Trainer a(cfg, small_dataset(), poses());
  TrainOptions oa;
  oa.out_dir = full.path;
  a.run(oa);
  REQUIRE(a.epochs_done() == 3);

  auto short_cfg = cfg;
  short_cfg.epochs = 1;
  Trainer b(short_cfg, small_dataset(), poses());
  TrainOptions ob;
  ob.out_dir = part.path;
  b.run(ob);
  REQUIRE(b.epochs_done() == 1);

  Trainer c(cfg, small_dataset(), poses());
  TrainOptions oc;
  oc.out_dir = rest.path;
  oc.resume = part.path / "last.ckpt";
  c.run(oc);

  CHECK(c.loss_log() == a.loss_log());
  CHECK(read_text(rest.path / "loss_log.csv") == read_text(full.path / "loss_log.csv"));
  const auto la = load_checkpoint(full.path / "last.ckpt"), lc = load_checkpoint(rest.path / "last.ckpt");
  CHECK(la.tensors == lc.tensors);
  CHECK(la.first_moment == lc.first_moment);
  CHECK(la.second_moment == lc.second_moment);
  CHECK(la.global_step == lc.global_step);

  // Three logged epochs plus the header.
  const std::string log = a.loss_log();
  CHECK(std::count(log.begin(), log.end(), '\n') == 4);
  CHECK(log.rfind(kLossLogHeader, 0) == 0);
  CHECK(fs::exists(full.path / "best.ckpt"));
}

TEST_CASE("zero epochs writes only the initial checkpoint") {
  auto cfg = small_config();
  cfg.epochs = 0;
  TempDir dir("zero");
  Trainer t(cfg, small_dataset(), poses());
  TrainOptions o;
  o.out_dir = dir.path;
  o.config_text = "marker = 1\n";
  t.run(o);
  CHECK(fs::exists(dir.path / "last.ckpt"));
  CHECK_FALSE(fs::exists(dir.path / "best.ckpt"));
  CHECK(read_text(dir.path / "loss_log.csv") == std::string(kLossLogHeader) + "\n");
  const auto c = load_checkpoint(dir.path / "last.ckpt");
  CHECK(c.epochs_done == 0);
  CHECK(c.config == "marker = 1\n");
  ToyNet fresh(cfg, poses());
  for (const auto& p : fresh.parameters()) {
    const auto it = std::find_if(c.tensors.begin(), c.tensors.end(), [&](const auto& x) { return x.name == p.name; });
    REQUIRE(it != c.tensors.end());
    CHECK(it->values == p.tensor.value());
  }
}

TEST_CASE("a blown-up loss raises DivergenceError") {
  auto cfg = small_config();
  cfg.divergence_threshold = 1e-6;
  Trainer t(cfg, small_dataset(), poses());
  try {
    t.run(TrainOptions{});
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.epoch() == 0);
    CHECK(e.step() == 0);
    CHECK(std::string(e.what()).find("l_total") != std::string::npos);
  }

  auto hot = small_config();
  hot.learning_rate = 1e6;
  hot.epochs = 20;
  hot.optimizer = nn::Optimizer::Kind::rmsprop;
  Trainer u(hot, small_dataset(), poses());
  CHECK_THROWS_AS(u.run(TrainOptions{}), DivergenceError);
}

TEST_CASE("learning-rate schedule") {
  auto cfg = small_config();
  cfg.learning_rate = 0.1;
  cfg.lr_decay = 0.5;
  cfg.lr_decay_every = 2;
  Trainer t(cfg, small_dataset(), poses());
  CHECK(t.learning_rate(0) == 0.1);
  CHECK(t.learning_rate(1) == 0.1);
  CHECK(t.learning_rate(2) == 0.05);
  CHECK(t.learning_rate(5) == 0.025);
}

TEST_CASE("configuration text round trips and flags take precedence") {
  RunConfig c = preset_config("desk");
  c.model.learning_rate = 3.25e-4;
  c.data.scene.depth_max = 41.5;
  c.split = "train";
  const std::string text = config_text(c);
  CHECK(config_text(config_from_text(text)) == text);
  CHECK(config_text(resolve_config({}, parse_key_values(text))) == text);

  const KeyValues file{{"epochs", "7"}, {"seed", "3"}, {"preset", "rgb_baseline"}};
  const KeyValues flags{{"epochs", "9"}};
  const RunConfig r = resolve_config(file, flags);
  CHECK(r.model.epochs == 9);
  CHECK(r.model.seed == 3);
  CHECK(r.model.mode == InputMode::rgb);

  const RunConfig r2 = resolve_config(file, {{"preset", "fusion"}});
  CHECK(r2.model.mode == InputMode::fusion);
  CHECK(r2.model.epochs == 7);

  CHECK_THROWS_AS(parse_key_values("epochs = 1\nepochs = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(resolve_config({}, {{"bogus_key", "1"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({}, {{"epochs", "many"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({}, {{"preset", "nope"}}), ConfigError);
  CHECK(parse_key_values("# comment\n\n a = b \n").at("a") == "b");
}

TEST_CASE("oracle evaluation is perfect") {
  const auto& d = small_dataset();
  const auto r = evaluate_oracle(d, split_indices(d, "eval"));
  CHECK(r.report.mpjpe_2d() == 0.0);
  CHECK(r.report.pckh() == 1.0);
  CHECK(r.report.cde() == 0.0);
  CHECK(r.report.xye() == 0.0);
  CHECK(r.report.recall() == 1.0);
  CHECK_THROWS(split_indices(d, "test"));
}
