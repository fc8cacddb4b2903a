#include <gtest/gtest.h>

#include <sstream>

#include "acnn/binary_io.hpp"
#include "acnn/checkpoint.hpp"
#include "acnn/cli.hpp"
#include "acnn/image_io.hpp"
#include "test_util.hpp"

namespace acnn {
namespace {

using testing::temp_dir;

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = dispatch(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string text(const std::filesystem::path& p) {
  const auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

TEST(Cli, CountParams) {
  const CliResult r = run({"count-params", "--arch", "all-cnn-c"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, std::to_string(count_parameters(build_architecture("all-cnn-c"))) + "\n");
  EXPECT_EQ(run({"count-params", "--arch", "all-cnn-c", "--classes", "100"}).code, 0);
  EXPECT_EQ(run({"count-params", "--arch", "no-such-net"}).code, 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"count-params"}).code, 1);
  const CliResult help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("visualize"), std::string::npos);
}

TEST(Cli, MissingDataFailsWithoutCheckpoint) {
  const auto dir = temp_dir("cli_missing");
  RunConfig c;
  c.data_dir = dir / "nowhere";
  c.out_dir = dir / "run";
  write_text_atomic(dir / "config.json", dump_run_config(c));
  const CliResult r = run({"train", "--config", (dir / "config.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "run" / "model.acnk"));
}

TEST(Config, RoundTripAndDefaults) {
  RunConfig c;
  c.arch = "strided-cnn-a";
  c.scale = 0.25;
  c.n_train = 500;
  c.seed = 9;
  c.train.seed = 9;
  c.train.epochs = 3;
  c.train.schedule.milestones = {1, 2};
  c.preprocess.zca = false;
  const RunConfig back = parse_run_config(dump_run_config(c));
  EXPECT_EQ(dump_run_config(back), dump_run_config(c));
  EXPECT_EQ(back.train.seed, 9u);

  const RunConfig d = parse_run_config("{}");
  EXPECT_EQ(d.arch, "all-cnn-c");
  EXPECT_EQ(d.train.epochs, 350u);
  EXPECT_EQ(d.train.schedule.milestones, (std::vector<std::size_t>{200, 250, 300}));
  EXPECT_DOUBLE_EQ(d.train.momentum, 0.9);
  EXPECT_DOUBLE_EQ(d.train.weight_decay, 0.001);
  EXPECT_DOUBLE_EQ(d.input_dropout, 0.2);
  EXPECT_DOUBLE_EQ(d.hidden_dropout, 0.5);
}

TEST(Config, Rejections) {
  for (const char* bad : {"{", "[]", R"({"colour": 1})", R"({"train": {"epochs": -1}})", R"({"seed": "x"})",
                          R"({"dropout": {"input": 0.2, "output": 0.1}})"}) {
    try {
      parse_run_config(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadConfig) << bad;
    }
  }
  RunConfig c;
  c.dataset = "cifar100";
  EXPECT_THROW(c.validate(), Error);
  c.classes = 100;
  EXPECT_NO_THROW(c.validate());
  c.hidden_dropout = 1.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, ModelDropoutRates) {
  RunConfig c;
  c.scale = 0.1;
  c.input_dropout = 0.1;
  c.hidden_dropout = 0.3;
  const Model m = make_model(c);
  std::size_t seen = 0;
  for (std::size_t i = 0; i < m.layer_count(); ++i)
    if (m.layer(i).kind == LayerKind::Dropout) {
      EXPECT_DOUBLE_EQ(m.layer(i).rate, i == 0 ? 0.1 : 0.3);
      ++seen;
    }
  EXPECT_EQ(seen, 3u);
  EXPECT_EQ(serialize_checkpoint(make_model(c)), serialize_checkpoint(m));
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new std::filesystem::path(temp_dir("cli_run"));
    testing::write_synthetic_cifar10(*root_ / "data", 20, 30, 1);
    RunConfig c;
    c.arch = "all-cnn-c";
    c.scale = 0.1;
    c.data_dir = *root_ / "data";
    c.n_train = 80;
    c.train.epochs = 2;
    c.train.batch = 16;
    c.train.schedule.milestones = {1};
    c.preprocess.zca = false;
    write_text_atomic(*root_ / "config.json", dump_run_config(c));
  }
  static void TearDownTestSuite() { delete root_; }
  static std::filesystem::path* root_;
};

std::filesystem::path* CliRun::root_ = nullptr;

TEST_F(CliRun, TrainIsReproducibleAndArtifactsLoad) {
  const auto& root = *root_;
  const std::string config = (root / "config.json").string();
  const CliResult a = run({"train", "--config", config, "--out", (root / "a").string()});
  ASSERT_EQ(a.code, 0) << a.err;
  const CliResult b = run({"train", "--config", config, "--out", (root / "b").string()});
  ASSERT_EQ(b.code, 0) << b.err;
  for (const char* f : {"metrics.csv", "model.acnk", "preproc.stats"})
    EXPECT_EQ(read_file(root / "a" / f), read_file(root / "b" / f)) << f;
  const std::string metrics = text(root / "a" / "metrics.csv");
  EXPECT_EQ(metrics.rfind("epoch,lr,train_loss,test_error\n", 0), 0u);
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);

  const CliResult c = run({"train", "--config", config, "--out", (root / "c").string(), "--seed", "2"});
  ASSERT_EQ(c.code, 0);
  EXPECT_NE(read_file(root / "a" / "model.acnk"), read_file(root / "c" / "model.acnk"));

  const RunConfig written = parse_run_config(text(root / "a" / "config.json"));
  EXPECT_EQ(written.out_dir, root / "a");
  EXPECT_EQ(written.n_train, 80u);

  const CliResult e = run({"eval", "--checkpoint", (root / "a" / "model.acnk").string(), "--data", (root / "data").string(),
                     "--stats", (root / "a" / "preproc.stats").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_DOUBLE_EQ(std::stod(e.out), std::stod(a.out));
}

TEST_F(CliRun, SurgeryVisualizeAndPreprocess) {
  const auto& root = *root_;
  if (!std::filesystem::exists(root / "a" / "model.acnk")) {
    ASSERT_EQ(run({"train", "--config", (root / "config.json").string(), "--out", (root / "a").string()}).code, 0);
  }
  const auto ckpt = (root / "a" / "model.acnk").string();
  ASSERT_EQ(run({"surgery", "--checkpoint", ckpt, "--out", (root / "pooled.acnk").string()}).code, 0);
  const Model pooled = load_checkpoint(root / "pooled.acnk");
  std::size_t pools = 0;
  for (const LayerSpec& s : pooled.layers()) pools += s.kind == LayerKind::MaxPool;
  EXPECT_EQ(pools, 2u);
  EXPECT_EQ(run({"surgery", "--checkpoint", (root / "pooled.acnk").string(), "--out", (root / "x.acnk").string()}).code,
            2);

  const CliResult v = run({"visualize", "--checkpoint", (root / "pooled.acnk").string(), "--rule", "deconvnet", "--layer",
                     "9", "--channel", "1", "--switches", "--data", (root / "data").string(), "--stats",
                     (root / "a" / "preproc.stats").string(), "--n", "12", "--top", "4", "--out",
                     (root / "vis").string()});
  ASSERT_EQ(v.code, 0) << v.err;
  const Raster img = decode_pnm(read_file(root / "vis" / "visualization.ppm"));
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.width, 4u * 32u + 3u * 2u);
  const std::string manifest = text(root / "vis" / "manifest.csv");
  EXPECT_EQ(std::count(manifest.begin(), manifest.end(), '\n'), 5);

  const CliResult u = run({"visualize", "--checkpoint", ckpt, "--rule", "deconvnet", "--layer", "3", "--channel", "0",
                     "--out", (root / "vis0").string()});
  ASSERT_EQ(u.code, 0) << u.err;
  EXPECT_TRUE(std::filesystem::exists(root / "vis0" / "visualization.ppm"));
  EXPECT_EQ(run({"visualize", "--checkpoint", ckpt, "--rule", "guided", "--layer", "3", "--channel", "0", "--switches",
                 "--out", (root / "vis1").string()})
                .code,
            2);
  EXPECT_EQ(run({"visualize", "--checkpoint", ckpt, "--rule", "lrp", "--layer", "3", "--channel", "0", "--out",
                 (root / "vis2").string()})
                .code,
            1);

  ASSERT_EQ(run({"preprocess", "--data", (root / "data").string(), "--out", (root / "p.stats").string(), "--n", "80", "--no-zca"})
                .code,
            0);
  EXPECT_EQ(read_file(root / "p.stats"), read_file(root / "a" / "preproc.stats"));
}

}  // namespace
}  // namespace acnn
