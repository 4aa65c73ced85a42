#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "uflow/binary_io.hpp"
#include "uflow/errors.hpp"
#include "uflow/image_io.hpp"
#include "uflow/pipeline.hpp"

using namespace uflow;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"([extractor]
levels = 2
patch = 4
channels = 8, 16

[flow]
steps_per_stage = 2

[train]
epochs = 1
batch_size = 2

[synthetic]
image_size = 32
n_train = 4
n_test_normal = 2
n_test_anomalous = 2
defect_size_min = 4
defect_size_max = 8
)";

struct RunResult {
  int status;
  std::string err;
};

class Workspace {
 public:
  explicit Workspace(const std::string& name) : dir_(fs::temp_directory_path() / ("uflow_cli_" + name)) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write("run.ini", kTinyConfig);
  }
  ~Workspace() { fs::remove_all(dir_); }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& rel) const { return dir_ / rel; }
  void write(const std::string& rel, const std::string& text) const { std::ofstream(dir_ / rel) << text; }

  RunResult cli(const std::string& args, const std::string& config = "run.ini") const {
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = std::string(UFLOW_CLI_PATH) + " --config " + (dir_ / config).string() + " " +
                            args + " > /dev/null 2> " + err.string();
    const int raw = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream text;
    text << in.rdbuf();
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, text.str()};
  }

  void pipeline(const std::string& extra = "") const {
    for (const char* step : {"gen-data", "extract", "train", "score", "segment", "eval"}) {
      const auto r = cli(std::string(step) + " " + extra);
      ASSERT_EQ(r.status, 0) << step << ": " << r.err;
    }
  }

 private:
  fs::path dir_;
};

std::vector<std::uint8_t> bytes(const fs::path& p) { return binary::read_file(p); }

// Every file under a directory, relative path to contents.
std::map<std::string, std::vector<std::uint8_t>> snapshot(const fs::path& dir) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = bytes(e.path());
  }
  return out;
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  const auto c = parse_config("", ".");
  EXPECT_EQ(c.extractor.levels, 2);
  EXPECT_EQ(c.steps_per_stage, 4);
  EXPECT_EQ(c.nfa.windows, (std::vector<int>{5, 3}));
  EXPECT_EQ(c.score, ScoreKind::nfa);
  const auto text = emit_config(c);
  EXPECT_EQ(emit_config(parse_config(text, ".")), text);
}

TEST(Config, CustomValuesRoundTrip) {
  const std::string src = R"([run]
seed = 99
[train]
learning_rate = 0.0003
epochs = 7
[nfa]
p = 0.85
windows = 7,5
high_precision = true
[synthetic]
texture = grating
defects = blob, scratch
contrast = 0.55
[score]
kind = as
formula = single_half
)";
  const auto c = parse_config(src, ".");
  EXPECT_EQ(c.seed, 99u);
  EXPECT_EQ(c.train.learning_rate, 0.0003);
  EXPECT_EQ(c.train.epochs, 7);
  EXPECT_EQ(c.nfa.windows, (std::vector<int>{7, 5}));
  EXPECT_TRUE(c.nfa.high_precision);
  EXPECT_EQ(c.synthetic.texture, Texture::grating);
  EXPECT_EQ(c.synthetic.defects, (std::vector<DefectKind>{DefectKind::blob, DefectKind::scratch}));
  EXPECT_EQ(c.score, ScoreKind::as);
  EXPECT_EQ(c.formula, ScoreFormula::single_half);
  const auto text = emit_config(c);
  const auto again = parse_config(text, ".");
  EXPECT_EQ(emit_config(again), text);
  EXPECT_EQ(again.synthetic.contrast, 0.55);
}

TEST(Config, RejectsUnknownAndInvalid) {
  EXPECT_THROW(parse_config("[train]\nmomentum = 0.9\n", "."), ParseError);
  EXPECT_THROW(parse_config("[optimizer]\nlr = 1\n", "."), ParseError);
  EXPECT_THROW(parse_config("[train]\nepochs = ten\n", "."), ParseError);
  EXPECT_THROW(parse_config("[extractor]\nchannels = 8,12\n", "."), ParameterError);
  EXPECT_THROW(parse_config("[nfa]\nwindows = 5\n", "."), ParameterError);
  EXPECT_THROW(parse_config("[nfa]\nwindows = 4,3\n", "."), ParameterError);
  EXPECT_THROW(parse_config("[synthetic]\nimage_size = 60\n", "."), ParameterError);
  EXPECT_THROW(parse_config("[score]\nkind = psnr\n", "."), ParameterError);
  try {
    parse_config("[extractor]\nchannels = 8,12\n", ".");
  } catch (const ParameterError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 1"), std::string::npos) << e.what();
  }
}

TEST(Config, Overrides) {
  const auto c = parse_config("", "/base");
  CommandOptions o;
  o.seed = 5;
  o.score = ScoreKind::as;
  o.high_precision = true;
  const auto d = apply_overrides(c, o);
  EXPECT_EQ(d.seed, 5u);
  EXPECT_EQ(d.score, ScoreKind::as);
  EXPECT_TRUE(d.nfa.high_precision);
  EXPECT_EQ(d.resolve("data"), fs::path("/base/data"));
  EXPECT_EQ(d.resolve("/abs"), fs::path("/abs"));
  o.jobs = 0;
  EXPECT_THROW(apply_overrides(c, o), ParameterError);
}

TEST(Cli, SmokePipelineProducesArtifacts) {
  Workspace w("smoke");
  w.pipeline();
  for (const char* f : {"data/manifest.csv", "data/config.ini", "data/train/0000.pgm", "data/test/0003.pgm",
                        "data/gt/test/0003.pgm", "features/train/0000.ufv", "features/test/0001.ufv",
                        "model/model.ufm", "model/loss.csv", "scores/test/0000.as.pfm",
                        "scores/test/0000.as.pgm", "scores/test/0000.as.pgm.scale",
                        "scores/test/0000.lognfa.pfm", "scores/embedding_stats.csv", "masks/test/0000.pgm",
                        "eval/metrics.csv", "eval/metrics.json", "eval/config.ini"}) {
    EXPECT_TRUE(fs::exists(w.path(f))) << f;
  }
  std::ifstream json(w.path("eval/metrics.json"));
  std::stringstream text;
  text << json.rdbuf();
  for (const char* key : {"pixel_auroc", "image_auroc", "iou_auto", "iou_oracle", "iou_fair", "thresholds"}) {
    EXPECT_NE(text.str().find(key), std::string::npos) << key;
  }
}

TEST(Cli, RerunsAreBitIdentical) {
  Workspace w("idempotent");
  w.pipeline();
  const auto first = snapshot(w.dir());
  w.pipeline("--force --jobs 3");
  const auto second = snapshot(w.dir());
  for (const auto& [name, data] : first) {
    if (name == "stderr.txt") continue;
    ASSERT_TRUE(second.count(name)) << name;
    EXPECT_EQ(second.at(name), data) << name;
  }
}

TEST(Cli, ExplicitZeroThresholdEqualsDefault) {
  Workspace w("segment");
  w.pipeline();
  const auto defaults = snapshot(w.path("masks"));
  ASSERT_EQ(w.cli("segment --force --log-nfa-threshold 0").status, 0);
  EXPECT_EQ(snapshot(w.path("masks")), defaults);
  ASSERT_EQ(w.cli("segment --force --log-nfa-threshold 1e9").status, 0);
  EXPECT_EQ(read_mask_pgm(w.path("masks/test/0000.pgm")).count(), 32u * 32u);
}

TEST(Cli, ShapeMismatchNamesTheStage) {
  Workspace w("mismatch");
  for (const char* step : {"gen-data", "extract", "train"}) ASSERT_EQ(w.cli(step).status, 0) << step;
  std::string other = kTinyConfig;
  other.replace(other.find("channels = 8, 16"), 16, "channels = 16, 16");
  w.write("other.ini", other);
  ASSERT_EQ(w.cli("extract --force", "other.ini").status, 0);
  const auto r = w.cli("score");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("stage 0"), std::string::npos) << r.err;
}

TEST(Cli, ErrorsExitNonzero) {
  Workspace w("errors");
  ASSERT_EQ(w.cli("gen-data").status, 0);
  const auto again = w.cli("gen-data");
  EXPECT_EQ(again.status, 1);
  EXPECT_NE(again.err.find("already exists"), std::string::npos);
  const auto missing = w.cli("train");
  EXPECT_EQ(missing.status, 1);
  EXPECT_NE(missing.err.find("manifest"), std::string::npos);
  w.write("bad.ini", "[train]\nmomentum = 1\n");
  const auto bad = w.cli("train", "bad.ini");
  EXPECT_EQ(bad.status, 1);
  EXPECT_NE(bad.err.find("momentum"), std::string::npos);
  EXPECT_NE(w.cli("").status, 0);
  EXPECT_NE(w.cli("frobnicate").status, 0);
  EXPECT_NE(w.cli("gen-data --force --jobs 0").status, 0);
}

TEST(Cli, ScoreKindOverride) {
  Workspace w("kind");
  w.pipeline();
  ASSERT_EQ(w.cli("eval --force --score as").status, 0);
  std::ifstream json(w.path("eval/metrics.json"));
  std::stringstream text;
  text << json.rdbuf();
  EXPECT_NE(text.str().find("\"score\": \"as\""), std::string::npos) << text.str();
}
