#include "foleygen/cli.hpp"
#include "foleygen/run_config.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace foleygen;
using foleygen::testing::scratch_dir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "foleygen");
  std::vector<char*> argv;
  for (auto& a : args) {
    argv.push_back(a.data());
  }
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough for a unit test: 24 train / 3 test episodes, 2-layer width-16 LM.
std::filesystem::path write_config(const std::filesystem::path& dir) {
  const auto path = dir / "tiny.cfg";
  std::ofstream out(path);
  out << "# unit-test run\n"
      << "paths.work_dir = " << (dir / "work").string() << "\n"
      << "data.n_train = 24\n"
      << "data.n_test = 3\n"
      << "codec.codebook_size = 8\n"
      << "codec.ema_epochs = 1\n"
      << "lm.n_layers = 2\n"
      << "lm.n_heads = 2\n"
      << "lm.d_model = 16\n"
      << "lm.d_ff = 32\n"
      << "lm.max_S = 128\n"
      << "train.total_steps = 4\n"
      << "train.warmup_steps = 2\n"
      << "train.batch_size = 4\n"
      << "train.log_every = 1\n"
      << "gen.top_k = 4\n";
  return path;
}

}  // namespace

TEST_CASE("config keys and overrides") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.model.d_ff == 256);
  apply_config_text(cfg, "train.lr = 0.002  # faster\n\nlm.mechanism = causal_visual\n", "t");
  CHECK(cfg.train.lr == 0.002);
  CHECK(cfg.mech() == Mechanism::causal_visual);
  CHECK_THROWS_AS(set_config_value(cfg, "train.learning_rate", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "train.lr", "fast"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "no equals sign\n", "t"), ConfigError);
  set_config_value(cfg, "lm.mechanism", "diagonal");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  RunConfig round;
  apply_config_text(round, cfg.to_text(), "dump");
  CHECK(round.to_text() == cfg.to_text());
}

TEST_CASE("seed environment variable replaces every seed") {
  RunConfig cfg;
  ::setenv("FOLEYGEN_SEED", "42", 1);
  apply_seed_env(cfg);
  ::unsetenv("FOLEYGEN_SEED");
  CHECK(cfg.data_seed == 42);
  CHECK(cfg.codec_seed == 42);
  CHECK(cfg.init_seed == 42);
  CHECK(cfg.train.seed == 42);
  CHECK(cfg.gen.seed == 42);
  CHECK(cfg.visual_seed == 42);
}

TEST_CASE("usage and configuration errors map to exit codes") {
  CHECK(cli({}).code == 1);
  const Result unknown = cli({"synth-data", "--no-such-flag"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("Usage") != std::string::npos);
  CHECK(cli({"--help"}).code == 0);

  const auto dir = scratch_dir("cli_errors");
  const auto cfg = write_config(dir);
  const Result missing = cli({"generate", "-c", cfg.string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.find((dir / "work" / "lm_all_frame.fglm").string()) != std::string::npos);
  CHECK(cli({"synth-data", "-c", (dir / "absent.cfg").string()}).code == 2);
  CHECK(cli({"synth-data", "-c", cfg.string(), "--data.n_train", "0"}).code == 2);
}

TEST_CASE("stages run end to end and resume reproduces a straight run") {
  const auto dir = scratch_dir("cli_pipeline");
  const auto cfg = write_config(dir).string();
  REQUIRE(cli({"synth-data", "-c", cfg}).code == 0);
  REQUIRE(cli({"train-codec", "-c", cfg}).code == 0);
  const Result trained = cli({"train-lm", "-c", cfg});
  REQUIRE(trained.code == 0);
  const auto ckpt = dir / "work" / "lm_all_frame.fglm";
  const std::string straight = slurp(ckpt);

  // Already trained to total_steps: rerunning leaves the checkpoint alone.
  REQUIRE(cli({"train-lm", "-c", cfg}).code == 0);
  CHECK(slurp(ckpt) == straight);

  std::filesystem::remove(ckpt);
  REQUIRE(cli({"train-lm", "-c", cfg, "--train.total_steps", "2"}).code == 0);
  REQUIRE(cli({"train-lm", "-c", cfg, "--resume"}).code == 0);
  CHECK(slurp(ckpt) == straight);

  const Result gen = cli({"generate", "-c", cfg, "--dump-mask", (dir / "mask.txt").string()});
  REQUIRE(gen.code == 0);
  CHECK(std::filesystem::exists(dir / "mask.txt"));
  const Result ev = cli({"eval", "-c", cfg});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("class_accuracy") != std::string::npos);
  const std::string first_wavs = slurp(dir / "work" / "eval_all_frame.kv");

  // Generation is reproducible byte for byte.
  REQUIRE(cli({"generate", "-c", cfg}).code == 0);
  REQUIRE(cli({"eval", "-c", cfg}).code == 0);
  CHECK(slurp(dir / "work" / "eval_all_frame.kv") == first_wavs);
}
