#include "foleygen/cli.hpp"

#include "foleygen/pipeline.hpp"
#include "foleygen/run_config.hpp"

#include <CLI11.hpp>

#include <map>
#include <ostream>

namespace foleygen {

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Desk-scale video-to-audio pipeline on a synthetic tone task", "foleygen"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  int threads = 0;
  app.add_option("-c,--config", config_path, "key = value config file");
  app.add_option("--threads", threads, "worker thread cap")->check(CLI::PositiveNumber);

  RunConfig defaults;
  std::map<std::string, std::string> overrides;
  for (const auto& key : config_keys(defaults)) {
    if (key.name == "threads") {
      continue;
    }
    app.add_option_function<std::string>(
        "--" + key.name, [&overrides, name = key.name](const std::string& v) { overrides[name] = v; },
        key.help);
  }

  auto* synth = app.add_subcommand("synth-data", "write train/test episodes and the manifest");
  auto* codec = app.add_subcommand("train-codec", "fit the RVQ codec and tokenize every episode");
  auto* train = app.add_subcommand("train-lm", "train the token decoder");
  bool resume = false;
  train->add_flag("--resume", resume, "continue from the saved checkpoint");
  auto* gen = app.add_subcommand("generate", "sample audio for the test split");
  GenerateOptions gopt;
  gen->add_option("--checkpoint", gopt.checkpoint, "decoder checkpoint (default per mechanism)");
  gen->add_option("--features", gopt.features, "external VEMB embedding file");
  gen->add_option("--output", gopt.output, "output stem for --features");
  gen->add_option("--dump-mask", gopt.dump_mask, "write the attention mask as a 0/1 grid");
  auto* eval = app.add_subcommand("eval", "score generated audio against the test split");
  auto* compare =
      app.add_subcommand("compare-attention", "train, generate and score all three mechanisms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    apply_seed_env(cfg);
    for (const auto& [k, v] : overrides) {
      set_config_value(cfg, k, v);
    }
    if (threads > 0) {
      cfg.threads = threads;
    }
    cfg.validate();
    const Mechanism mech = cfg.mech();

    if (synth->parsed()) {
      stage_synth_data(cfg, out);
    } else if (codec->parsed()) {
      stage_train_codec(cfg, out);
    } else if (train->parsed()) {
      stage_train_lm(cfg, mech, resume, out);
    } else if (gen->parsed()) {
      stage_generate(cfg, mech, gopt, out);
    } else if (eval->parsed()) {
      stage_eval(cfg, mech, out);
    } else if (compare->parsed()) {
      stage_compare_attention(cfg, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}

}  // namespace foleygen
