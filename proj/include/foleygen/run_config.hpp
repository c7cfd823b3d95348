#pragma once

#include "foleygen/attention_masks.hpp"
#include "foleygen/decoder_lm.hpp"
#include "foleygen/inference.hpp"
#include "foleygen/rvq_codec.hpp"
#include "foleygen/toy_data.hpp"
#include "foleygen/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

namespace foleygen {

struct RunConfig {
  std::string work_dir = "work";

  // data.*
  int duration_s = 2;
  int n_classes = 4;
  int max_events = 2;
  int sample_rate = 8000;
  int n_train = 2000;
  int n_test = 100;
  uint64_t data_seed = 1;

  // visual.*
  int d_visual = 8;
  int frame_rate_v = 1;
  uint64_t visual_seed = 2;

  // codec.*
  int hop = 160;
  int latent_dim = 8;
  RVQConfig rvq;
  uint64_t codec_seed = 3;

  // lm.*
  ModelConfig model;
  std::string mechanism = "all_frame";
  uint64_t init_seed = 4;

  // train.*
  TrainConfig train;
  int log_every = 100;
  int checkpoint_every = 1000;

  // gen.*
  GenConfig gen;
  int gen_episodes = 0;  // 0 = whole test split

  double window_ms = 250.0;
  int threads = 1;

  RunConfig();

  EpisodeSpec episode_spec() const;
  FeaturizerConfig featurizer() const;
  // Model config with vocabulary, visual width and rates taken from the
  // codec and data sections.
  ModelConfig model_config() const;
  Mechanism mech() const { return parse_mechanism(mechanism); }

  std::filesystem::path data_dir() const { return std::filesystem::path(work_dir) / "data"; }
  std::filesystem::path manifest_path() const { return data_dir() / "manifest.tsv"; }
  std::filesystem::path codec_path() const { return std::filesystem::path(work_dir) / "codec.rvqm"; }
  std::filesystem::path tokens_dir() const { return std::filesystem::path(work_dir) / "tokens"; }
  std::filesystem::path checkpoint_path(Mechanism m) const;
  std::filesystem::path gen_dir(Mechanism m) const;

  // Throws ConfigError naming the offending key.
  void validate() const;

  // Every key with its current value, one `key = value` line each.
  std::string to_text() const;
};

// Typed handle on one RunConfig field.
struct ConfigKey {
  std::string name;
  std::variant<int*, double*, uint64_t*, std::string*> target;
  std::string help;
};

std::vector<ConfigKey> config_keys(RunConfig& cfg);

// Sets `key` from text; ConfigError on unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// `key = value` lines; '#' starts a comment; blank lines ignored.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source);
RunConfig load_run_config(const std::filesystem::path& path);

// FOLEYGEN_SEED, when set, replaces every seed in the config.
void apply_seed_env(RunConfig& cfg);

}  // namespace foleygen
