#include "foleygen/run_config.hpp"

#include "foleygen/binary_io.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>

namespace foleygen {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return "";
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  if constexpr (std::is_same_v<T, double>) {
    char* end = nullptr;
    out = std::strtod(first, &end);
    if (value.empty() || end != last) {
      throw ConfigError("config key '" + key + "': '" + value + "' is not a number");
    }
  } else {
    const auto [ptr, ec] = std::from_chars(first, last, out);
    if (ec != std::errc() || ptr != last) {
      throw ConfigError("config key '" + key + "': '" + value + "' is not an integer");
    }
  }
  return out;
}

}  // namespace

RunConfig::RunConfig() {
  rvq.n_q = 4;
  rvq.codebook_size = 64;
  model.n_layers = 4;
  model.n_heads = 4;
  model.d_model = 128;
  model.d_ff = 256;
  model.max_T = 16;
  model.max_S = 512;
  train.lr = 1e-3;
  train.warmup_steps = 200;
  train.total_steps = 5000;
  train.batch_size = 16;
  train.cond_dropout_p = 0.1;
  train.seed = 5;
  gen.seed = 6;
}

EpisodeSpec RunConfig::episode_spec() const {
  return EpisodeSpec::with_defaults(duration_s, n_classes, max_events, sample_rate);
}

FeaturizerConfig RunConfig::featurizer() const {
  return FeaturizerConfig::with_defaults(EpisodeSpec::default_tones(n_classes), latent_dim, hop,
                                         sample_rate);
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m = model;
  m.n_q = rvq.n_q;
  m.codebook_size = rvq.codebook_size;
  m.d_visual = d_visual;
  m.frame_rate_a = static_cast<double>(sample_rate) / hop;
  m.frame_rate_v = frame_rate_v;
  return m;
}

std::filesystem::path RunConfig::checkpoint_path(Mechanism m) const {
  return std::filesystem::path(work_dir) / ("lm_" + std::string(mechanism_name(m)) + ".fglm");
}

std::filesystem::path RunConfig::gen_dir(Mechanism m) const {
  return std::filesystem::path(work_dir) / ("gen_" + std::string(mechanism_name(m)));
}

void RunConfig::validate() const {
  auto wrap = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("data", [&] { episode_spec().validate(); });
  wrap("codec", [&] {
    featurizer().validate();
    rvq.validate();
  });
  wrap("lm", [&] { model_config().validate(); });
  wrap("train", [&] { train.validate(); });
  wrap("gen", [&] { gen.validate(); });
  wrap("lm.mechanism", [&] { parse_mechanism(mechanism); });
  if (n_train < 1 || n_test < 1) {
    throw ConfigError("data.n_train and data.n_test must be >= 1");
  }
  if (d_visual < n_classes + 1) {
    throw ConfigError("visual.d_visual must be at least data.n_classes + 1");
  }
  if (frame_rate_v != 1) {
    throw ConfigError("visual.frame_rate_v: only 1 frame per second is supported");
  }
  if ((static_cast<long>(duration_s) * sample_rate) % hop != 0) {
    throw ConfigError("codec.hop must divide the episode length in samples");
  }
  if (duration_s * frame_rate_v > model.max_T) {
    throw ConfigError("lm.max_T is smaller than the number of visual frames");
  }
  if (threads < 1 || log_every < 1 || checkpoint_every < 1 || gen_episodes < 0) {
    throw ConfigError("threads, train.log_every, train.checkpoint_every must be >= 1");
  }
  if (!(window_ms > 0.0)) {
    throw ConfigError("eval.window_ms must be positive");
  }
}

std::vector<ConfigKey> config_keys(RunConfig& c) {
  return {
      {"paths.work_dir", &c.work_dir, "output directory for every stage"},
      {"data.duration_s", &c.duration_s, "episode length in seconds"},
      {"data.n_classes", &c.n_classes, "number of sound classes"},
      {"data.max_events", &c.max_events, "events per episode drawn from 1..max"},
      {"data.sample_rate", &c.sample_rate, "audio sample rate (Hz)"},
      {"data.n_train", &c.n_train, "training episodes"},
      {"data.n_test", &c.n_test, "test episodes"},
      {"data.seed", &c.data_seed, "episode seed"},
      {"visual.d_visual", &c.d_visual, "visual feature width"},
      {"visual.frame_rate_v", &c.frame_rate_v, "visual frames per second"},
      {"visual.seed", &c.visual_seed, "noise-dimension seed"},
      {"codec.hop", &c.hop, "samples per latent frame"},
      {"codec.d", &c.latent_dim, "latent dimensions (probe frequencies)"},
      {"codec.n_q", &c.rvq.n_q, "codebooks"},
      {"codec.codebook_size", &c.rvq.codebook_size, "entries per codebook"},
      {"codec.ema_decay", &c.rvq.ema_decay, "EMA decay"},
      {"codec.reseed_threshold", &c.rvq.reseed_threshold, "dead-code EMA mass"},
      {"codec.kmeans_iters", &c.rvq.kmeans_iters, "Lloyd iterations at init"},
      {"codec.ema_epochs", &c.rvq.ema_epochs, "EMA passes over the data"},
      {"codec.batch_frames", &c.rvq.batch_frames, "frames per EMA batch"},
      {"codec.buffer_frames", &c.rvq.buffer_frames, "k-means sample size"},
      {"codec.seed", &c.codec_seed, "codec training seed"},
      {"lm.n_layers", &c.model.n_layers, "transformer layers"},
      {"lm.n_heads", &c.model.n_heads, "attention heads"},
      {"lm.d_model", &c.model.d_model, "model width"},
      {"lm.d_ff", &c.model.d_ff, "feed-forward width"},
      {"lm.max_T", &c.model.max_T, "longest visual prefix"},
      {"lm.max_S", &c.model.max_S, "longest step sequence"},
      {"lm.dropout", &c.model.dropout_rate, "residual dropout"},
      {"lm.mechanism", &c.mechanism, "all_frame | causal_visual | frame_specific"},
      {"lm.seed", &c.init_seed, "parameter init seed"},
      {"train.lr", &c.train.lr, "peak learning rate"},
      {"train.warmup_steps", &c.train.warmup_steps, "linear warmup steps"},
      {"train.total_steps", &c.train.total_steps, "optimizer steps"},
      {"train.beta1", &c.train.beta1, "AdamW beta1"},
      {"train.beta2", &c.train.beta2, "AdamW beta2"},
      {"train.eps", &c.train.eps, "AdamW epsilon"},
      {"train.weight_decay", &c.train.weight_decay, "AdamW weight decay"},
      {"train.batch_size", &c.train.batch_size, "episodes per step"},
      {"train.cond_dropout_p", &c.train.cond_dropout_p, "null-condition probability"},
      {"train.grad_clip", &c.train.grad_clip, "global gradient norm cap (0 = off)"},
      {"train.seed", &c.train.seed, "batch/dropout seed"},
      {"train.log_every", &c.log_every, "steps between log lines"},
      {"train.checkpoint_every", &c.checkpoint_every, "steps between checkpoints"},
      {"gen.cfg_scale", &c.gen.cfg_scale, "guidance scale"},
      {"gen.top_k", &c.gen.top_k, "top-k"},
      {"gen.temperature", &c.gen.temperature, "sampling temperature"},
      {"gen.max_steps", &c.gen.max_steps, "decoding steps (0 = from duration)"},
      {"gen.seed", &c.gen.seed, "sampling seed"},
      {"gen.episodes", &c.gen_episodes, "test episodes to generate (0 = all)"},
      {"eval.window_ms", &c.window_ms, "onset matching window"},
      {"threads", &c.threads, "worker threads"},
  };
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (auto& k : config_keys(cfg)) {
    if (k.name != key) {
      continue;
    }
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        k.target);
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.resize(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    try {
      set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::vector<uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  RunConfig cfg;
  apply_config_text(cfg, std::string(bytes.begin(), bytes.end()), path.string());
  return cfg;
}

void apply_seed_env(RunConfig& cfg) {
  const char* env = std::getenv("FOLEYGEN_SEED");
  if (env == nullptr || *env == '\0') {
    return;
  }
  const auto seed = parse_number<uint64_t>("FOLEYGEN_SEED", env);
  for (uint64_t* s : {&cfg.data_seed, &cfg.visual_seed, &cfg.codec_seed, &cfg.init_seed,
                      &cfg.train.seed, &cfg.gen.seed}) {
    *s = seed;
  }
}

std::string RunConfig::to_text() const {
  RunConfig copy = *this;
  std::ostringstream out;
  out.precision(17);
  for (auto& k : config_keys(copy)) {
    out << k.name << " = ";
    std::visit([&](auto* p) { out << *p; }, k.target);
    out << "\n";
  }
  return out.str();
}

}  // namespace foleygen
