#include "foleygen/attention_masks.hpp"
#include "foleygen/eval_metrics.hpp"
#include "foleygen/mask_checks.hpp"
#include "foleygen/pipeline.hpp"
#include "foleygen/run_config.hpp"
#include "foleygen/toy_data.hpp"
#include "test_util.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

using namespace foleygen;
using namespace foleygen::testing;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string summary;
};

struct Options {
  int threads = 1;
  std::string work;
};

// ---- 1: round trips ----

Outcome round_trips(const Options& opt) {
  const auto t0 = Clock::now();
  Rng rng(20240601);
  int delay_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n_q = 1 + static_cast<int>(rng.below(6));
    const int L = 1 + static_cast<int>(rng.below(64));
    const int cb = 2 + static_cast<int>(rng.below(2047));
    const TokenGrid g = random_grid(n_q, L, cb, rng);
    const StepSequence s = apply_delay(g);
    bool ok = s.steps() == L + n_q - 1;
    for (int step = 0; ok && step < s.steps(); ++step) {
      for (int k = 0; k < n_q; ++k) {
        const int l = step - k;
        const int32_t want = l >= 0 && l < L ? g.at(k, l) : cb;
        ok = ok && s.at(step, k) == want;
      }
    }
    ok = ok && remove_delay(s, g.frame_rate_a) == g;
    delay_failures += ok ? 0 : 1;
  }

  // Codec fit on the desk configuration's data, checked on unseen episodes.
  const RunConfig cfg;
  const EpisodeSpec spec = cfg.episode_spec();
  const FeaturizerConfig fcfg = cfg.featurizer();
  const auto train = synth_split(spec, cfg.data_seed, 300, 200, false, opt.threads);
  const auto held = synth_split(spec, cfg.data_seed, 300, 200, true, opt.threads);
  const RVQModel rvq = fit_codec(train, fcfg, cfg.rvq, cfg.codec_seed);
  int rvq_failures = 0;
  long frames_changed = 0;
  for (const Episode& ep : held) {
    const TokenGrid g = rvq_encode(rvq, featurize(ep.audio, fcfg));
    const TokenGrid again = rvq_encode(rvq, rvq_decode(rvq, g));
    if (again != g) {
      ++rvq_failures;
      for (int l = 0; l < g.length; ++l) {
        for (int k = 0; k < g.n_q; ++k) {
          if (g.at(k, l) != again.at(k, l)) {
            ++frames_changed;
            break;
          }
        }
      }
    }
  }
  const double secs = since(t0);
  std::ostringstream s;
  s << "delay bijection failures " << delay_failures << "/1000, rvq re-encode failures "
    << rvq_failures << "/" << held.size() << " (" << frames_changed << " frames), " << secs
    << " s (limit 10 s)";
  return {delay_failures == 0 && rvq_failures == 0 && secs < 10.0, s.str()};
}

// ---- 2: masks ----

Outcome mask_suite(const Options&) {
  long structural = 0;
  long structural_failed = 0;
  std::string first;
  for (int T = 1; T <= 6; ++T) {
    for (int S : {1, 2, 5, 51, 103, 160}) {
      for (double ra : {1.0, 2.0, 4.0, 50.0}) {
        for (Mechanism m : kAllMechanisms) {
          for (const InvariantCheck& c : check_mask_structure({m, T, S, ra, 1.0})) {
            ++structural;
            if (!c.passed) {
              ++structural_failed;
              if (first.empty()) {
                first = c.name + ": " + c.detail;
              }
            }
          }
        }
      }
    }
  }

  // Two visual frames, BOS plus four audio steps at 2 Hz audio / 1 Hz video.
  const char* expected_causal =
      "1000000\n1100000\n1010000\n1011000\n1011100\n1111110\n1111111\n";
  const char* expected_specific =
      "1000000\n1100000\n1010000\n1011000\n1011100\n0111110\n0111111\n";
  const char* expected_all =
      "1000000\n1100000\n1110000\n1111000\n1111100\n1111110\n1111111\n";
  int traced_failed = 0;
  traced_failed += build_mask({Mechanism::causal_visual, 2, 5, 2.0, 1.0}).to_text() != expected_causal;
  traced_failed +=
      build_mask({Mechanism::frame_specific, 2, 5, 2.0, 1.0}).to_text() != expected_specific;
  traced_failed += build_mask({Mechanism::all_frame, 2, 5, 2.0, 1.0}).to_text() != expected_all;

  long comparisons = 0;
  long efficacy_failed = 0;
  const ModelConfig mc = tiny_config();
  DecoderLM<double> model(mc);
  model.init(1);
  jitter(model, 2, 0.3);
  const DecoderLM<float> model_f = model.cast<float>();
  Rng rng(3);
  for (int T = 1; T <= 4; ++T) {
    for (Mechanism m : kAllMechanisms) {
      const TinyExample ex = random_example(mc, T, rng);
      const AttentionMask mask = mask_for(mc, m, T, ex.steps.steps());
      const auto inputs = model_inputs(ex.steps, mc.bos_id());
      for (const EfficacyResult& r :
           {check_mask_efficacy<double>(model, mask, ex.feats, inputs, 10u + T),
            check_mask_efficacy<float>(model_f, mask, ex.feats, inputs, 20u + T)}) {
        comparisons += r.comparisons;
        efficacy_failed += r.failures;
        if (r.failures > 0 && first.empty()) {
          first = r.first_failure;
        }
      }
    }
  }
  std::ostringstream s;
  s << "structural " << structural_failed << "/" << structural << " failed, hand-traced "
    << traced_failed << "/3 failed, efficacy " << efficacy_failed << "/" << comparisons
    << " logit rows changed";
  if (!first.empty()) {
    s << "; first: " << first;
  }
  return {structural_failed == 0 && traced_failed == 0 && efficacy_failed == 0 && comparisons > 0,
          s.str()};
}

// ---- 3: gradients ----

Outcome gradient_check(const Options&) {
  const auto t0 = Clock::now();
  const ModelConfig mc = tiny_config();
  DecoderLM<double> model(mc);
  model.init(7);
  jitter(model, 8, 0.3);
  Rng rng(9);
  double worst = 0.0;
  std::string where;
  size_t checked = 0;
  for (Mechanism m : kAllMechanisms) {
    const TinyExample ex = random_example(mc, 3, rng);
    const AttentionMask mask = mask_for(mc, m, 3, ex.steps.steps());
    for (bool null_cond : {false, true}) {
      const GradCheck r = check_gradients(model, ex.feats, null_cond, ex.steps, mask);
      checked += r.checked;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        where = std::string(mechanism_name(m)) + (null_cond ? "/null " : "/cond ") + r.worst;
      }
    }
  }
  const double secs = since(t0);
  std::ostringstream s;
  s << "max relative error " << worst << " (limit 1e-4) over " << checked << " partials";
  if (!where.empty()) {
    s << ", worst at " << where;
  }
  s << ", " << secs << " s (limit 60 s)";
  return {worst < 1e-4 && secs < 60.0, s.str()};
}

// ---- 4: overfit ----

Outcome overfit(const Options& opt) {
  const auto t0 = Clock::now();
  RunConfig cfg;
  const EpisodeSpec spec = cfg.episode_spec();
  const auto episodes = synth_split(spec, cfg.data_seed, 32, 0, false, opt.threads);
  const auto codec_data = synth_split(spec, cfg.data_seed, 300, 0, false, opt.threads);
  const RVQModel rvq = fit_codec(codec_data, cfg.featurizer(), cfg.rvq, cfg.codec_seed);
  const auto data = make_examples(episodes, rvq, cfg, opt.threads);

  DecoderLM<float> model(cfg.model_config());
  model.init(cfg.init_seed);
  Trainer trainer(model, cfg.train, cfg.mech(), opt.threads);
  double loss = teacher_forced_loss(model, data, cfg.mech(), opt.threads);
  const double initial = loss;
  TrainProgress progress;
  progress.stop = [&](int step) {
    if (step % 50 != 0) {
      return false;
    }
    loss = teacher_forced_loss(model, data, cfg.mech(), opt.threads);
    return loss < 0.1;
  };
  run_training(trainer, data, 2000, progress);
  loss = teacher_forced_loss(model, data, cfg.mech(), opt.threads);
  const double secs = since(t0);
  std::ostringstream s;
  s << "teacher-forced loss " << initial << " -> " << loss << " nats after " << trainer.step()
    << " steps (limit 0.1 within 2000), " << secs << " s (limit 600 s)";
  return {loss < 0.1 && trainer.step() <= 2000 && secs < 600.0, s.str()};
}

// ---- 5: codec refinement ----

Outcome codec_refinement(const Options& opt) {
  const RunConfig cfg;
  const EpisodeSpec spec = cfg.episode_spec();
  const FeaturizerConfig fcfg = cfg.featurizer();
  const auto train = synth_split(spec, cfg.data_seed, cfg.n_train, 100, false, opt.threads);
  const auto held = synth_split(spec, cfg.data_seed, cfg.n_train, 100, true, opt.threads);
  const RVQModel rvq = fit_codec(train, fcfg, cfg.rvq, cfg.codec_seed);

  std::vector<double> mse(static_cast<size_t>(rvq.n_q()), 0.0);
  long entries = 0;
  int single = 0;
  int identified = 0;
  for (const Episode& ep : held) {
    const LatentSequence z = featurize(ep.audio, fcfg);
    entries += z.frames.size();
    for (int k = 1; k <= rvq.n_q(); ++k) {
      const RVQModel mk = rvq.truncated(k);
      mse[static_cast<size_t>(k - 1)] +=
          (rvq_decode(mk, rvq_encode(mk, z)).frames - z.frames).squaredNorm();
    }
    if (ep.track.events.size() == 1) {
      ++single;
      LatentSequence rec = rvq_decode(rvq, rvq_encode(rvq, z));
      const LabelDist d = toy_classify(defeaturize(rec, fcfg), spec);
      const auto best = std::max_element(d.probs.begin(), d.probs.begin() + spec.n_classes);
      identified += static_cast<int>(best - d.probs.begin()) == ep.track.events[0].class_id;
    }
  }
  bool monotone = true;
  std::ostringstream s;
  s << "latent MSE by codebooks used:";
  for (size_t k = 0; k < mse.size(); ++k) {
    mse[k] /= static_cast<double>(entries);
    s << " " << k + 1 << ":" << mse[k];
    if (k > 0 && mse[k] > mse[k - 1]) {
      monotone = false;
    }
  }
  const double rate = single > 0 ? static_cast<double>(identified) / single : 0.0;
  s << (monotone ? " (non-increasing)" : " (INCREASES)") << "; class identified on "
    << identified << "/" << single << " single-event episodes = " << rate * 100.0
    << "% (limit 95%)";
  return {monotone && single > 0 && rate >= 0.95, s.str()};
}

// ---- 6: end to end ----

Outcome end_to_end(const Options& opt) {
  const auto t0 = Clock::now();
  RunConfig cfg;
  const EpisodeSpec spec = cfg.episode_spec();
  const auto train = synth_split(spec, cfg.data_seed, cfg.n_train, cfg.n_test, false, opt.threads);
  const auto test = synth_split(spec, cfg.data_seed, cfg.n_train, cfg.n_test, true, opt.threads);
  const RVQModel rvq = fit_codec(train, cfg.featurizer(), cfg.rvq, cfg.codec_seed);
  const auto data = make_examples(train, rvq, cfg, opt.threads);

  DecoderLM<float> model(cfg.model_config());
  model.init(cfg.init_seed);
  Trainer trainer(model, cfg.train, Mechanism::all_frame, opt.threads);
  TrainProgress progress;
  progress.log_every = 500;
  progress.on_log = [&](int step, const StepStats& st) {
    std::fprintf(stderr, "  step %5d  loss %.4f  (%.0f s)\n", step, st.loss, since(t0));
  };
  run_training(trainer, data, cfg.train.total_steps, progress);
  const double train_secs = since(t0);

  auto score = [&](double scale) {
    GenConfig g = cfg.gen;
    g.cfg_scale = scale;
    std::vector<Waveform> audio;
    for (auto& gen : generate_episodes(model, rvq, test, cfg, g, Mechanism::all_frame, opt.threads)) {
      audio.push_back(std::move(gen.audio));
    }
    return evaluate_generations(test, audio, cfg);
  };
  const EvalSummary guided = score(3.0);
  const EvalSummary unconditional = score(0.0);
  const double secs = since(t0);
  const double gap = guided.pooled.class_accuracy - unconditional.pooled.class_accuracy;

  if (!opt.work.empty()) {
    std::ofstream out(std::filesystem::path(opt.work) / "acceptance_end_to_end.kv");
    out << format_summary(guided, "cfg3.") << format_summary(unconditional, "cfg0.");
  }
  std::ostringstream s;
  s << cfg.train.total_steps << " steps on " << train.size() << " episodes (" << train_secs
    << " s); cfg 3: class_accuracy " << guided.pooled.class_accuracy << " (limit 0.8), recall "
    << guided.pooled.recall << " (limit 0.6) at " << cfg.window_ms << " ms on " << test.size()
    << " episodes; cfg 0: class_accuracy " << unconditional.pooled.class_accuracy << ", recall "
    << unconditional.pooled.recall << "; gap " << gap * 100.0 << " points (limit 10); " << secs
    << " s (limit 7200 s)";
  const bool pass = cfg.train.total_steps >= 5000 && train.size() >= 2000 && test.size() == 100 &&
                    cfg.window_ms == 250.0 && guided.pooled.class_accuracy >= 0.8 &&
                    guided.pooled.recall >= 0.6 && gap >= 0.10 && secs <= 7200.0;
  return {pass, s.str()};
}

// ---- 7: metric math ----

Outcome metric_math(const Options&) {
  auto stats = [](double mean, double var) {
    EmbedStats s;
    s.mean = Eigen::VectorXd::Constant(1, mean);
    s.cov = Eigen::MatrixXd::Constant(1, 1, var);
    s.n = 2;
    return s;
  };
  const double f_same = frechet_distance(stats(0, 1), stats(0, 1));
  const double f_shift = frechet_distance(stats(0, 1), stats(1, 1));
  const double f_scale = frechet_distance(stats(0, 1), stats(0, 4));
  const double kld = label_kld({{1.0, 0.0}}, {{0.5, 0.5}});
  const double errs[] = {std::abs(f_same), std::abs(f_shift - 1.0), std::abs(f_scale - 1.0),
                         std::abs(kld - std::log(2.0))};
  const double worst = *std::max_element(std::begin(errs), std::end(errs));
  std::ostringstream s;
  s.precision(17);
  s << "frechet " << f_same << ", " << f_shift << ", " << f_scale << " (want 0, 1, 1); kld "
    << kld << " (want ln 2); max error " << worst << " (limit 1e-9)";
  return {worst <= 1e-9, s.str()};
}

// ---- 8: attention comparison ----

Outcome compare_attention(const Options& opt) {
  const auto dir = opt.work.empty() ? scratch_dir("acceptance_compare")
                                    : std::filesystem::path(opt.work) / "compare";
  std::filesystem::create_directories(dir);
  RunConfig cfg;
  cfg.work_dir = (dir / "work").string();
  cfg.n_train = 200;
  cfg.n_test = 20;
  cfg.model.n_layers = 2;
  cfg.model.d_model = 64;
  cfg.model.d_ff = 128;
  cfg.train.total_steps = 300;
  cfg.train.warmup_steps = 50;
  cfg.train.batch_size = 8;
  cfg.log_every = 100;
  cfg.checkpoint_every = 1000;
  cfg.threads = opt.threads;
  cfg.validate();
  std::ostringstream log;
  std::string error;
  try {
    stage_synth_data(cfg, log);
    stage_train_codec(cfg, log);
    stage_compare_attention(cfg, log);
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::ifstream in(std::filesystem::path(cfg.work_dir) / "compare_attention.txt");
  std::ostringstream text;
  text << in.rdbuf();
  int rows = 0;
  int rows_ok = 0;
  std::istringstream lines(text.str());
  for (std::string line; std::getline(lines, line);) {
    for (Mechanism m : kAllMechanisms) {
      if (line.rfind(std::string(mechanism_name(m)) + " ", 0) == 0) {
        ++rows;
        rows_ok += line.size() >= 2 && line.substr(line.size() - 2) == "ok";
      }
    }
  }
  const bool header = text.str().find("reference expectation") != std::string::npos;
  std::ostringstream s;
  s << rows << "/3 mechanism rows, " << rows_ok << "/3 with invariants holding, header "
    << (header ? "present" : "missing");
  if (!error.empty()) {
    s << "; error: " << error;
  }
  return {error.empty() && header && rows == 3 && rows_ok == 3, s.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; one line per criterion."};
  std::vector<int> only;
  Options opt;
  opt.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--only", only, "Run just these criteria (1-8)");
  app.add_option("--threads", opt.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--work", opt.work, "Directory for artifacts (default: temp dir)");
  CLI11_PARSE(app, argc, argv);

  const Criterion criteria[] = {
      {1, "round-trip suite", round_trips},
      {2, "mask suite", mask_suite},
      {3, "gradient check", gradient_check},
      {4, "overfit check", overfit},
      {5, "codec refinement", codec_refinement},
      {6, "end-to-end toy task", end_to_end},
      {7, "metric math", metric_math},
      {8, "compare-attention report", compare_attention},
  };
  bool all = true;
  for (const Criterion& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) {
      continue;
    }
    Outcome o;
    try {
      o = c.run(opt);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.name << ": " << o.summary
              << std::endl;
  }
  return all ? 0 : 1;
}
