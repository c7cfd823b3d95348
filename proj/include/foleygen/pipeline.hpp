#pragma once

#include "foleygen/eval_metrics.hpp"
#include "foleygen/inference.hpp"
#include "foleygen/run_config.hpp"
#include "foleygen/toy_data.hpp"
#include "foleygen/trainer.hpp"

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace foleygen {

// ---- in-memory stages ----

std::vector<Episode> synth_split(const EpisodeSpec& spec, uint64_t seed, int n_train, int n_test,
                                 bool test_split, int threads);

RVQModel fit_codec(std::span<const Episode> train, const FeaturizerConfig& fcfg,
                   const RVQConfig& rcfg, uint64_t seed);

MatD visual_features_for(const VisualTrack& track, const RunConfig& cfg);

std::vector<TrainingExample> make_examples(std::span<const Episode> episodes,
                                           const RVQModel& rvq, const RunConfig& cfg, int threads);

// Batch for a given step, drawn with replacement; depends only on (seed, step).
std::vector<size_t> batch_indices(uint64_t seed, int step, size_t n_examples, int batch_size);

struct TrainProgress {
  int log_every = 100;
  std::function<void(int step, const StepStats&)> on_log;
  int checkpoint_every = 0;
  std::function<void(int step)> on_checkpoint;
  // Stop early once this returns true; checked after every step.
  std::function<bool(int step)> stop;
};

// Runs the trainer from its current step up to `total_steps`.
void run_training(Trainer& trainer, std::span<const TrainingExample> data, int total_steps,
                  const TrainProgress& progress);

// One generation per episode; sampling seed mixes gen.seed with the index.
std::vector<Generation> generate_episodes(const DecoderLM<float>& model, const RVQModel& rvq,
                                          std::span<const Episode> episodes, const RunConfig& cfg,
                                          const GenConfig& gen, Mechanism mech, int threads);

struct EvalSummary {
  int n_episodes = 0;
  AlignmentScore pooled;
  double mean_kld = 0.0;  // per-pair mean
  double frechet = 0.0;
};

EvalSummary evaluate_generations(std::span<const Episode> truth,
                                 std::span<const Waveform> generated, const RunConfig& cfg);

std::string format_summary(const EvalSummary& s, const std::string& prefix);

// ---- file-backed stages used by the CLI ----

struct GenerateOptions {
  std::string checkpoint;    // overrides the per-mechanism default
  std::string features;      // external VEMB file; generates a single clip
  std::string dump_mask;     // writes the 0/1 mask grid here
  std::string output;        // stem for single-clip output
};

void stage_synth_data(const RunConfig& cfg, std::ostream& log);
void stage_train_codec(const RunConfig& cfg, std::ostream& log);
void stage_train_lm(const RunConfig& cfg, Mechanism mech, bool resume, std::ostream& log);
void stage_generate(const RunConfig& cfg, Mechanism mech, const GenerateOptions& opt,
                    std::ostream& log);
EvalSummary stage_eval(const RunConfig& cfg, Mechanism mech, std::ostream& log);
void stage_compare_attention(const RunConfig& cfg, std::ostream& log);

}  // namespace foleygen
