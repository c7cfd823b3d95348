#pragma once

#include "foleygen/attention_masks.hpp"
#include "foleygen/decoder_lm.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace foleygen {

struct TrainConfig {
  double lr = 1e-4;
  int warmup_steps = 4000;
  int total_steps = 20000;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  int batch_size = 16;
  double cond_dropout_p = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  uint64_t seed = 0;

  void validate() const;
};

// Linear ramp 0 -> lr over warmup_steps, constant afterwards.
double lr_schedule(int step, const TrainConfig& t);

struct TrainingExample {
  MatD feats;  // T x D_v
  StepSequence steps;
};

struct StepStats {
  double loss = 0.0;
  int null_conditioned = 0;  // examples that saw the null row this step
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct AdamState {
  std::vector<float> m;
  std::vector<float> v;
};

class MaskCache {
 public:
  MaskCache(Mechanism mech, double frame_rate_a, double frame_rate_v)
      : mech_(mech), rate_a_(frame_rate_a), rate_v_(frame_rate_v) {}
  const AttentionMask& get(int T, int S);
  Mechanism mechanism() const { return mech_; }

 private:
  Mechanism mech_;
  double rate_a_;
  double rate_v_;
  std::map<std::pair<int, int>, AttentionMask> masks_;
};

// Owns the optimizer state; mutates the model it was given. Gradients are
// computed per example (up to `threads` at a time) and summed in example
// order, so results do not depend on the thread count.
class Trainer {
 public:
  Trainer(DecoderLM<float>& model, const TrainConfig& cfg, Mechanism mech, int threads);

  StepStats train_step(std::span<const TrainingExample> batch);

  int step() const { return step_; }
  void set_step(int s) { step_ = s; }
  AdamState& adam() { return adam_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  DecoderLM<float>& model_;
  TrainConfig cfg_;
  MaskCache masks_;
  int threads_;
  int step_ = 0;
  AdamState adam_;
  // Aligned so vectorized reductions into a slot do not depend on which slot
  // an example lands in.
  std::vector<std::vector<float, Eigen::aligned_allocator<float>>> slots_;
};

// Mean teacher-forced loss with the visual condition present and no dropout.
double teacher_forced_loss(const DecoderLM<float>& model, std::span<const TrainingExample> data,
                           Mechanism mech, int threads);

}  // namespace foleygen
