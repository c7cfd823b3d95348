#pragma once

#include "foleygen/attention_masks.hpp"
#include "foleygen/decoder_lm.hpp"
#include "foleygen/rvq_codec.hpp"
#include "foleygen/token_patterns.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace foleygen {

struct GenConfig {
  double cfg_scale = 3.0;
  int top_k = 32;
  double temperature = 1.0;
  int max_steps = 0;  // S; 0 derives it from the visual duration
  uint64_t seed = 0;

  void validate() const;
};

// scale * cond + (1 - scale) * uncond, i.e. uncond + scale * (cond - uncond)
// written so that scale 1 and scale 0 reproduce an input exactly.
std::vector<double> cfg_combine(std::span<const double> cond, std::span<const double> uncond,
                                double scale);

// Softmax of logits/temperature over the k largest entries (ties -> lower
// index), sampled by inverse CDF from one uniform draw.
int top_k_sample(std::span<const double> logits, int k, double temperature, Rng& rng);

struct Generation {
  StepSequence steps;
  TokenGrid grid;
  LatentSequence latents;
  Waveform audio;
};

// S derived from the configuration and visual length; throws if it exceeds
// the model's max_S.
int generation_steps(const ModelConfig& mc, const GenConfig& g, int visual_frames);

// Autoregressive sampling from BOS with classifier-free guidance. Pad and BOS
// ids are never sampled; mandated pad slots are filled directly. With
// use_cache=false every step replays the whole prefix from scratch.
Generation generate(const DecoderLM<float>& model, const RVQModel& rvq,
                    const FeaturizerConfig& fcfg, const MatD& feats, const GenConfig& g,
                    Mechanism mech, bool use_cache = true);

// Same sampler with only the conditional pass.
Generation generate_conditional(const DecoderLM<float>& model, const RVQModel& rvq,
                                const FeaturizerConfig& fcfg, const MatD& feats,
                                const GenConfig& g, Mechanism mech);

}  // namespace foleygen
