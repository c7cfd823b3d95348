#pragma once

#include "foleygen/attention_masks.hpp"
#include "foleygen/decoder_lm.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace foleygen {

struct InvariantCheck {
  std::string name;
  bool passed = true;
  std::string detail;  // first violation, if any
};

// Structural rules of a mask built from `spec`: no empty rows, causal visual
// prefix that never sees audio, causal audio block, the mechanism's
// audio-to-visual rule, nesting against the other two mechanisms and (for
// causal_visual) monotone visual sets.
std::vector<InvariantCheck> check_mask_structure(const MaskSpec& spec);

// Positions whose inputs can influence the output at `query` after `hops`
// attention layers.
std::vector<uint8_t> reachable_keys(const AttentionMask& mask, int query, int hops);

struct EfficacyResult {
  long comparisons = 0;  // logit rows compared
  long failures = 0;
  std::string first_failure;
};

// Perturbs each visual frame and a spread of audio input rows, then checks
// that logits of every query that cannot reach the perturbed position are
// bit-identical.
template <typename T>
EfficacyResult check_mask_efficacy(const DecoderLM<T>& model, const AttentionMask& mask,
                                   const MatD& feats, std::span<const int32_t> inputs,
                                   uint64_t seed);

}  // namespace foleygen
