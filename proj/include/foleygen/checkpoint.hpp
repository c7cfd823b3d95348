#pragma once

#include "foleygen/attention_masks.hpp"
#include "foleygen/decoder_lm.hpp"
#include "foleygen/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace foleygen {

struct Checkpoint {
  DecoderLM<float> model;
  Mechanism mechanism = Mechanism::all_frame;
  uint64_t step = 0;
  std::optional<AdamState> adam;
};

// "FGLM" file: u32 version, config block, u32 mechanism, u64 step, u32 tensor
// count, then per tensor: name, u32 rows, u32 cols, f32 data. Optimizer
// moments are stored as extra "adam.m/<name>" and "adam.v/<name>" tensors.
void save_checkpoint(const std::filesystem::path& path, const DecoderLM<float>& model,
                     Mechanism mech, uint64_t step, const AdamState* adam);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace foleygen
