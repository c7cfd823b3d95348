#pragma once

#include "foleygen/rvq_codec.hpp"

#include <cstdint>
#include <vector>

namespace foleygen {

// Delay-pattern layout of a TokenGrid: stream k is shifted right by k steps.
// S = L + n_q - 1 steps of n_q ids each; mandated slots hold pad_id.
struct StepSequence {
  int n_q = 0;
  int length = 0;  // L of the underlying grid
  int pad_id = 0;  // == codebook_size
  std::vector<int32_t> ids;  // step-major: ids[s * n_q + k]

  int steps() const { return length + n_q - 1; }
  int32_t& at(int s, int k) { return ids[static_cast<size_t>(s) * n_q + k]; }
  int32_t at(int s, int k) const { return ids[static_cast<size_t>(s) * n_q + k]; }
  bool operator==(const StepSequence&) const = default;
};

// Slot (s, k) must be pad exactly when s < k or s >= L + k.
constexpr bool is_mandated_pad(int step, int stream, int length) {
  return step < stream || step >= length + stream;
}

StepSequence apply_delay(const TokenGrid& g);

// Strict mode rejects any pad/code misplacement; lenient mode substitutes code
// 0 for pads found in code slots (codes in pad slots are still dropped).
TokenGrid remove_delay(const StepSequence& s, int frame_rate_a = 0, bool lenient = false);

}  // namespace foleygen
