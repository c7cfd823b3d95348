#include "foleygen/token_patterns.hpp"

#include "foleygen/common.hpp"

#include <string>

namespace foleygen {

StepSequence apply_delay(const TokenGrid& g) {
  StepSequence s;
  s.n_q = g.n_q;
  s.length = g.length;
  s.pad_id = g.codebook_size;
  s.ids.assign(static_cast<size_t>(s.steps()) * s.n_q, s.pad_id);
  for (int k = 0; k < g.n_q; ++k) {
    for (int l = 0; l < g.length; ++l) {
      s.at(l + k, k) = g.at(k, l);
    }
  }
  return s;
}

TokenGrid remove_delay(const StepSequence& s, int frame_rate_a, bool lenient) {
  if (s.n_q < 1 || s.length < 1 ||
      s.ids.size() != static_cast<size_t>(s.steps()) * static_cast<size_t>(s.n_q)) {
    throw std::invalid_argument("remove_delay: inconsistent step sequence shape");
  }
  TokenGrid g(s.n_q, s.length, s.pad_id, frame_rate_a);
  for (int step = 0; step < s.steps(); ++step) {
    for (int k = 0; k < s.n_q; ++k) {
      const int32_t id = s.at(step, k);
      const bool pad_slot = is_mandated_pad(step, k, s.length);
      if (pad_slot) {
        if (id != s.pad_id && !lenient) {
          throw FormatError("remove_delay: step " + std::to_string(step) + ", stream " +
                            std::to_string(k) + " must be pad but holds " + std::to_string(id));
        }
        continue;
      }
      int32_t code = id;
      if (id < 0 || id >= s.pad_id) {
        if (!lenient) {
          throw FormatError("remove_delay: step " + std::to_string(step) + ", stream " +
                            std::to_string(k) + " must hold a code but holds " +
                            std::to_string(id));
        }
        code = 0;
      }
      g.at(k, step - k) = code;
    }
  }
  return g;
}

}  // namespace foleygen
