#include "foleygen/attention_masks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace foleygen {

std::string_view mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::all_frame:
      return "all_frame";
    case Mechanism::causal_visual:
      return "causal_visual";
    case Mechanism::frame_specific:
      return "frame_specific";
  }
  return "unknown";
}

Mechanism parse_mechanism(std::string_view name) {
  for (Mechanism m : kAllMechanisms) {
    if (mechanism_name(m) == name) {
      return m;
    }
  }
  throw std::invalid_argument("unknown attention mechanism '" + std::string(name) +
                              "' (expected all_frame, causal_visual or frame_specific)");
}

int frame_map(int i, double frame_rate_a, double frame_rate_v, int T) {
  const double step = std::max(i - 1, 0);
  // Multiply first: for integral rates the quotient is exact whenever it is
  // an integer.
  const auto frame = static_cast<long>(std::floor(step * frame_rate_v / frame_rate_a));
  return static_cast<int>(std::min<long>(frame, T - 1));
}

AttentionMask::AttentionMask(int T, int S)
    : T_(T), S_(S), bits_(static_cast<size_t>(T + S) * static_cast<size_t>(T + S), 0) {}

std::string AttentionMask::to_text() const {
  std::string out;
  out.reserve(static_cast<size_t>(size()) * (size() + 1));
  for (int q = 0; q < size(); ++q) {
    for (int k = 0; k < size(); ++k) {
      out.push_back(allowed(q, k) ? '1' : '0');
    }
    out.push_back('\n');
  }
  return out;
}

AttentionMask build_mask(const MaskSpec& spec) {
  if (spec.T < 1 || spec.S < 1) {
    throw std::invalid_argument("build_mask: T and S must be >= 1");
  }
  if (!(spec.frame_rate_a > 0.0) || !(spec.frame_rate_v > 0.0)) {
    throw std::invalid_argument("build_mask: frame rates must be positive");
  }
  AttentionMask mask(spec.T, spec.S);
  for (int q = 0; q < spec.T; ++q) {
    for (int k = 0; k <= q; ++k) {
      mask.set(q, k, true);
    }
  }
  for (int i = 0; i < spec.S; ++i) {
    const int q = spec.T + i;
    const int phi = frame_map(i, spec.frame_rate_a, spec.frame_rate_v, spec.T);
    for (int j = 0; j < spec.T; ++j) {
      bool allow = true;
      switch (spec.mechanism) {
        case Mechanism::all_frame:
          break;
        case Mechanism::causal_visual:
          allow = j <= phi;
          break;
        case Mechanism::frame_specific:
          allow = j == phi;
          break;
      }
      mask.set(q, j, allow);
    }
    for (int a = 0; a <= i; ++a) {
      mask.set(q, spec.T + a, true);
    }
  }
  return mask;
}

}  // namespace foleygen
