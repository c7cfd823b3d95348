#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace foleygen {

enum class Mechanism { all_frame, causal_visual, frame_specific };

std::string_view mechanism_name(Mechanism m);
Mechanism parse_mechanism(std::string_view name);
inline constexpr Mechanism kAllMechanisms[] = {Mechanism::all_frame, Mechanism::causal_visual,
                                               Mechanism::frame_specific};

struct MaskSpec {
  Mechanism mechanism = Mechanism::all_frame;
  int T = 1;  // visual frames
  int S = 1;  // audio positions, BOS at index 0
  double frame_rate_a = 50.0;
  double frame_rate_v = 1.0;
};

// Visual frame concurrent with audio position i (BOS shares frame 0):
// min(floor(max(i - 1, 0) * rate_v / rate_a), T - 1).
int frame_map(int i, double frame_rate_a, double frame_rate_v, int T);

// Boolean (T+S) x (T+S) matrix over [visual prefix | BOS | audio steps];
// rows are queries, columns keys.
class AttentionMask {
 public:
  AttentionMask() = default;
  AttentionMask(int T, int S);

  int T() const { return T_; }
  int S() const { return S_; }
  int size() const { return T_ + S_; }

  bool allowed(int query, int key) const {
    return bits_[static_cast<size_t>(query) * size() + key] != 0;
  }
  void set(int query, int key, bool v) {
    bits_[static_cast<size_t>(query) * size() + key] = v ? 1 : 0;
  }

  // `0`/`1` characters, one line per query row.
  std::string to_text() const;
  bool operator==(const AttentionMask&) const = default;

 private:
  int T_ = 0;
  int S_ = 0;
  std::vector<uint8_t> bits_;
};

AttentionMask build_mask(const MaskSpec& spec);

}  // namespace foleygen
