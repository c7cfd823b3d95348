#include "foleygen/attention_masks.hpp"
#include "foleygen/mask_checks.hpp"

#include <doctest.h>

using namespace foleygen;

namespace {

// Two visual frames, BOS plus four audio steps at 2 Hz audio / 1 Hz video.
MaskSpec two_frame_spec(Mechanism m) {
  MaskSpec s;
  s.mechanism = m;
  s.T = 2;
  s.S = 5;
  s.frame_rate_a = 2.0;
  s.frame_rate_v = 1.0;
  return s;
}

std::vector<int> visual_keys(const AttentionMask& m, int audio_step) {
  std::vector<int> out;
  for (int j = 0; j < m.T(); ++j) {
    if (m.allowed(m.T() + audio_step, j)) {
      out.push_back(j);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("frame map") {
  CHECK(frame_map(0, 2.0, 1.0, 2) == 0);
  CHECK(frame_map(1, 2.0, 1.0, 2) == 0);
  CHECK(frame_map(2, 2.0, 1.0, 2) == 0);
  CHECK(frame_map(3, 2.0, 1.0, 2) == 1);
  CHECK(frame_map(4, 2.0, 1.0, 2) == 1);
  CHECK(frame_map(40, 2.0, 1.0, 2) == 1);
  for (int i = 1; i < 20; ++i) {
    CHECK(frame_map(i, 1.0, 1.0, 7) == std::min(i - 1, 6));
  }
  CHECK(frame_map(50, 50.0, 1.0, 2) == 0);
  CHECK(frame_map(51, 50.0, 1.0, 2) == 1);
}

TEST_CASE("hand-traced masks") {
  const AttentionMask fs = build_mask(two_frame_spec(Mechanism::frame_specific));
  const AttentionMask cv = build_mask(two_frame_spec(Mechanism::causal_visual));
  const AttentionMask af = build_mask(two_frame_spec(Mechanism::all_frame));
  for (int i : {1, 2}) {
    CHECK(visual_keys(fs, i) == std::vector<int>{0});
    CHECK(visual_keys(cv, i) == std::vector<int>{0});
  }
  for (int i : {3, 4}) {
    CHECK(visual_keys(fs, i) == std::vector<int>{1});
    CHECK(visual_keys(cv, i) == std::vector<int>{0, 1});
  }
  for (int i = 0; i < 5; ++i) {
    CHECK(visual_keys(af, i) == std::vector<int>{0, 1});
  }
  CHECK(cv.to_text() ==
        "1000000\n"
        "1100000\n"
        "1010000\n"
        "1011000\n"
        "1011100\n"
        "1111110\n"
        "1111111\n");
  CHECK(fs.to_text() ==
        "1000000\n"
        "1100000\n"
        "1010000\n"
        "1011000\n"
        "1011100\n"
        "0111110\n"
        "0111111\n");
}

TEST_CASE("structural invariants for many shapes") {
  for (int T = 1; T <= 5; ++T) {
    for (int S : {1, 2, 7, 60, 130}) {
      for (double ra : {1.0, 2.0, 50.0}) {
        MaskSpec spec{Mechanism::all_frame, T, S, ra, 1.0};
        AttentionMask masks[3];
        for (int m = 0; m < 3; ++m) {
          spec.mechanism = kAllMechanisms[m];
          masks[m] = build_mask(spec);
          CHECK(build_mask(spec) == masks[m]);
          for (const InvariantCheck& c : check_mask_structure(spec)) {
            CHECK_MESSAGE(c.passed, c.name << ": " << c.detail);
          }
        }
        const int n = T + S;
        for (int q = 0; q < n; ++q) {
          for (int k = 0; k < n; ++k) {
            // frame_specific, causal_visual, all_frame
            if (masks[2].allowed(q, k)) {
              CHECK(masks[1].allowed(q, k));
            }
            if (masks[1].allowed(q, k)) {
              CHECK(masks[0].allowed(q, k));
            }
          }
        }
      }
    }
  }
}

TEST_CASE("mechanism names") {
  for (Mechanism m : kAllMechanisms) {
    CHECK(parse_mechanism(mechanism_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_mechanism("cross"), std::invalid_argument);
  CHECK_THROWS_AS(build_mask(MaskSpec{Mechanism::all_frame, 0, 3, 2.0, 1.0}),
                  std::invalid_argument);
}
