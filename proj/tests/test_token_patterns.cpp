#include "foleygen/token_patterns.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace foleygen;
using foleygen::testing::random_grid;

namespace {

// Oracle: the delay rule written out slot by slot.
StepSequence delay_oracle(const TokenGrid& g) {
  StepSequence s;
  s.n_q = g.n_q;
  s.length = g.length;
  s.pad_id = g.codebook_size;
  const int S = g.length + g.n_q - 1;
  for (int step = 0; step < S; ++step) {
    for (int k = 0; k < g.n_q; ++k) {
      const int l = step - k;
      s.ids.push_back(l >= 0 && l < g.length ? g.at(k, l) : g.codebook_size);
    }
  }
  return s;
}

}  // namespace

TEST_CASE("two streams, three frames") {
  TokenGrid g(2, 3, 10, 50);
  const int a = 1, b = 2, c = 3, d = 4, e = 5, f = 6;
  g.at(0, 0) = a;
  g.at(0, 1) = b;
  g.at(0, 2) = c;
  g.at(1, 0) = d;
  g.at(1, 1) = e;
  g.at(1, 2) = f;
  const StepSequence s = apply_delay(g);
  const int P = 10;
  CHECK(s.steps() == 4);
  CHECK(s.pad_id == P);
  CHECK(s.ids == std::vector<int32_t>{a, P, b, d, c, e, P, f});
  CHECK(remove_delay(s, 50) == g);
}

TEST_CASE("one stream is the identity") {
  Rng rng(1);
  const TokenGrid g = random_grid(1, 9, 7, rng);
  const StepSequence s = apply_delay(g);
  CHECK(s.steps() == 9);
  CHECK(s.ids == g.codes);
}

TEST_CASE("pad where a code belongs is rejected") {
  TokenGrid g(2, 3, 10, 50);
  StepSequence s = apply_delay(g);
  s.at(0, 1) = 3;  // step 0, stream 1 must be pad
  CHECK_THROWS_WITH_AS(remove_delay(s), doctest::Contains("step 0, stream 1"), FormatError);
  s = apply_delay(g);
  s.at(1, 1) = s.pad_id;
  CHECK_THROWS_AS(remove_delay(s), FormatError);
  // Lenient mode fills the missing code with 0.
  const TokenGrid fixed = remove_delay(s, 50, true);
  CHECK(fixed.at(1, 0) == 0);
  s = apply_delay(g);
  s.ids.pop_back();
  CHECK_THROWS_AS(remove_delay(s), std::invalid_argument);
}

TEST_CASE("delay matches the oracle and inverts on random grids") {
  Rng rng(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const int n_q = 1 + static_cast<int>(rng.below(6));
    const int L = 1 + static_cast<int>(rng.below(64));
    const int cb = 2 + static_cast<int>(rng.below(100));
    const TokenGrid g = random_grid(n_q, L, cb, rng);
    const StepSequence s = apply_delay(g);
    REQUIRE(s == delay_oracle(g));
    CHECK(s.steps() == L + n_q - 1);
    for (int step = 0; step < s.steps(); ++step) {
      for (int k = 0; k < n_q; ++k) {
        CHECK((s.at(step, k) == cb) == is_mandated_pad(step, k, L));
      }
    }
    CHECK(remove_delay(s, g.frame_rate_a) == g);
  }
}

TEST_CASE("pad-consistent random step sequences round trip") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    StepSequence s;
    s.n_q = 1 + static_cast<int>(rng.below(5));
    s.length = 1 + static_cast<int>(rng.below(40));
    s.pad_id = 16;
    for (int step = 0; step < s.steps(); ++step) {
      for (int k = 0; k < s.n_q; ++k) {
        s.ids.push_back(is_mandated_pad(step, k, s.length) ? 16
                                                            : static_cast<int32_t>(rng.below(16)));
      }
    }
    CHECK(apply_delay(remove_delay(s, 50)) == s);
  }
}
