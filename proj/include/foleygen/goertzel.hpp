#pragma once

#include <span>

namespace foleygen {

// |sum_n x[n] e^{-j 2 pi f n / fs}|^2 via the Goertzel recurrence.
double goertzel_power(std::span<const float> x, double freq_hz, double sample_rate);

}  // namespace foleygen
