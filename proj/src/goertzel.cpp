#include "foleygen/goertzel.hpp"

#include <cmath>

namespace foleygen {

double goertzel_power(std::span<const float> x, double freq_hz, double sample_rate) {
  const double omega = 2.0 * 3.14159265358979323846 * freq_hz / sample_rate;
  const double coeff = 2.0 * std::cos(omega);
  double s1 = 0.0;
  double s2 = 0.0;
  for (float v : x) {
    const double s0 = static_cast<double>(v) + coeff * s1 - s2;
    s2 = s1;
    s1 = s0;
  }
  const double power = s1 * s1 + s2 * s2 - coeff * s1 * s2;
  return power > 0.0 ? power : 0.0;
}

}  // namespace foleygen
