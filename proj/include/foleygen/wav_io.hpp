#pragma once

#include <filesystem>
#include <vector>

namespace foleygen {

// Mono audio; samples are expected in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 0;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// 16-bit PCM mono little-endian RIFF/WAVE. Samples outside [-1, 1] are clipped.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

int16_t to_pcm16(float x);

}  // namespace foleygen
