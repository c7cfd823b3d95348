#include "foleygen/wav_io.hpp"

#include "foleygen/binary_io.hpp"
#include "foleygen/common.hpp"

#include <algorithm>
#include <cmath>

namespace foleygen {

int16_t to_pcm16(float x) {
  const float c = std::clamp(x, -1.0f, 1.0f);
  return static_cast<int16_t>(std::lround(c * 32767.0f));
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto data_bytes = static_cast<uint32_t>(w.samples.size() * 2);
  ByteWriter out;
  out.magic("RIFF");
  out.u32(36 + data_bytes);
  out.magic("WAVE");
  out.magic("fmt ");
  out.u32(16);
  out.u16(1);  // PCM
  out.u16(1);  // mono
  out.u32(static_cast<uint32_t>(w.sample_rate));
  out.u32(static_cast<uint32_t>(w.sample_rate) * 2);
  out.u16(2);
  out.u16(16);
  out.magic("data");
  out.u32(data_bytes);
  for (float s : w.samples) {
    out.u16(static_cast<uint16_t>(to_pcm16(s)));
  }
  out.save(path);
}

Waveform read_wav(const std::filesystem::path& path) {
  ByteReader in = ByteReader::open(path);
  in.expect_magic("RIFF");
  in.u32();
  in.expect_magic("WAVE");

  Waveform w;
  bool have_fmt = false;
  while (in.remaining() >= 8) {
    const std::string tag = in.fixed(4);
    const uint32_t size = in.u32();
    if (tag == "fmt ") {
      in.require(size);
      const uint16_t format = in.u16();
      const uint16_t channels = in.u16();
      w.sample_rate = static_cast<int>(in.u32());
      in.u32();
      in.u16();
      const uint16_t bits = in.u16();
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(path.string() + ": only 16-bit PCM mono is supported");
      }
      in.skip(size - 16);
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) {
        throw FormatError(path.string() + ": data chunk before fmt chunk");
      }
      in.require(size);
      w.samples.resize(size / 2);
      for (float& s : w.samples) {
        s = static_cast<float>(static_cast<int16_t>(in.u16())) / 32767.0f;
      }
      return w;
    } else {
      in.skip(size + (size & 1));
    }
  }
  throw FormatError(path.string() + ": no data chunk");
}

}  // namespace foleygen
