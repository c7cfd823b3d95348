#include "foleygen/visual_features.hpp"

#include "foleygen/binary_io.hpp"

#include <algorithm>
#include <cmath>

namespace foleygen {

VisualFeatures encode_visual(const VisualTrack& track, int n_classes, int d_visual,
                             uint64_t seed) {
  if (d_visual < n_classes + 1) {
    throw std::invalid_argument("encode_visual: D_v=" + std::to_string(d_visual) +
                                " is too small for " + std::to_string(n_classes) +
                                " classes plus the onset dim");
  }
  const int frames = track.n_frames();
  if (frames < 1) {
    throw std::invalid_argument("encode_visual: track has no visual frames");
  }
  VisualFeatures f;
  f.frame_rate_v = track.frame_rate_v;
  f.feats = MatD::Zero(frames, d_visual);
  std::vector<bool> has_onset(static_cast<size_t>(frames), false);
  for (const Event& e : track.events) {
    if (e.class_id < 0 || e.class_id >= n_classes) {
      throw std::invalid_argument("encode_visual: class id out of range");
    }
    const double pos = e.onset_s * track.frame_rate_v;
    const int t = std::clamp(static_cast<int>(std::floor(pos)), 0, frames - 1);
    f.feats(t, e.class_id) += 1.0;
    const double frac = pos - t;
    if (!has_onset[static_cast<size_t>(t)] || frac < f.feats(t, n_classes)) {
      f.feats(t, n_classes) = frac;
      has_onset[static_cast<size_t>(t)] = true;
    }
  }
  Rng rng(seed);
  for (int t = 0; t < frames; ++t) {
    for (int j = n_classes + 1; j < d_visual; ++j) {
      f.feats(t, j) = kVisualNoiseAmplitude * (2.0 * rng.uniform() - 1.0);
    }
  }
  return f;
}

void save_embeddings(const std::filesystem::path& path, const VisualFeatures& f) {
  ByteWriter out;
  out.magic("VEMB");
  out.u32(static_cast<uint32_t>(f.frames()));
  out.u32(static_cast<uint32_t>(f.dim()));
  out.u32(static_cast<uint32_t>(f.frame_rate_v));
  for (Eigen::Index i = 0; i < f.feats.size(); ++i) {
    out.f32(static_cast<float>(f.feats.data()[i]));
  }
  out.save(path);
}

VisualFeatures load_external_embeddings(const std::filesystem::path& path) {
  ByteReader in = ByteReader::open(path);
  in.expect_magic("VEMB");
  const uint32_t frames = in.u32();
  const uint32_t dim = in.u32();
  const uint32_t rate = in.u32();
  if (frames == 0) {
    throw FormatError(path.string() + ": T=0, at least one visual frame is required");
  }
  if (dim == 0 || rate == 0) {
    throw FormatError(path.string() + ": D_v and frame_rate_v must be positive");
  }
  const uint64_t expected = 16 + static_cast<uint64_t>(frames) * dim * 4;
  if (in.size() != expected) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) +
                      " bytes for T=" + std::to_string(frames) + ", D_v=" + std::to_string(dim) +
                      " but file has " + std::to_string(in.size()));
  }
  VisualFeatures f;
  f.frame_rate_v = static_cast<int>(rate);
  f.feats.resize(frames, dim);
  for (Eigen::Index i = 0; i < f.feats.size(); ++i) {
    f.feats.data()[i] = in.f32();
    if (!std::isfinite(f.feats.data()[i])) {
      throw FormatError(path.string() + ": non-finite feature value");
    }
  }
  return f;
}

}  // namespace foleygen
