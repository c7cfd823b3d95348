#pragma once

#include "foleygen/common.hpp"
#include "foleygen/toy_data.hpp"

#include <filesystem>
#include <string>

namespace foleygen {

struct VisualFeatures {
  MatD feats;  // T x D_v
  int frame_rate_v = 1;

  int frames() const { return static_cast<int>(feats.rows()); }
  int dim() const { return static_cast<int>(feats.cols()); }
};

inline constexpr double kVisualNoiseAmplitude = 0.01;

// Per visual frame: dims [0, n_classes) count events of each class, dim
// n_classes is the fractional onset of the frame's earliest event (0 if none),
// the remaining dims hold fixed noise drawn from `seed` (same for every track).
VisualFeatures encode_visual(const VisualTrack& track, int n_classes, int d_visual,
                             uint64_t seed);

// "VEMB" file: u32 T, u32 D_v, u32 frame_rate_v, then f32 row-major.
void save_embeddings(const std::filesystem::path& path, const VisualFeatures& f);
VisualFeatures load_external_embeddings(const std::filesystem::path& path);

// Linear projection to the decoder width: row t = feats[t] * weight + bias.
template <typename T>
Mat<T> project(const Mat<T>& feats, const Mat<T>& weight, const RowVec<T>& bias) {
  if (feats.cols() != weight.rows() || weight.cols() != bias.cols()) {
    throw std::invalid_argument("project: shape mismatch (" + std::to_string(feats.cols()) +
                                " features, weight " + std::to_string(weight.rows()) + "x" +
                                std::to_string(weight.cols()) + ", bias " +
                                std::to_string(bias.cols()) + ")");
  }
  Mat<T> out = feats * weight;
  out.rowwise() += bias;
  return out;
}

}  // namespace foleygen
