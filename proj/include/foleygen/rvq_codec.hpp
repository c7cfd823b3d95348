#pragma once

#include "foleygen/common.hpp"
#include "foleygen/wav_io.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace foleygen {

struct FeaturizerConfig {
  int hop = 160;
  int sample_rate = 8000;
  std::vector<double> probe_freqs;

  int d() const { return static_cast<int>(probe_freqs.size()); }
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }
  // Amplitude of an on-bin sinusoid is sqrt(E) / (hop / 2).
  double amplitude_scale() const { return hop / 2.0; }

  // Tone frequencies first, then their harmonics (2f, 3f, ...) until `d`
  // distinct probes below Nyquist are collected.
  static FeaturizerConfig with_defaults(const std::vector<double>& tones, int d, int hop,
                                        int sample_rate);
  void validate() const;
};

struct LatentSequence {
  MatD frames;  // L x d
  double frame_rate_a = 0.0;

  int length() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
};

// frame l, dim i = log(1 + Goertzel energy of probe i over samples
// [l*hop, (l+1)*hop)). Length must be a multiple of hop.
LatentSequence featurize(const Waveform& w, const FeaturizerConfig& cfg);

// Inverse of featurize for on-bin probes: per frame a sum of sinusoids with
// amplitude sqrt(exp(z) - 1) / (hop/2), phase-continuous across frames.
// Negative latents are treated as zero; output is clipped to [-1, 1].
Waveform defeaturize(const LatentSequence& z, const FeaturizerConfig& cfg);

struct RVQConfig {
  int n_q = 4;
  int codebook_size = 64;
  double ema_decay = 0.99;
  double reseed_threshold = 2.0;
  int kmeans_iters = 20;
  int ema_epochs = 3;
  int batch_frames = 1024;
  int buffer_frames = 20000;

  void validate() const;
};

struct RVQModel {
  RVQConfig config;
  int dim = 0;
  std::vector<MatD> codebooks;  // n_q x (codebook_size x dim)
  std::vector<Eigen::VectorXd> ema_counts;
  std::vector<MatD> ema_sums;

  int n_q() const { return static_cast<int>(codebooks.size()); }
  int codebook_size() const { return config.codebook_size; }
  // Copy restricted to the first k codebooks.
  RVQModel truncated(int k) const;
};

struct TokenGrid {
  int n_q = 0;
  int length = 0;  // L
  int codebook_size = 0;
  int frame_rate_a = 0;
  std::vector<int32_t> codes;  // codebook-major: codes[k * L + l]

  TokenGrid() = default;
  TokenGrid(int n_q, int length, int codebook_size, int frame_rate_a);

  int32_t& at(int k, int l) { return codes[static_cast<size_t>(k) * length + l]; }
  int32_t at(int k, int l) const { return codes[static_cast<size_t>(k) * length + l]; }
  bool operator==(const TokenGrid&) const = default;
};

// Stage-wise fit: k-means++ / Lloyd on a sampled buffer of stage residuals,
// then EMA refinement over minibatches with reseeding of clusters whose EMA
// mass falls below reseed_threshold. Stages after the first keep entry 0
// pinned at the zero vector, so adding a stage never increases a frame's
// error. Centroids are rounded to f32 so saved models encode identically.
RVQModel train_codebooks(std::span<const LatentSequence> latents, const RVQConfig& cfg,
                         uint64_t seed);

// Greedy residual encoding; argmin ties go to the lowest index.
TokenGrid rvq_encode(const RVQModel& m, const LatentSequence& z);
// Also returns the final residual of every frame (L x d).
TokenGrid rvq_encode(const RVQModel& m, const LatentSequence& z, MatD* final_residual);

LatentSequence rvq_decode(const RVQModel& m, const TokenGrid& g);

void save_tokens(const std::filesystem::path& path, const TokenGrid& g);
TokenGrid load_tokens(const std::filesystem::path& path);

void save_rvq(const std::filesystem::path& path, const RVQModel& m);
RVQModel load_rvq(const std::filesystem::path& path);

}  // namespace foleygen
