#pragma once

#include "foleygen/rvq_codec.hpp"
#include "foleygen/toy_data.hpp"

#include <span>
#include <vector>

namespace foleygen {

struct EmbedStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased
  int n = 0;
};

// Rows of `embeddings` are samples; needs at least two.
EmbedStats embed_stats(const MatD& embeddings);

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2). Eigenvalues
// below zero are clamped when within 1e-8 of it (relative to the spectrum's
// scale); anything more negative raises NumericalError.
double frechet_distance(const EmbedStats& a, const EmbedStats& b);

// Embedding used for the distance: the episode's mean latent frame.
Eigen::VectorXd episode_embedding(const LatentSequence& z);

struct LabelDist {
  std::vector<double> probs;  // n_classes classes, then silence
};

// Energy-proportional class distribution from per-class tone energy; an
// episode with no tone above the absolute floor is all silence.
LabelDist toy_classify(const Waveform& w, const EpisodeSpec& spec);

// sum p ln(p / q); 0 ln 0 = 0. When q is zero somewhere p is not, q is first
// smoothed by 1e-6 per entry and renormalized.
double label_kld(const LabelDist& p, const LabelDist& q);

inline constexpr double kOnsetHopSeconds = 0.01;
inline constexpr double kOnsetMergeSeconds = 0.05;
inline constexpr double kOnsetThresholdDb = 6.0;
// Noise floor is never taken below this fraction of the loudest hop energy.
inline constexpr double kOnsetFloorRelative = 0.01;
// Tones quieter than this amplitude count as silence.
inline constexpr double kSilenceAmplitude = 0.01;

// Per class: rectangular Goertzel energy per 10 ms hop, rising edges above
// the noise floor + 6 dB, same-class onsets within 50 ms merged.
std::vector<Event> detect_onsets(const Waveform& w, const EpisodeSpec& spec);

struct AlignmentScore {
  double precision = 0.0;
  double recall = 0.0;
  double class_accuracy = 0.0;
  int n_truth = 0;
  int n_detected = 0;
  int n_matched = 0;
  int n_class_correct = 0;
};

// Greedy one-to-one matching within the window, preferring same-class pairs,
// then smaller time offsets. Empty denominators give precision/recall 1 and
// class_accuracy 0.
AlignmentScore match_onsets(const std::vector<Event>& truth, const std::vector<Event>& detected,
                            double window_ms);

AlignmentScore alignment_score(const VisualTrack& truth, const Waveform& w,
                               const EpisodeSpec& spec, double window_ms = 100.0);

// Ratios recomputed from summed counts.
AlignmentScore pool_scores(std::span<const AlignmentScore> scores);

}  // namespace foleygen
