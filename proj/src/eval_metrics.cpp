#include "foleygen/eval_metrics.hpp"

#include "foleygen/goertzel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

namespace foleygen {

namespace {

constexpr double kEigenTolerance = 1e-8;
constexpr double kKldEpsilon = 1e-6;

// Symmetric PSD square root; negative eigenvalues within tolerance are zeroed.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) {
    throw NumericalError(std::string("frechet_distance: eigensolver failed on ") + what);
  }
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < 0.0) {
      if (ev(i) < -kEigenTolerance * scale) {
        throw NumericalError(std::string("frechet_distance: ") + what + " has eigenvalue " +
                             std::to_string(ev(i)) + ", not positive semidefinite");
      }
      ev(i) = 0.0;
    }
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

// Hop energies per class: rows = classes, cols = hops.
MatD class_hop_energy(const Waveform& w, const EpisodeSpec& spec, int hop) {
  const size_t n_hops = w.samples.size() / static_cast<size_t>(hop);
  MatD e(spec.n_classes, static_cast<Eigen::Index>(n_hops));
  for (int c = 0; c < spec.n_classes; ++c) {
    for (size_t h = 0; h < n_hops; ++h) {
      e(c, static_cast<Eigen::Index>(h)) = goertzel_power(
          std::span<const float>(w.samples).subspan(h * hop, static_cast<size_t>(hop)),
          spec.tone_table[static_cast<size_t>(c)], spec.sample_rate);
    }
  }
  return e;
}

// Goertzel energy of an on-bin sinusoid with amplitude kSilenceAmplitude.
double silence_energy(int hop) {
  const double a = kSilenceAmplitude * hop / 2.0;
  return a * a;
}

int onset_hop(const EpisodeSpec& spec) {
  return static_cast<int>(std::lround(kOnsetHopSeconds * spec.sample_rate));
}

void check_rate(const Waveform& w, const EpisodeSpec& spec, const char* who) {
  if (w.sample_rate != spec.sample_rate) {
    throw std::invalid_argument(std::string(who) + ": waveform is " +
                                std::to_string(w.sample_rate) + " Hz, spec expects " +
                                std::to_string(spec.sample_rate) + " Hz");
  }
}

}  // namespace

EmbedStats embed_stats(const MatD& embeddings) {
  const auto n = embeddings.rows();
  if (n < 2) {
    throw std::invalid_argument("embed_stats: need at least 2 embeddings, got " +
                                std::to_string(n));
  }
  EmbedStats s;
  s.n = static_cast<int>(n);
  s.mean = embeddings.colwise().mean().transpose();
  const MatD centered = embeddings.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return s;
}

double frechet_distance(const EmbedStats& a, const EmbedStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != a.mean.size() ||
      b.cov.rows() != b.mean.size()) {
    throw std::invalid_argument("frechet_distance: embedding dimensions differ");
  }
  const Eigen::MatrixXd sa = psd_sqrt(a.cov, "first covariance");
  const Eigen::MatrixXd inner = sa * b.cov * sa;
  const Eigen::MatrixXd root = psd_sqrt(inner, "covariance product");
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
                   2.0 * root.trace();
  return std::max(0.0, d);
}

Eigen::VectorXd episode_embedding(const LatentSequence& z) {
  if (z.length() < 1) {
    throw std::invalid_argument("episode_embedding: empty latent sequence");
  }
  return z.frames.colwise().mean().transpose();
}

LabelDist toy_classify(const Waveform& w, const EpisodeSpec& spec) {
  check_rate(w, spec, "toy_classify");
  const int hop = onset_hop(spec);
  const MatD e = class_hop_energy(w, spec, hop);
  LabelDist out;
  out.probs.assign(static_cast<size_t>(spec.n_classes) + 1, 0.0);
  const double floor = silence_energy(hop);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(spec.n_classes);
  for (Eigen::Index c = 0; c < e.rows(); ++c) {
    for (Eigen::Index h = 0; h < e.cols(); ++h) {
      if (e(c, h) >= floor) {
        mass(c) += e(c, h);
      }
    }
  }
  const double total = mass.sum();
  if (!(total > 0.0)) {
    out.probs.back() = 1.0;
    return out;
  }
  for (int c = 0; c < spec.n_classes; ++c) {
    out.probs[static_cast<size_t>(c)] = mass(c) / total;
  }
  return out;
}

double label_kld(const LabelDist& p, const LabelDist& q) {
  if (p.probs.size() != q.probs.size() || p.probs.empty()) {
    throw std::invalid_argument("label_kld: distributions differ in length");
  }
  // Smoothing is only needed where q would put zero mass under p's support.
  bool needs_smoothing = false;
  for (size_t i = 0; i < p.probs.size(); ++i) {
    needs_smoothing |= p.probs[i] > 0.0 && !(q.probs[i] > 0.0);
  }
  const double eps = needs_smoothing ? kKldEpsilon : 0.0;
  double qsum = 0.0;
  for (double v : q.probs) {
    qsum += v + eps;
  }
  double kld = 0.0;
  for (size_t i = 0; i < p.probs.size(); ++i) {
    if (p.probs[i] > 0.0) {
      const double qi = (q.probs[i] + eps) / qsum;
      kld += p.probs[i] * std::log(p.probs[i] / qi);
    }
  }
  return kld;
}

std::vector<Event> detect_onsets(const Waveform& w, const EpisodeSpec& spec) {
  check_rate(w, spec, "detect_onsets");
  const int hop = onset_hop(spec);
  const MatD e = class_hop_energy(w, spec, hop);
  std::vector<Event> onsets;
  if (e.size() == 0) {
    return onsets;
  }
  const double peak = e.maxCoeff();
  const double gain = std::pow(10.0, kOnsetThresholdDb / 10.0);
  for (int c = 0; c < spec.n_classes; ++c) {
    std::vector<double> row(e.row(c).data(), e.row(c).data() + e.cols());
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(row.size() / 2),
                     row.end());
    const double median = row[row.size() / 2];
    const double floor = std::max(median, kOnsetFloorRelative * peak);
    const double threshold = std::max(floor * gain, silence_energy(hop));
    double last = -1.0;
    for (Eigen::Index h = 0; h < e.cols(); ++h) {
      const bool above = e(c, h) > threshold;
      const bool prev = h > 0 && e(c, h - 1) > threshold;
      if (!above || prev) {
        continue;
      }
      const double t = static_cast<double>(h) * hop / spec.sample_rate;
      if (last >= 0.0 && t - last <= kOnsetMergeSeconds + 1e-9) {
        continue;
      }
      onsets.push_back({c, t});
      last = t;
    }
  }
  std::stable_sort(onsets.begin(), onsets.end(),
                   [](const Event& a, const Event& b) { return a.onset_s < b.onset_s; });
  return onsets;
}

AlignmentScore match_onsets(const std::vector<Event>& truth, const std::vector<Event>& detected,
                            double window_ms) {
  const double window = window_ms / 1000.0 + 1e-9;
  std::vector<std::tuple<int, double, size_t, size_t>> pairs;
  for (size_t i = 0; i < truth.size(); ++i) {
    for (size_t j = 0; j < detected.size(); ++j) {
      const double dt = std::abs(truth[i].onset_s - detected[j].onset_s);
      if (dt <= window) {
        pairs.emplace_back(truth[i].class_id == detected[j].class_id ? 0 : 1, dt, i, j);
      }
    }
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<bool> used_t(truth.size(), false);
  std::vector<bool> used_d(detected.size(), false);
  AlignmentScore s;
  s.n_truth = static_cast<int>(truth.size());
  s.n_detected = static_cast<int>(detected.size());
  for (const auto& [mismatch, dt, i, j] : pairs) {
    if (used_t[i] || used_d[j]) {
      continue;
    }
    used_t[i] = true;
    used_d[j] = true;
    ++s.n_matched;
    s.n_class_correct += mismatch == 0 ? 1 : 0;
  }
  std::vector<AlignmentScore> one{s};
  return pool_scores(one);
}

AlignmentScore alignment_score(const VisualTrack& truth, const Waveform& w,
                               const EpisodeSpec& spec, double window_ms) {
  return match_onsets(truth.events, detect_onsets(w, spec), window_ms);
}

AlignmentScore pool_scores(std::span<const AlignmentScore> scores) {
  AlignmentScore s;
  for (const auto& x : scores) {
    s.n_truth += x.n_truth;
    s.n_detected += x.n_detected;
    s.n_matched += x.n_matched;
    s.n_class_correct += x.n_class_correct;
  }
  s.precision = s.n_detected > 0 ? static_cast<double>(s.n_matched) / s.n_detected : 1.0;
  s.recall = s.n_truth > 0 ? static_cast<double>(s.n_matched) / s.n_truth : 1.0;
  s.class_accuracy = s.n_matched > 0 ? static_cast<double>(s.n_class_correct) / s.n_matched : 0.0;
  return s;
}

}  // namespace foleygen
