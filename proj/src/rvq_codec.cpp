#include "foleygen/rvq_codec.hpp"

#include "foleygen/binary_io.hpp"
#include "foleygen/goertzel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <string>

namespace foleygen {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Squared distance below which a frame counts as already represented and two
// centroids count as the same entry.
constexpr double kSameCentroidDist2 = 1e-8;

struct Nearest {
  int index = 0;
  double dist2 = 0.0;
};

Nearest nearest_centroid(const double* x, const MatD& codebook) {
  Nearest best{0, std::numeric_limits<double>::infinity()};
  const auto d = codebook.cols();
  for (Eigen::Index i = 0; i < codebook.rows(); ++i) {
    const double* c = codebook.data() + i * d;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      const double diff = x[j] - c[j];
      acc += diff * diff;
    }
    if (acc < best.dist2) {
      best = {static_cast<int>(i), acc};
    }
  }
  return best;
}

// Index drawn with probability proportional to weights, ignoring weights at
// or below kSameCentroidDist2; nullopt when nothing qualifies.
std::optional<size_t> weighted_pick(const std::vector<double>& weights, Rng& rng) {
  double total = 0.0;
  size_t last = weights.size();
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > kSameCentroidDist2) {
      total += weights[i];
      last = i;
    }
  }
  if (last == weights.size()) {
    return std::nullopt;
  }
  const double target = rng.uniform() * total;
  double acc = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] > kSameCentroidDist2) {
      acc += weights[i];
      if (target < acc) {
        return i;
      }
    }
  }
  return last;
}

void absorb_point(std::vector<double>& d2, const MatD& data, const RowVec<double>& c) {
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    d2[static_cast<size_t>(i)] =
        std::min(d2[static_cast<size_t>(i)], (data.row(i) - c).squaredNorm());
  }
}

MatD kmeans_plus_plus(const MatD& data, int k, bool pin_zero, Rng& rng) {
  const auto n = data.rows();
  MatD centers = MatD::Zero(k, data.cols());
  std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());
  if (!pin_zero) {
    centers.row(0) = data.row(static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(n))));
  }
  absorb_point(d2, data, centers.row(0));
  for (int c = 1; c < k; ++c) {
    const auto pick = weighted_pick(d2, rng);
    if (!pick) {
      // No distinct data left; a later copy of entry 0 is never selected.
      centers.row(c) = centers.row(0);
      continue;
    }
    centers.row(c) = data.row(static_cast<Eigen::Index>(*pick));
    absorb_point(d2, data, centers.row(c));
  }
  return centers;
}

void lloyd(const MatD& data, MatD& centers, int iters, bool pin_zero, Rng& rng) {
  const auto n = data.rows();
  const auto k = centers.rows();
  std::vector<double> err(static_cast<size_t>(n));
  for (int it = 0; it < iters; ++it) {
    MatD sums = MatD::Zero(k, data.cols());
    std::vector<int> counts(static_cast<size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Nearest nn = nearest_centroid(data.data() + i * data.cols(), centers);
      sums.row(nn.index) += data.row(i);
      counts[static_cast<size_t>(nn.index)]++;
      err[static_cast<size_t>(i)] = nn.dist2;
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (pin_zero && c == 0) {
        continue;
      }
      if (counts[static_cast<size_t>(c)] > 0) {
        centers.row(c) = sums.row(c) / counts[static_cast<size_t>(c)];
      } else if (const auto pick = weighted_pick(err, rng)) {
        centers.row(c) = data.row(static_cast<Eigen::Index>(*pick));
        absorb_point(err, data, centers.row(c));
      }
    }
  }
}

// Entries within kSameCentroidDist2 of an earlier entry become exact copies of
// it, so ties between them always resolve to the earlier index.
void merge_near_duplicates(MatD& centers) {
  for (Eigen::Index c = 1; c < centers.rows(); ++c) {
    for (Eigen::Index e = 0; e < c; ++e) {
      if ((centers.row(c) - centers.row(e)).squaredNorm() <= kSameCentroidDist2) {
        centers.row(c) = centers.row(e);
        break;
      }
    }
  }
}

void round_to_f32(MatD& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

}  // namespace

FeaturizerConfig FeaturizerConfig::with_defaults(const std::vector<double>& tones, int d, int hop,
                                                 int sample_rate) {
  FeaturizerConfig cfg;
  cfg.hop = hop;
  cfg.sample_rate = sample_rate;
  std::set<double> seen;
  for (int harmonic = 1; static_cast<int>(cfg.probe_freqs.size()) < d; ++harmonic) {
    bool any_below_nyquist = false;
    for (double f : tones) {
      const double h = f * harmonic;
      if (h >= sample_rate / 2.0) {
        continue;
      }
      any_below_nyquist = true;
      if (static_cast<int>(cfg.probe_freqs.size()) < d && seen.insert(h).second) {
        cfg.probe_freqs.push_back(h);
      }
    }
    if (!any_below_nyquist) {
      throw std::invalid_argument("FeaturizerConfig: not enough harmonics below Nyquist for d=" +
                                  std::to_string(d));
    }
  }
  cfg.validate();
  return cfg;
}

void FeaturizerConfig::validate() const {
  if (hop < 1 || sample_rate < 1) {
    throw std::invalid_argument("FeaturizerConfig: hop and sample_rate must be positive");
  }
  if (probe_freqs.empty()) {
    throw std::invalid_argument("FeaturizerConfig: need at least one probe frequency");
  }
  std::set<double> seen;
  for (double f : probe_freqs) {
    if (!(f > 0.0) || f >= sample_rate / 2.0 || !seen.insert(f).second) {
      throw std::invalid_argument(
          "FeaturizerConfig: probe frequencies must be distinct and below Nyquist");
    }
  }
}

LatentSequence featurize(const Waveform& w, const FeaturizerConfig& cfg) {
  if (w.sample_rate != cfg.sample_rate) {
    throw std::invalid_argument("featurize: waveform sample rate " +
                                std::to_string(w.sample_rate) + " != featurizer " +
                                std::to_string(cfg.sample_rate));
  }
  if (w.samples.size() % static_cast<size_t>(cfg.hop) != 0) {
    throw std::invalid_argument("featurize: " + std::to_string(w.samples.size()) +
                                " samples is not a multiple of hop " + std::to_string(cfg.hop) +
                                "; zero-pad the waveform to a whole number of frames");
  }
  const auto frames = static_cast<Eigen::Index>(w.samples.size() / cfg.hop);
  LatentSequence z;
  z.frame_rate_a = cfg.frame_rate();
  z.frames.resize(frames, cfg.d());
  const std::span<const float> all(w.samples);
  for (Eigen::Index l = 0; l < frames; ++l) {
    const auto frame = all.subspan(static_cast<size_t>(l) * cfg.hop, static_cast<size_t>(cfg.hop));
    for (int i = 0; i < cfg.d(); ++i) {
      z.frames(l, i) = std::log1p(goertzel_power(frame, cfg.probe_freqs[i], cfg.sample_rate));
    }
  }
  return z;
}

Waveform defeaturize(const LatentSequence& z, const FeaturizerConfig& cfg) {
  if (z.dim() != cfg.d()) {
    throw std::invalid_argument("defeaturize: latent dim " + std::to_string(z.dim()) +
                                " != probe count " + std::to_string(cfg.d()));
  }
  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.assign(static_cast<size_t>(z.length()) * cfg.hop, 0.0f);
  const double scale = cfg.amplitude_scale();
  std::vector<double> amp(static_cast<size_t>(cfg.d()));
  for (int l = 0; l < z.length(); ++l) {
    for (int i = 0; i < cfg.d(); ++i) {
      const double e = std::expm1(std::max(z.frames(l, i), 0.0));
      amp[static_cast<size_t>(i)] = std::sqrt(e) / scale;
    }
    for (int n = 0; n < cfg.hop; ++n) {
      // Global sample index keeps every probe's phase continuous.
      const long t = static_cast<long>(l) * cfg.hop + n;
      double acc = 0.0;
      for (int i = 0; i < cfg.d(); ++i) {
        if (amp[static_cast<size_t>(i)] != 0.0) {
          acc += amp[static_cast<size_t>(i)] *
                 std::sin(kTwoPi * cfg.probe_freqs[i] * static_cast<double>(t) / cfg.sample_rate);
        }
      }
      w.samples[static_cast<size_t>(t)] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
    }
  }
  return w;
}

void RVQConfig::validate() const {
  if (n_q < 1) {
    throw std::invalid_argument("RVQConfig: n_q must be >= 1");
  }
  if (codebook_size < 2) {
    throw std::invalid_argument("RVQConfig: codebook_size must be >= 2");
  }
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) {
    throw std::invalid_argument("RVQConfig: ema_decay must lie in (0, 1)");
  }
  if (kmeans_iters < 0 || ema_epochs < 0 || batch_frames < 1 || buffer_frames < 1) {
    throw std::invalid_argument("RVQConfig: iteration counts and sizes must be positive");
  }
  if (codebook_size > 65535) {
    throw std::invalid_argument("RVQConfig: codebook_size must fit the u16 token format");
  }
}

RVQModel RVQModel::truncated(int k) const {
  if (k < 1 || k > n_q()) {
    throw std::invalid_argument("RVQModel::truncated: k out of range");
  }
  RVQModel out;
  out.config = config;
  out.config.n_q = k;
  out.dim = dim;
  out.codebooks.assign(codebooks.begin(), codebooks.begin() + k);
  if (static_cast<int>(ema_counts.size()) >= k) {
    out.ema_counts.assign(ema_counts.begin(), ema_counts.begin() + k);
    out.ema_sums.assign(ema_sums.begin(), ema_sums.begin() + k);
  }
  return out;
}

TokenGrid::TokenGrid(int n_q_, int length_, int codebook_size_, int frame_rate_a_)
    : n_q(n_q_),
      length(length_),
      codebook_size(codebook_size_),
      frame_rate_a(frame_rate_a_),
      codes(static_cast<size_t>(n_q_) * static_cast<size_t>(length_), 0) {}

RVQModel train_codebooks(std::span<const LatentSequence> latents, const RVQConfig& cfg,
                         uint64_t seed) {
  cfg.validate();
  if (latents.empty()) {
    throw std::invalid_argument("train_codebooks: no latent sequences");
  }
  const int dim = latents.front().dim();
  Eigen::Index total = 0;
  for (const LatentSequence& z : latents) {
    if (z.dim() != dim) {
      throw std::invalid_argument("train_codebooks: inconsistent latent dimensionality");
    }
    total += z.length();
  }
  if (total < cfg.codebook_size) {
    throw std::invalid_argument("train_codebooks: " + std::to_string(total) +
                                " frames is fewer than codebook_size " +
                                std::to_string(cfg.codebook_size));
  }

  MatD residual(total, dim);
  Eigen::Index row = 0;
  for (const LatentSequence& z : latents) {
    residual.middleRows(row, z.length()) = z.frames;
    row += z.length();
  }

  RVQModel model;
  model.config = cfg;
  model.dim = dim;
  Rng rng(seed);
  const int k = cfg.codebook_size;

  for (int stage = 0; stage < cfg.n_q; ++stage) {
    const bool pin_zero = stage > 0;

    // Sampled buffer without replacement (partial Fisher-Yates).
    std::vector<Eigen::Index> order(static_cast<size_t>(total));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const auto buffer_n = std::min<Eigen::Index>(total, cfg.buffer_frames);
    for (Eigen::Index i = 0; i < buffer_n; ++i) {
      const auto j = i + static_cast<Eigen::Index>(rng.below(static_cast<uint64_t>(total - i)));
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    MatD buffer(buffer_n, dim);
    for (Eigen::Index i = 0; i < buffer_n; ++i) {
      buffer.row(i) = residual.row(order[static_cast<size_t>(i)]);
    }

    MatD centers = kmeans_plus_plus(buffer, k, pin_zero, rng);
    lloyd(buffer, centers, cfg.kmeans_iters, pin_zero, rng);

    // EMA state starts from the buffer's cluster sizes, rescaled to batch size.
    const auto batch_n = std::min<Eigen::Index>(total, cfg.batch_frames);
    Eigen::VectorXd ema_count = Eigen::VectorXd::Zero(k);
    for (Eigen::Index i = 0; i < buffer_n; ++i) {
      ema_count(nearest_centroid(buffer.data() + i * dim, centers).index) += 1.0;
    }
    ema_count *= static_cast<double>(batch_n) / static_cast<double>(buffer_n);
    MatD ema_sum = centers.array().colwise() * ema_count.array();

    const double decay = cfg.ema_decay;
    std::vector<Eigen::Index> perm(static_cast<size_t>(total));
    for (int epoch = 0; epoch < cfg.ema_epochs; ++epoch) {
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      for (Eigen::Index i = total - 1; i > 0; --i) {
        std::swap(perm[static_cast<size_t>(i)],
                  perm[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
      }
      for (Eigen::Index b0 = 0; b0 < total; b0 += batch_n) {
        const Eigen::Index b1 = std::min(total, b0 + batch_n);
        MatD sums = MatD::Zero(k, dim);
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
        std::vector<double> err(static_cast<size_t>(b1 - b0));
        for (Eigen::Index i = b0; i < b1; ++i) {
          const Eigen::Index r = perm[static_cast<size_t>(i)];
          const Nearest nn = nearest_centroid(residual.data() + r * dim, centers);
          sums.row(nn.index) += residual.row(r);
          counts(nn.index) += 1.0;
          err[static_cast<size_t>(i - b0)] = nn.dist2;
        }
        for (int c = 0; c < k; ++c) {
          if (pin_zero && c == 0) {
            continue;
          }
          ema_count(c) = decay * ema_count(c) + (1.0 - decay) * counts(c);
          ema_sum.row(c) = decay * ema_sum.row(c) + (1.0 - decay) * sums.row(c);
          if (ema_count(c) > 1e-12) {
            centers.row(c) = ema_sum.row(c) / ema_count(c);
          }
        }
        // Dead codes move to poorly represented frames of this batch.
        for (int c = 0; c < k; ++c) {
          if ((pin_zero && c == 0) || ema_count(c) >= cfg.reseed_threshold) {
            continue;
          }
          const auto pick = weighted_pick(err, rng);
          if (!pick) {
            break;
          }
          const Eigen::Index r = perm[static_cast<size_t>(b0) + *pick];
          centers.row(c) = residual.row(r);
          ema_count(c) = cfg.reseed_threshold;
          ema_sum.row(c) = centers.row(c) * cfg.reseed_threshold;
          for (Eigen::Index i = b0; i < b1; ++i) {
            double& e = err[static_cast<size_t>(i - b0)];
            e = std::min(e, (residual.row(perm[static_cast<size_t>(i)]) - centers.row(c))
                                .squaredNorm());
          }
        }
      }
    }

    if (pin_zero) {
      centers.row(0).setZero();
    }
    round_to_f32(centers);
    merge_near_duplicates(centers);
    for (Eigen::Index r = 0; r < total; ++r) {
      const Nearest nn = nearest_centroid(residual.data() + r * dim, centers);
      residual.row(r) -= centers.row(nn.index);
    }
    model.codebooks.push_back(std::move(centers));
    model.ema_counts.push_back(std::move(ema_count));
    model.ema_sums.push_back(std::move(ema_sum));
  }
  return model;
}

TokenGrid rvq_encode(const RVQModel& m, const LatentSequence& z) {
  return rvq_encode(m, z, nullptr);
}

TokenGrid rvq_encode(const RVQModel& m, const LatentSequence& z, MatD* final_residual) {
  if (z.dim() != m.dim) {
    throw std::invalid_argument("rvq_encode: latent dim " + std::to_string(z.dim()) +
                                " != codebook dim " + std::to_string(m.dim));
  }
  TokenGrid g(m.n_q(), z.length(), m.codebook_size(),
              static_cast<int>(std::lround(z.frame_rate_a)));
  MatD residual = z.frames;
  for (int l = 0; l < z.length(); ++l) {
    double* r = residual.data() + static_cast<Eigen::Index>(l) * m.dim;
    for (int k = 0; k < m.n_q(); ++k) {
      const Nearest nn = nearest_centroid(r, m.codebooks[static_cast<size_t>(k)]);
      g.at(k, l) = nn.index;
      const double* c = m.codebooks[static_cast<size_t>(k)].data() +
                        static_cast<Eigen::Index>(nn.index) * m.dim;
      for (int j = 0; j < m.dim; ++j) {
        r[j] -= c[j];
      }
    }
  }
  if (final_residual != nullptr) {
    *final_residual = std::move(residual);
  }
  return g;
}

LatentSequence rvq_decode(const RVQModel& m, const TokenGrid& g) {
  if (g.n_q > m.n_q()) {
    throw std::invalid_argument("rvq_decode: grid has " + std::to_string(g.n_q) +
                                " streams but model has " + std::to_string(m.n_q()));
  }
  LatentSequence z;
  z.frame_rate_a = g.frame_rate_a;
  z.frames = MatD::Zero(g.length, m.dim);
  for (int l = 0; l < g.length; ++l) {
    for (int k = 0; k < g.n_q; ++k) {
      const int32_t code = g.at(k, l);
      if (code < 0 || code >= m.codebook_size()) {
        throw FormatError("rvq_decode: code " + std::to_string(code) + " at stream " +
                          std::to_string(k) + ", frame " + std::to_string(l) +
                          " outside codebook of size " + std::to_string(m.codebook_size()));
      }
      z.frames.row(l) += m.codebooks[static_cast<size_t>(k)].row(code);
    }
  }
  return z;
}

void save_tokens(const std::filesystem::path& path, const TokenGrid& g) {
  ByteWriter out;
  out.magic("RVQT");
  out.u32(static_cast<uint32_t>(g.n_q));
  out.u32(static_cast<uint32_t>(g.length));
  out.u32(static_cast<uint32_t>(g.codebook_size));
  out.u32(static_cast<uint32_t>(g.frame_rate_a));
  for (int32_t c : g.codes) {
    out.u16(static_cast<uint16_t>(c));
  }
  out.save(path);
}

TokenGrid load_tokens(const std::filesystem::path& path) {
  ByteReader in = ByteReader::open(path);
  in.expect_magic("RVQT");
  const uint32_t n_q = in.u32();
  const uint32_t length = in.u32();
  const uint32_t codebook_size = in.u32();
  const uint32_t rate = in.u32();
  const uint64_t payload = static_cast<uint64_t>(n_q) * length * 2;
  if (in.remaining() != payload) {
    throw FormatError(path.string() + ": expected " + std::to_string(20 + payload) +
                      " bytes, found " + std::to_string(in.size()));
  }
  TokenGrid g(static_cast<int>(n_q), static_cast<int>(length), static_cast<int>(codebook_size),
              static_cast<int>(rate));
  for (int32_t& c : g.codes) {
    c = in.u16();
    if (c >= static_cast<int32_t>(codebook_size)) {
      throw FormatError(path.string() + ": code " + std::to_string(c) +
                        " outside codebook of size " + std::to_string(codebook_size));
    }
  }
  return g;
}

void save_rvq(const std::filesystem::path& path, const RVQModel& m) {
  ByteWriter out;
  out.magic("RVQM");
  out.u32(static_cast<uint32_t>(m.n_q()));
  out.u32(static_cast<uint32_t>(m.codebook_size()));
  out.u32(static_cast<uint32_t>(m.dim));
  out.f32(static_cast<float>(m.config.ema_decay));
  out.f32(static_cast<float>(m.config.reseed_threshold));
  out.u32(static_cast<uint32_t>(m.config.kmeans_iters));
  out.u32(static_cast<uint32_t>(m.config.ema_epochs));
  for (const MatD& cb : m.codebooks) {
    for (Eigen::Index i = 0; i < cb.size(); ++i) {
      out.f32(static_cast<float>(cb.data()[i]));
    }
  }
  out.save(path);
}

RVQModel load_rvq(const std::filesystem::path& path) {
  ByteReader in = ByteReader::open(path);
  in.expect_magic("RVQM");
  RVQModel m;
  m.config.n_q = static_cast<int>(in.u32());
  m.config.codebook_size = static_cast<int>(in.u32());
  m.dim = static_cast<int>(in.u32());
  m.config.ema_decay = in.f32();
  m.config.reseed_threshold = in.f32();
  m.config.kmeans_iters = static_cast<int>(in.u32());
  m.config.ema_epochs = static_cast<int>(in.u32());
  const uint64_t payload =
      static_cast<uint64_t>(m.config.n_q) * m.config.codebook_size * m.dim * 4;
  if (in.remaining() != payload) {
    throw FormatError(path.string() + ": expected " + std::to_string(in.position() + payload) +
                      " bytes, found " + std::to_string(in.size()));
  }
  for (int k = 0; k < m.config.n_q; ++k) {
    MatD cb(m.config.codebook_size, m.dim);
    for (Eigen::Index i = 0; i < cb.size(); ++i) {
      cb.data()[i] = in.f32();
    }
    m.codebooks.push_back(std::move(cb));
  }
  return m;
}

}  // namespace foleygen
