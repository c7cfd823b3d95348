#include "foleygen/goertzel.hpp"
#include "foleygen/rvq_codec.hpp"
#include "foleygen/toy_data.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

using namespace foleygen;
using foleygen::testing::random_matrix;
using foleygen::testing::scratch_dir;

namespace {

double dft_power(std::span<const float> x, double f, double fs) {
  std::complex<double> acc = 0.0;
  for (size_t n = 0; n < x.size(); ++n) {
    acc += static_cast<double>(x[n]) *
           std::polar(1.0, -2.0 * std::numbers::pi * f * static_cast<double>(n) / fs);
  }
  return std::norm(acc);
}

Waveform tone(double f, double amp, size_t n, int sr) {
  Waveform w;
  w.sample_rate = sr;
  w.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * f * i / sr));
  }
  return w;
}

RVQModel hand_model(std::vector<std::vector<double>> books) {
  RVQModel m;
  m.dim = 1;
  m.config.n_q = static_cast<int>(books.size());
  m.config.codebook_size = static_cast<int>(books.front().size());
  for (const auto& b : books) {
    MatD c(static_cast<Eigen::Index>(b.size()), 1);
    for (size_t i = 0; i < b.size(); ++i) {
      c(static_cast<Eigen::Index>(i), 0) = b[i];
    }
    m.codebooks.push_back(c);
  }
  return m;
}

LatentSequence latents(const MatD& frames) {
  LatentSequence z;
  z.frames = frames;
  z.frame_rate_a = 50.0;
  return z;
}

std::vector<LatentSequence> episode_latents(int n, uint64_t seed, const FeaturizerConfig& fc) {
  const EpisodeSpec spec = EpisodeSpec::with_defaults(2, 4, 2, 8000);
  std::vector<LatentSequence> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(featurize(synth_episode(spec, mix_seed(seed, static_cast<uint64_t>(i))).audio, fc));
  }
  return out;
}

RVQConfig small_rvq(int n_q, int k) {
  RVQConfig c;
  c.n_q = n_q;
  c.codebook_size = k;
  c.kmeans_iters = 5;
  c.ema_epochs = 1;
  c.batch_frames = 256;
  c.buffer_frames = 4000;
  return c;
}

}  // namespace

TEST_CASE("goertzel matches a brute-force DFT") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> x(160);
    for (auto& v : x) {
      v = static_cast<float>(2.0 * rng.uniform() - 1.0);
    }
    for (double f : {50.0, 400.0, 437.5, 1300.0, 3950.0}) {
      const double ref = dft_power(x, f, 8000.0);
      CHECK(goertzel_power(x, f, 8000.0) == doctest::Approx(ref).epsilon(1e-9).scale(1.0));
    }
  }
  CHECK(goertzel_power({}, 440.0, 8000.0) == 0.0);
}

TEST_CASE("featurize examples") {
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults({440.0}, 2, 160, 8000);
  REQUIRE(fc.probe_freqs == std::vector<double>{440.0, 880.0});

  Waveform silent;
  silent.sample_rate = 8000;
  silent.samples.assign(16000, 0.0f);
  const LatentSequence zs = featurize(silent, fc);
  CHECK(zs.length() == 100);
  CHECK(zs.frames.isZero(0.0));
  CHECK(zs.frame_rate_a == 50.0);

  const LatentSequence zt = featurize(tone(440.0, 0.5, 16000, 8000), fc);
  for (int l = 0; l < zt.length(); ++l) {
    const double e0 = std::expm1(zt.frames(l, 0));
    const double e1 = std::expm1(zt.frames(l, 1));
    CHECK(e0 > 10.0 * e1);
    CHECK(zt.frames(l, 0) > zt.frames(l, 1));
  }

  Waveform odd = silent;
  odd.samples.resize(16001);
  CHECK_THROWS_WITH_AS(featurize(odd, fc), doctest::Contains("zero-pad"), std::invalid_argument);
}

TEST_CASE("probe defaults and validation") {
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults({400.0, 700.0, 1000.0, 1300.0}, 8,
                                                               160, 8000);
  CHECK(fc.probe_freqs ==
        std::vector<double>{400.0, 700.0, 1000.0, 1300.0, 800.0, 1400.0, 2000.0, 2600.0});
  FeaturizerConfig bad = fc;
  bad.probe_freqs.push_back(400.0);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = fc;
  bad.probe_freqs.push_back(4000.0);
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("defeaturize examples") {
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults(EpisodeSpec::default_tones(4), 8,
                                                               160, 8000);
  const Waveform w0 = defeaturize(latents(MatD::Zero(7, 8)), fc);
  CHECK(w0.samples.size() == 7u * 160u);
  CHECK(std::all_of(w0.samples.begin(), w0.samples.end(), [](float x) { return x == 0.0f; }));

  MatD neg = MatD::Constant(3, 8, -2.0);
  const Waveform wn = defeaturize(latents(neg), fc);
  CHECK(std::all_of(wn.samples.begin(), wn.samples.end(), [](float x) { return x == 0.0f; }));

  CHECK_THROWS_AS(defeaturize(latents(MatD::Zero(3, 5)), fc), std::invalid_argument);
}

TEST_CASE("featurize after defeaturize stays within 15 percent on tone bursts") {
  const EpisodeSpec spec = EpisodeSpec::with_defaults(2, 4, 2, 8000);
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults(spec.tone_table, 8, 160, 8000);
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const LatentSequence z = featurize(synth_episode(spec, seed).audio, fc);
    const LatentSequence z2 = featurize(defeaturize(z, fc), fc);
    int bad = 0;
    for (Eigen::Index i = 0; i < z.frames.size(); ++i) {
      const double a = z.frames.data()[i];
      const double b = z2.frames.data()[i];
      // Entries near zero are leakage; compare them on an absolute scale.
      if (std::abs(a - b) > 0.15 * std::max(std::abs(a), 1.0)) {
        ++bad;
      }
    }
    CHECK_MESSAGE(bad == 0, "seed " << seed);
  }
}

TEST_CASE("one codebook covers codebook_size distinct vectors exactly") {
  Rng rng(8);
  const MatD data = random_matrix(16, 3, rng);
  RVQConfig cfg = small_rvq(1, 16);
  const std::vector<LatentSequence> z{latents(data)};
  const RVQModel m = train_codebooks(z, cfg, 1);
  MatD residual;
  rvq_encode(m, z[0], &residual);
  // Centroids are stored at f32 precision.
  CHECK(residual.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("stage residual energy is non-increasing and training is deterministic") {
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults(EpisodeSpec::default_tones(4), 8,
                                                               160, 8000);
  const auto z = episode_latents(40, 5, fc);
  const RVQConfig cfg = small_rvq(4, 16);
  const RVQModel m = train_codebooks(z, cfg, 9);
  CHECK(m.n_q() == 4);
  double prev = 0.0;
  for (const auto& s : z) {
    prev += s.frames.squaredNorm();
  }
  for (int k = 1; k <= 4; ++k) {
    const RVQModel mk = m.truncated(k);
    double e = 0.0;
    for (const auto& s : z) {
      MatD r;
      rvq_encode(mk, s, &r);
      e += r.squaredNorm();
    }
    CHECK(e <= prev);
    prev = e;
  }
  for (int k = 1; k < 4; ++k) {
    CHECK(m.codebooks[static_cast<size_t>(k)].row(0).isZero(0.0));
  }

  const RVQModel again = train_codebooks(z, cfg, 9);
  for (int k = 0; k < 4; ++k) {
    CHECK(m.codebooks[static_cast<size_t>(k)] == again.codebooks[static_cast<size_t>(k)]);
  }
  const RVQModel other = train_codebooks(z, cfg, 10);
  CHECK(other.codebooks[0] != m.codebooks[0]);

  std::vector<LatentSequence> tiny{latents(MatD::Zero(10, 8))};
  CHECK_THROWS_AS(train_codebooks(tiny, cfg, 1), std::invalid_argument);
}

TEST_CASE("rvq_encode hand trace") {
  const RVQModel m = hand_model({{0.0, 4.0}, {0.0, 1.0}});
  MatD frame(1, 1);
  frame(0, 0) = 5.0;
  MatD residual;
  const TokenGrid g = rvq_encode(m, latents(frame), &residual);
  CHECK(g.at(0, 0) == 1);
  CHECK(g.at(1, 0) == 1);
  CHECK(residual(0, 0) == 0.0);
  CHECK(rvq_decode(m, g).frames(0, 0) == 5.0);

  frame(0, 0) = 4.0;
  const TokenGrid g2 = rvq_encode(m, latents(frame));
  CHECK(g2.at(0, 0) == 1);
  CHECK(g2.at(1, 0) == 0);

  // Equidistant: lowest index wins.
  frame(0, 0) = 2.0;
  CHECK(rvq_encode(m, latents(frame)).at(0, 0) == 0);

  CHECK_THROWS_AS(rvq_encode(m, latents(MatD::Zero(2, 3))), std::invalid_argument);
}

TEST_CASE("rvq_decode contracts") {
  Rng rng(4);
  RVQModel m;
  m.dim = 3;
  m.config.codebook_size = 5;
  m.config.n_q = 3;
  for (int k = 0; k < 3; ++k) {
    m.codebooks.push_back(random_matrix(5, 3, rng));
  }
  const LatentSequence z = latents(random_matrix(11, 3, rng));
  MatD residual;
  const TokenGrid g = rvq_encode(m, z, &residual);
  CHECK(g.n_q == 3);
  CHECK(g.length == 11);
  const MatD err = z.frames - rvq_decode(m, g).frames;
  for (int l = 0; l < 11; ++l) {
    CHECK(err.row(l).norm() <= residual.row(l).norm() + 1e-12);
  }

  const RVQModel one = m.truncated(1);
  TokenGrid single(1, 5, 5, 50);
  for (int i = 0; i < 5; ++i) {
    single.at(0, i) = i;
  }
  CHECK(rvq_decode(one, single).frames == one.codebooks[0]);

  TokenGrid broken = g;
  broken.at(1, 4) = 5;
  CHECK_THROWS_AS(rvq_decode(m, broken), FormatError);
}

TEST_CASE("more codebooks never reconstruct worse") {
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults(EpisodeSpec::default_tones(4), 8,
                                                               160, 8000);
  const RVQModel m = train_codebooks(episode_latents(30, 1, fc), small_rvq(4, 16), 2);
  for (const auto& z : episode_latents(10, 99, fc)) {
    const double e1 = (rvq_decode(m.truncated(1), rvq_encode(m.truncated(1), z)).frames -
                       z.frames).squaredNorm();
    const double e4 = (rvq_decode(m, rvq_encode(m, z)).frames - z.frames).squaredNorm();
    CHECK(e4 <= e1);
  }
}

TEST_CASE("token and codec files round trip") {
  const auto dir = scratch_dir("codec");
  Rng rng(6);
  TokenGrid g = foleygen::testing::random_grid(4, 37, 64, rng);
  save_tokens(dir / "a.rvqt", g);
  CHECK(load_tokens(dir / "a.rvqt") == g);

  {
    std::ofstream out(dir / "short.rvqt", std::ios::binary);
    out << "RVQT";
  }
  CHECK_THROWS_AS(load_tokens(dir / "short.rvqt"), FormatError);
  CHECK_THROWS(load_tokens(dir / "missing.rvqt"));

  const FeaturizerConfig fc = FeaturizerConfig::with_defaults(EpisodeSpec::default_tones(4), 8,
                                                               160, 8000);
  const RVQModel m = train_codebooks(episode_latents(10, 2, fc), small_rvq(2, 8), 3);
  save_rvq(dir / "m.rvqm", m);
  const RVQModel back = load_rvq(dir / "m.rvqm");
  REQUIRE(back.n_q() == 2);
  CHECK(back.dim == 8);
  for (int k = 0; k < 2; ++k) {
    CHECK(back.codebooks[static_cast<size_t>(k)] == m.codebooks[static_cast<size_t>(k)]);
  }
  const auto z = episode_latents(1, 77, fc)[0];
  CHECK(rvq_encode(back, z) == rvq_encode(m, z));
}

TEST_CASE("re-encoding a reconstruction returns the same codes") {
  const FeaturizerConfig fc = FeaturizerConfig::with_defaults(EpisodeSpec::default_tones(4), 8,
                                                               160, 8000);
  const RVQModel m = train_codebooks(episode_latents(40, 1, fc), small_rvq(4, 32), 2);
  for (int k = 0; k < m.n_q(); ++k) {
    const MatD& c = m.codebooks[static_cast<size_t>(k)];
    for (Eigen::Index a = 0; a < c.rows(); ++a) {
      for (Eigen::Index b = 0; b < a; ++b) {
        const double d2 = (c.row(a) - c.row(b)).squaredNorm();
        CHECK((d2 == 0.0 || d2 > 1e-8));
      }
    }
  }
  for (const auto& z : episode_latents(20, 123, fc)) {
    const TokenGrid g = rvq_encode(m, z);
    CHECK(rvq_encode(m, rvq_decode(m, g)) == g);
  }
}
