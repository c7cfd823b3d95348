#include "foleygen/toy_data.hpp"

#include "foleygen/common.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace foleygen {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr int kMaxResampleAttempts = 10000;

int burst_samples(int sample_rate) {
  return static_cast<int>(std::lround(kBurstSeconds * sample_rate));
}

std::string format_onset(double onset_s) {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << onset_s;
  return os.str();
}

}  // namespace

std::vector<double> EpisodeSpec::default_tones(int n_classes) {
  std::vector<double> tones;
  for (int c = 0; c < n_classes; ++c) {
    tones.push_back(400.0 + 300.0 * c);
  }
  return tones;
}

EpisodeSpec EpisodeSpec::with_defaults(int duration_s, int n_classes, int max_events,
                                       int sample_rate) {
  EpisodeSpec spec;
  spec.duration_s = duration_s;
  spec.n_classes = n_classes;
  spec.max_events = max_events;
  spec.sample_rate = sample_rate;
  spec.tone_table = default_tones(n_classes);
  return spec;
}

void EpisodeSpec::validate() const {
  if (duration_s < 1) {
    throw std::invalid_argument("EpisodeSpec: duration_s must be >= 1");
  }
  if (n_classes < 1) {
    throw std::invalid_argument("EpisodeSpec: n_classes must be >= 1");
  }
  if (max_events < 0) {
    throw std::invalid_argument("EpisodeSpec: max_events must be >= 0");
  }
  if (sample_rate <= 0) {
    throw std::invalid_argument("EpisodeSpec: sample_rate must be positive");
  }
  if (static_cast<int>(tone_table.size()) != n_classes) {
    throw std::invalid_argument("EpisodeSpec: tone_table needs one frequency per class");
  }
  std::set<double> seen;
  for (double f : tone_table) {
    if (!(f > 0.0) || f >= sample_rate / 2.0) {
      throw std::invalid_argument("EpisodeSpec: tone frequency must lie in (0, sample_rate/2)");
    }
    if (!seen.insert(f).second) {
      throw std::invalid_argument("EpisodeSpec: tone frequencies must be distinct");
    }
  }
}

Waveform render_events(const EpisodeSpec& spec, const std::vector<Event>& events) {
  Waveform w;
  w.sample_rate = spec.sample_rate;
  std::vector<double> acc(spec.n_samples(), 0.0);
  const int len = burst_samples(spec.sample_rate);
  const int fade = static_cast<int>(std::lround(kFadeSeconds * spec.sample_rate));
  for (const Event& e : events) {
    const double freq = spec.tone_table.at(static_cast<size_t>(e.class_id));
    const auto start = static_cast<long>(std::lround(e.onset_s * spec.sample_rate));
    for (int n = 0; n < len; ++n) {
      const long idx = start + n;
      if (idx < 0 || idx >= static_cast<long>(acc.size())) {
        continue;
      }
      double env = 1.0;
      if (n < fade) {
        env = static_cast<double>(n) / fade;
      } else if (n >= len - fade) {
        env = static_cast<double>(len - n) / fade;
      }
      acc[static_cast<size_t>(idx)] +=
          kBurstAmplitude * env * std::sin(kTwoPi * freq * n / spec.sample_rate);
    }
  }
  double peak = 0.0;
  for (double v : acc) {
    peak = std::max(peak, std::abs(v));
  }
  const double gain = peak > 1.0 ? 1.0 / peak : 1.0;
  w.samples.resize(acc.size());
  for (size_t i = 0; i < acc.size(); ++i) {
    w.samples[i] = static_cast<float>(std::clamp(acc[i] * gain, -1.0, 1.0));
  }
  return w;
}

VisualTrack make_track(const EpisodeSpec& spec, std::vector<Event> events) {
  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    return a.onset_s != b.onset_s ? a.onset_s < b.onset_s : a.class_id < b.class_id;
  });
  VisualTrack track;
  track.duration_s = spec.duration_s;
  track.events = std::move(events);
  track.frame_rate_v = 1;
  return track;
}

Episode synth_episode(const EpisodeSpec& spec, uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  // Onsets live on the 10 ms grid and leave room for the full burst.
  const auto last_slot = static_cast<uint64_t>(
      std::floor((spec.duration_s - kBurstSeconds) / kOnsetGridSeconds + 1e-9));
  const double min_same_class = kBurstSeconds + kSameClassGapSeconds;

  std::vector<Event> events;
  if (spec.max_events > 0) {
    const int count = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(spec.max_events)));
    for (int i = 0; i < count; ++i) {
      Event e;
      bool placed = false;
      for (int attempt = 0; attempt < kMaxResampleAttempts && !placed; ++attempt) {
        e.class_id = static_cast<int>(rng.below(static_cast<uint64_t>(spec.n_classes)));
        e.onset_s = static_cast<double>(rng.below(last_slot + 1)) * kOnsetGridSeconds;
        placed = std::none_of(events.begin(), events.end(), [&](const Event& other) {
          return other.class_id == e.class_id &&
                 std::abs(other.onset_s - e.onset_s) < min_same_class - 1e-9;
        });
      }
      if (!placed) {
        throw std::runtime_error("synth_episode: cannot place events without same-class overlap");
      }
      events.push_back(e);
    }
  }

  Episode ep;
  ep.track = make_track(spec, std::move(events));
  ep.audio = render_events(spec, ep.track.events);
  return ep;
}

std::vector<const ManifestEntry*> DatasetManifest::split(const std::string& name) const {
  std::vector<const ManifestEntry*> out;
  for (const ManifestEntry& e : entries) {
    if (e.split == name) {
      out.push_back(&e);
    }
  }
  return out;
}

std::vector<uint64_t> split_episode_ids(uint64_t seed, int n_train, int n_test, bool test_split) {
  // Train ids are drawn first; test ids skip anything already used.
  std::set<uint64_t> used;
  std::vector<uint64_t> train;
  std::vector<uint64_t> test;
  uint64_t counter = 0;
  while (static_cast<int>(train.size()) < n_train) {
    const uint64_t id = mix_seed(mix_seed(seed, 0), counter++);
    if (used.insert(id).second) {
      train.push_back(id);
    }
  }
  counter = 0;
  while (static_cast<int>(test.size()) < n_test) {
    const uint64_t id = mix_seed(mix_seed(seed, 1), counter++);
    if (used.insert(id).second) {
      test.push_back(id);
    }
  }
  return test_split ? test : train;
}

void write_events(const std::filesystem::path& path, const std::vector<Event>& events) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  for (const Event& e : events) {
    out << e.class_id << '\t' << format_onset(e.onset_s) << '\n';
  }
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

std::vector<Event> read_events(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::vector<Event> events;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    Event e;
    if (!(ls >> e.class_id >> e.onset_s) || e.class_id < 0 || e.onset_s < 0.0) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed event line");
    }
    events.push_back(e);
  }
  return events;
}

DatasetManifest make_dataset(const EpisodeSpec& spec, int n_train, int n_test, uint64_t seed,
                             const std::filesystem::path& out_dir) {
  if (n_train < 1 || n_test < 1) {
    throw std::invalid_argument("make_dataset: n_train and n_test must be >= 1");
  }
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());
  }

  DatasetManifest manifest;
  manifest.manifest_path = out_dir / "manifest.tsv";
  std::ofstream listing(manifest.manifest_path, std::ios::trunc);
  if (!listing) {
    throw std::runtime_error("cannot write " + manifest.manifest_path.string());
  }

  for (const bool test : {false, true}) {
    const std::string split = test ? "test" : "train";
    const auto ids = split_episode_ids(seed, n_train, n_test, test);
    for (size_t i = 0; i < ids.size(); ++i) {
      char stem[64];
      std::snprintf(stem, sizeof stem, "%s_%05zu", split.c_str(), i);
      ManifestEntry entry;
      entry.split = split;
      entry.episode_id = ids[i];
      entry.wav_path = out_dir / (std::string(stem) + ".wav");
      entry.events_path = out_dir / (std::string(stem) + ".events");

      const Episode ep = synth_episode(spec, ids[i]);
      entry.events = ep.track.events;
      write_wav(entry.wav_path, ep.audio);
      write_events(entry.events_path, ep.track.events);
      listing << split << '\t' << entry.wav_path.filename().string() << '\t'
              << entry.events_path.filename().string() << '\n';
      manifest.entries.push_back(std::move(entry));
    }
  }
  if (!listing) {
    throw std::runtime_error("write failed: " + manifest.manifest_path.string());
  }
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  DatasetManifest manifest;
  manifest.manifest_path = path;
  const auto dir = path.parent_path();
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::string split, wav, events;
    if (!std::getline(ls, split, '\t') || !std::getline(ls, wav, '\t') ||
        !std::getline(ls, events)) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 3 columns");
    }
    ManifestEntry entry;
    entry.split = split;
    entry.wav_path = dir / wav;
    entry.events_path = dir / events;
    entry.events = read_events(entry.events_path);
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

}  // namespace foleygen
