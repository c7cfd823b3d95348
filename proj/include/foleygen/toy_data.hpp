#pragma once

#include "foleygen/wav_io.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace foleygen {

inline constexpr double kBurstSeconds = 0.25;
inline constexpr double kFadeSeconds = 0.01;
inline constexpr double kBurstAmplitude = 0.5;
inline constexpr double kOnsetGridSeconds = 0.01;
// Same-class onsets closer than burst length plus this gap are resampled, so
// the onset detector's merge window never fuses two real events.
inline constexpr double kSameClassGapSeconds = 0.05;

struct EpisodeSpec {
  int duration_s = 2;
  int n_classes = 4;
  int max_events = 2;
  int sample_rate = 8000;
  std::vector<double> tone_table;  // class id -> Hz

  // 400 Hz + 300 Hz per class; all multiples of 100 Hz so every tone sits on
  // an exact bin of a 10 ms analysis window.
  static std::vector<double> default_tones(int n_classes);
  static EpisodeSpec with_defaults(int duration_s, int n_classes, int max_events, int sample_rate);

  // Throws std::invalid_argument naming the violated invariant.
  void validate() const;
  size_t n_samples() const { return static_cast<size_t>(duration_s) * sample_rate; }
};

struct Event {
  int class_id = 0;
  double onset_s = 0.0;

  bool operator==(const Event&) const = default;
};

struct VisualTrack {
  int duration_s = 0;
  std::vector<Event> events;  // sorted by onset
  int frame_rate_v = 1;

  int n_frames() const { return duration_s * frame_rate_v; }
};

struct Episode {
  VisualTrack track;
  Waveform audio;
};

// Tone bursts for the given events, summed; peak-normalized only if it would
// exceed 1.
Waveform render_events(const EpisodeSpec& spec, const std::vector<Event>& events);

// Draws 1..max_events events (none when max_events == 0) and renders them.
Episode synth_episode(const EpisodeSpec& spec, uint64_t seed);

struct ManifestEntry {
  std::string split;  // "train" or "test"
  uint64_t episode_id = 0;
  std::filesystem::path wav_path;
  std::filesystem::path events_path;
  std::vector<Event> events;
};

struct DatasetManifest {
  std::filesystem::path manifest_path;
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(const std::string& name) const;
};

// Episode ids for one split; train and test ids never collide.
std::vector<uint64_t> split_episode_ids(uint64_t seed, int n_train, int n_test, bool test_split);

DatasetManifest make_dataset(const EpisodeSpec& spec, int n_train, int n_test, uint64_t seed,
                             const std::filesystem::path& out_dir);

void write_events(const std::filesystem::path& path, const std::vector<Event>& events);
std::vector<Event> read_events(const std::filesystem::path& path);

// Manifest lines are `split<TAB>wav_path<TAB>events_path`, paths relative to
// the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

VisualTrack make_track(const EpisodeSpec& spec, std::vector<Event> events);

}  // namespace foleygen
