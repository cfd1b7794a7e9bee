#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "throatline/audio.hpp"

namespace throatline {

// Throat-microphone channel: body low-pass, physiological bursts, sensor
// self-noise. Both noise levels are relative to the power of the low-passed
// signal; +inf disables a term.
struct ChannelConfig {
  double cutoff_hz = 1500.0;
  int filter_order = 4;
  double phys_noise_snr_db = 30.0;
  std::pair<double, double> phys_noise_band_hz{20.0, 100.0};
  double burst_rate_hz = 1.0;
  double sensor_noise_snr_db = 20.0;
  std::uint64_t seed = 0;

  // Throws ParameterError when an invariant is violated for `sample_rate`.
  void validate(int sample_rate) const;
  // Canonical text used for hashing; every field in fixed order.
  std::string canonical() const;
  // First 16 hex digits of SHA-256(canonical()).
  std::string hash() const;
};

inline constexpr double kNoNoise = std::numeric_limits<double>::infinity();

struct ChannelOutput {
  SampleBuffer signal;
  std::size_t clamp_events = 0;
};

ChannelOutput simulate_channel_detailed(const SampleBuffer& clean,
                                        const ChannelConfig& cfg);
SampleBuffer simulate_channel(const SampleBuffer& clean,
                              const ChannelConfig& cfg);

struct PairRow {
  std::filesystem::path clean;
  std::filesystem::path degraded;
  std::uint64_t seed = 0;
  std::string cfg_hash;
};

struct PairManifest {
  std::vector<PairRow> rows;

  void write_csv(const std::filesystem::path& path) const;
  static PairManifest read_csv(const std::filesystem::path& path);
};

// Per-file seed derived from (cfg.seed, file index) so files are independent
// and reproducible.
std::uint64_t derive_file_seed(std::uint64_t seed, std::size_t file_index);

// Simulates every *.wav in `corpus_dir` (sorted by name) into `out_dir` and
// writes `out_dir/manifest.csv`. Throws EmptyCorpusError if no WAV is found.
PairManifest make_pairs(const std::filesystem::path& corpus_dir,
                        const std::filesystem::path& out_dir,
                        const ChannelConfig& cfg);

// --- synthetic speech -------------------------------------------------------

// Harmonic "speech" built from a finite inventory of voiced units: an f0
// glide crossed with a vowel formant set, each unit spanning a whole number
// of frames and starting on a frame boundary. Units are separated by
// silent frames.
struct SynthConfig {
  int sample_rate = kDefaultSampleRate;
  std::size_t frame_len = kDefaultFrameLen;
  std::size_t frames_per_unit = 2;
  double silence_probability = 0.25;
  double peak_min = 0.5;
  double peak_max = 0.9;
};

SampleBuffer synthetic_utterance(double seconds, std::uint64_t seed,
                                 const SynthConfig& cfg = {});

// Sinusoid helper used by tests and the loopback demo.
SampleBuffer tone(double freq_hz, double amplitude, double seconds,
                  int sample_rate = kDefaultSampleRate);

}  // namespace throatline
