#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "throatline/audio.hpp"
#include "throatline/throatsim.hpp"

namespace throatline::metrics {

inline constexpr double kSiSdrCapDb = 100.0;

// Scale-invariant SDR in dB, capped at +100 dB.
double si_sdr(std::span<const float> estimate, std::span<const float> reference);
double si_sdr(const SampleBuffer& estimate, const SampleBuffer& reference);

// Classic short-time objective intelligibility (10 kHz analysis, 15
// third-octave bands, 384 ms segments, -15 dB clipping). Both inputs are
// resampled from their own rate. Throws InsufficientSignalError when fewer
// than 30 analysis frames survive silence removal.
double stoi(const SampleBuffer& estimate, const SampleBuffer& reference);

// Per-band mean correlation, same pipeline as stoi().
std::vector<double> stoi_bands(const SampleBuffer& estimate,
                               const SampleBuffer& reference);

// RMS over frames and bins of the difference of 10*log10(power + 1e-10)
// spectra (win 1024, hop 256).
double lsd(std::span<const float> estimate, std::span<const float> reference);
double lsd(const SampleBuffer& estimate, const SampleBuffer& reference);

struct MetricTriple {
  double si_sdr_db = 0.0;
  double stoi = 0.0;
  double lsd_db = 0.0;
};

struct ReportRow {
  std::string file;
  std::optional<MetricTriple> degraded;
  std::optional<MetricTriple> enhanced;
  std::size_t n_samples = 0;
  std::string error;  // non-empty when the row failed
};

struct Aggregate {
  MetricTriple mean;
  MetricTriple stddev;
  std::size_t count = 0;
};

struct MetricReport {
  std::vector<ReportRow> rows;  // sorted by file name
  Aggregate degraded;
  std::optional<Aggregate> enhanced;
  std::size_t n_samples = 0;

  void write_csv(const std::filesystem::path& path) const;
  std::string summary_json() const;
  std::string summary_table() const;
};

inline constexpr const char* kReportCsvHeader =
    "file,si_sdr_degraded,stoi_degraded,lsd_degraded,si_sdr_enhanced,"
    "stoi_enhanced,lsd_enhanced";

MetricTriple evaluate_pair(const SampleBuffer& estimate,
                           const SampleBuffer& reference);

// Maps a degraded signal to an enhanced one of the same length and rate.
using EnhanceFn = std::function<SampleBuffer(const SampleBuffer&)>;

// Scores every manifest row. Missing or unreadable files produce a row with
// `error` set; the run continues.
MetricReport evaluate_corpus(const PairManifest& manifest,
                             const EnhanceFn& enhancer = nullptr);

Aggregate aggregate(const std::vector<MetricTriple>& values);

}  // namespace throatline::metrics
