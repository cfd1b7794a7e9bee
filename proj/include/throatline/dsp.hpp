#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "throatline/audio.hpp"

namespace throatline::dsp {

enum class SpectrogramKind { kComplex, kPower, kLogDb };

inline constexpr double kLogFloorDb = -80.0;

// Column-major time/frequency grid. For kComplex the values live in
// `complex_columns`; power and log-dB kinds use `columns`.
struct Spectrogram {
  SpectrogramKind kind = SpectrogramKind::kPower;
  std::size_t n_bins = 0;
  std::size_t hop = 0;
  std::size_t win_len = 0;
  std::size_t fft_size = 0;
  std::vector<std::vector<double>> columns;
  std::vector<std::vector<std::complex<double>>> complex_columns;

  std::size_t n_columns() const {
    return kind == SpectrogramKind::kComplex ? complex_columns.size()
                                             : columns.size();
  }
};

// Hann window of n non-zero points (an (n+2)-point symmetric Hann with the
// zero endpoints removed, as STOI uses it).
std::vector<double> hann_window(std::size_t n);

std::size_t fft_size_for(std::size_t win_len);

// Real-input FFT of `frame` zero-padded to `fft_size`; returns fft/2+1 bins.
std::vector<std::complex<double>> rfft(std::span<const double> frame,
                                       std::size_t fft_size);

// Hann-windowed STFT. Column t covers [t*hop, t*hop + win_len). Empty when
// the input is shorter than one window.
Spectrogram stft(std::span<const float> samples, std::size_t win_len,
                 std::size_t hop);
Spectrogram stft(const SampleBuffer& buffer, std::size_t win_len,
                 std::size_t hop);

Spectrogram power_spectrogram(const Spectrogram& complex_spec);

// 10*log10(power) normalized so the stream maximum is 0 dB, clamped at -80.
Spectrogram log_spectrogram(const SampleBuffer& buffer, std::size_t win_len,
                            std::size_t hop);

// Converts one power column to display dB against `reference_power`.
std::vector<float> power_to_display_db(std::span<const double> power,
                                       double reference_power);

struct Filterbank {
  std::size_t n_bins = 0;
  std::vector<double> center_hz;
  std::vector<double> low_edge_hz;
  std::vector<double> high_edge_hz;
  // n_bands rows of n_bins non-negative weights.
  std::vector<std::vector<double>> weights;

  std::size_t n_bands() const { return weights.size(); }
  std::vector<double> apply(std::span<const double> power) const;
};

// 15 one-third-octave bands with centers 150 * 2^(k/3) Hz and rectangular
// 0/1 weights from the bin nearest the lower edge up to (excluding) the bin
// nearest the upper edge. Throws ConfigurationError if a band is empty.
Filterbank third_octave_filterbank(std::size_t n_bins, double fft_rate,
                                   std::size_t n_bands = 15,
                                   double lowest_center_hz = 150.0);

// Triangular HTK-style mel filterbank spanning 0..rate/2.
Filterbank mel_filterbank(std::size_t n_bands, std::size_t fft_size,
                          double rate);

// --- biquads --------------------------------------------------------------

struct BiquadCoeffs {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

  bool is_stable() const;
  // |H(e^{jw})| at `freq_hz`.
  double magnitude_at(double freq_hz, double rate) const;
};

BiquadCoeffs biquad_lowpass(double fc, double q, double rate);
BiquadCoeffs biquad_highpass(double fc, double q, double rate);
// Shelving boost/cut above fc (shelf slope S = 1).
BiquadCoeffs biquad_highshelf(double fc, double gain_db, double rate);

// Transposed direct form II section with persistent state, for streaming.
class Biquad {
 public:
  Biquad() = default;
  explicit Biquad(const BiquadCoeffs& c) : c_(c) {}

  double process(double x) {
    const double y = c_.b0 * x + z1_;
    z1_ = c_.b1 * x - c_.a1 * y + z2_;
    z2_ = c_.b2 * x - c_.a2 * y;
    return y;
  }
  void reset() { z1_ = z2_ = 0.0; }
  const BiquadCoeffs& coeffs() const { return c_; }

 private:
  BiquadCoeffs c_;
  double z1_ = 0.0, z2_ = 0.0;
};

std::vector<float> biquad_apply(const BiquadCoeffs& coeffs,
                                std::span<const float> in);
SampleBuffer biquad_apply(const BiquadCoeffs& coeffs,
                          const SampleBuffer& buffer);

// Butterworth-aligned cascade of order/2 low-pass sections.
std::vector<BiquadCoeffs> butterworth_lowpass(double fc, int order,
                                              double rate);

// Equal-power style blend: weights cos^2(pi*i/(2*len)) on `a` and sin^2 on
// `b` for i < len, then `b`.
std::vector<float> crossfade(std::span<const float> a, std::span<const float> b,
                             std::size_t len);

}  // namespace throatline::dsp
