#include "throatline/dsp.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "throatline/errors.hpp"
#include "throatline/ring_buffer.hpp"

namespace throatline::dsp {
namespace {

constexpr double kPi = std::numbers::pi;

Eigen::FFT<double>& thread_fft() {
  thread_local Eigen::FFT<double> fft;
  return fft;
}

BiquadCoeffs normalize(double b0, double b1, double b2, double a0, double a1,
                       double a2) {
  return {b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0};
}

void check_cutoff(double fc, double q, double rate) {
  if (!(rate > 0.0)) throw ParameterError("sample rate must be positive");
  if (!(fc > 0.0 && fc < rate / 2.0)) {
    throw ParameterError("cutoff must lie strictly inside (0, rate/2)");
  }
  if (!(q > 0.0)) throw ParameterError("quality factor must be positive");
}

}  // namespace

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i + 1) /
                                static_cast<double>(n + 1));
  }
  return w;
}

std::size_t fft_size_for(std::size_t win_len) { return next_pow2(win_len); }

std::vector<std::complex<double>> rfft(std::span<const double> frame,
                                       std::size_t fft_size) {
  std::vector<double> padded(fft_size, 0.0);
  std::copy_n(frame.begin(), std::min(frame.size(), fft_size), padded.begin());
  std::vector<std::complex<double>> full;
  thread_fft().fwd(full, padded);
  full.resize(fft_size / 2 + 1);
  return full;
}

Spectrogram stft(std::span<const float> samples, std::size_t win_len,
                 std::size_t hop) {
  if (hop == 0 || win_len < hop) {
    throw ParameterError("stft requires win_len >= hop > 0");
  }
  Spectrogram spec;
  spec.kind = SpectrogramKind::kComplex;
  spec.win_len = win_len;
  spec.hop = hop;
  spec.fft_size = fft_size_for(win_len);
  spec.n_bins = spec.fft_size / 2 + 1;
  if (samples.size() < win_len) return spec;

  const auto window = hann_window(win_len);
  const std::size_t n_cols = (samples.size() - win_len) / hop + 1;
  spec.complex_columns.reserve(n_cols);
  std::vector<double> seg(win_len);
  for (std::size_t t = 0; t < n_cols; ++t) {
    for (std::size_t n = 0; n < win_len; ++n) {
      seg[n] = window[n] * samples[t * hop + n];
    }
    spec.complex_columns.push_back(rfft(seg, spec.fft_size));
  }
  return spec;
}

Spectrogram stft(const SampleBuffer& buffer, std::size_t win_len,
                 std::size_t hop) {
  return stft(buffer.view(), win_len, hop);
}

Spectrogram power_spectrogram(const Spectrogram& complex_spec) {
  Spectrogram out;
  out.kind = SpectrogramKind::kPower;
  out.n_bins = complex_spec.n_bins;
  out.hop = complex_spec.hop;
  out.win_len = complex_spec.win_len;
  out.fft_size = complex_spec.fft_size;
  out.columns.reserve(complex_spec.complex_columns.size());
  for (const auto& col : complex_spec.complex_columns) {
    std::vector<double> p(col.size());
    std::transform(col.begin(), col.end(), p.begin(),
                   [](const std::complex<double>& c) { return std::norm(c); });
    out.columns.push_back(std::move(p));
  }
  return out;
}

std::vector<float> power_to_display_db(std::span<const double> power,
                                       double reference_power) {
  std::vector<float> out(power.size(), static_cast<float>(kLogFloorDb));
  if (!(reference_power > 0.0)) return out;
  for (std::size_t i = 0; i < power.size(); ++i) {
    if (power[i] <= 0.0) continue;
    const double db = 10.0 * std::log10(power[i] / reference_power);
    out[i] = static_cast<float>(std::clamp(db, kLogFloorDb, 0.0));
  }
  return out;
}

Spectrogram log_spectrogram(const SampleBuffer& buffer, std::size_t win_len,
                            std::size_t hop) {
  Spectrogram spec = power_spectrogram(stft(buffer, win_len, hop));
  double peak = 0.0;
  for (const auto& col : spec.columns) {
    for (const double p : col) peak = std::max(peak, p);
  }
  for (auto& col : spec.columns) {
    const auto db = power_to_display_db(col, peak);
    col.assign(db.begin(), db.end());
  }
  spec.kind = SpectrogramKind::kLogDb;
  return spec;
}

std::vector<double> Filterbank::apply(std::span<const double> power) const {
  std::vector<double> out(weights.size(), 0.0);
  for (std::size_t b = 0; b < weights.size(); ++b) {
    const auto& w = weights[b];
    double acc = 0.0;
    for (std::size_t k = 0; k < std::min(w.size(), power.size()); ++k) {
      acc += w[k] * power[k];
    }
    out[b] = acc;
  }
  return out;
}

Filterbank third_octave_filterbank(std::size_t n_bins, double fft_rate,
                                   std::size_t n_bands,
                                   double lowest_center_hz) {
  if (n_bins < 2) throw ConfigurationError("filterbank needs at least 2 bins");
  Filterbank fb;
  fb.n_bins = n_bins;
  const double fft_size = 2.0 * static_cast<double>(n_bins - 1);
  const auto nearest_bin = [&](double hz) {
    const double idx = std::round(hz * fft_size / fft_rate);
    return static_cast<std::size_t>(
        std::clamp(idx, 0.0, static_cast<double>(n_bins - 1)));
  };
  for (std::size_t k = 0; k < n_bands; ++k) {
    const double kk = static_cast<double>(k);
    const double center = lowest_center_hz * std::pow(2.0, kk / 3.0);
    const double lo = lowest_center_hz * std::pow(2.0, (2.0 * kk - 1.0) / 6.0);
    const double hi = lowest_center_hz * std::pow(2.0, (2.0 * kk + 1.0) / 6.0);
    const std::size_t lo_bin = nearest_bin(lo);
    const std::size_t hi_bin = nearest_bin(hi);
    if (hi_bin <= lo_bin) {
      throw ConfigurationError("third-octave band " + std::to_string(k) +
                               " contains no FFT bin");
    }
    std::vector<double> row(n_bins, 0.0);
    std::fill(row.begin() + static_cast<std::ptrdiff_t>(lo_bin),
              row.begin() + static_cast<std::ptrdiff_t>(hi_bin), 1.0);
    fb.center_hz.push_back(center);
    fb.low_edge_hz.push_back(lo);
    fb.high_edge_hz.push_back(hi);
    fb.weights.push_back(std::move(row));
  }
  return fb;
}

Filterbank mel_filterbank(std::size_t n_bands, std::size_t fft_size,
                          double rate) {
  const auto hz2mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  const auto mel2hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };
  Filterbank fb;
  fb.n_bins = fft_size / 2 + 1;
  const double top = hz2mel(rate / 2.0);
  std::vector<double> pts(n_bands + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = mel2hz(top * static_cast<double>(i) / static_cast<double>(n_bands + 1));
  }
  for (std::size_t m = 0; m < n_bands; ++m) {
    std::vector<double> row(fb.n_bins, 0.0);
    for (std::size_t k = 0; k < fb.n_bins; ++k) {
      const double f = rate * static_cast<double>(k) / static_cast<double>(fft_size);
      const double up = (f - pts[m]) / (pts[m + 1] - pts[m]);
      const double down = (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1]);
      row[k] = std::max(0.0, std::min(up, down));
    }
    fb.center_hz.push_back(pts[m + 1]);
    fb.low_edge_hz.push_back(pts[m]);
    fb.high_edge_hz.push_back(pts[m + 2]);
    fb.weights.push_back(std::move(row));
  }
  return fb;
}

bool BiquadCoeffs::is_stable() const {
  return std::abs(a2) < 1.0 && std::abs(a1) < 1.0 + a2;
}

double BiquadCoeffs::magnitude_at(double freq_hz, double rate) const {
  const double w = 2.0 * kPi * freq_hz / rate;
  const std::complex<double> z1 = std::polar(1.0, -w);
  const std::complex<double> z2 = z1 * z1;
  return std::abs((b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2));
}

BiquadCoeffs biquad_lowpass(double fc, double q, double rate) {
  check_cutoff(fc, q, rate);
  const double w0 = 2.0 * kPi * fc / rate;
  const double c = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  return normalize((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha,
                   -2.0 * c, 1.0 - alpha);
}

BiquadCoeffs biquad_highpass(double fc, double q, double rate) {
  check_cutoff(fc, q, rate);
  const double w0 = 2.0 * kPi * fc / rate;
  const double c = std::cos(w0);
  const double alpha = std::sin(w0) / (2.0 * q);
  return normalize((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha,
                   -2.0 * c, 1.0 - alpha);
}

BiquadCoeffs biquad_highshelf(double fc, double gain_db, double rate) {
  check_cutoff(fc, 1.0, rate);
  const double a = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * kPi * fc / rate;
  const double c = std::cos(w0);
  const double alpha = std::sin(w0) / 2.0 * std::sqrt(2.0);  // shelf slope 1
  const double sa = 2.0 * std::sqrt(a) * alpha;
  return normalize(a * ((a + 1.0) + (a - 1.0) * c + sa),
                   -2.0 * a * ((a - 1.0) + (a + 1.0) * c),
                   a * ((a + 1.0) + (a - 1.0) * c - sa),
                   (a + 1.0) - (a - 1.0) * c + sa,
                   2.0 * ((a - 1.0) - (a + 1.0) * c),
                   (a + 1.0) - (a - 1.0) * c - sa);
}

std::vector<float> biquad_apply(const BiquadCoeffs& coeffs,
                                std::span<const float> in) {
  Biquad section(coeffs);
  std::vector<float> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = static_cast<float>(section.process(in[i]));
  }
  return out;
}

SampleBuffer biquad_apply(const BiquadCoeffs& coeffs, const SampleBuffer& buffer) {
  return SampleBuffer(biquad_apply(coeffs, buffer.view()), buffer.sample_rate());
}

std::vector<BiquadCoeffs> butterworth_lowpass(double fc, int order, double rate) {
  if (order <= 0 || order % 2 != 0) {
    throw ParameterError("filter order must be a positive even integer");
  }
  std::vector<BiquadCoeffs> sections;
  for (int k = 1; k <= order / 2; ++k) {
    const double q = 1.0 / (2.0 * std::cos((2.0 * k - 1.0) * kPi / (2.0 * order)));
    sections.push_back(biquad_lowpass(fc, q, rate));
  }
  return sections;
}

std::vector<float> crossfade(std::span<const float> a, std::span<const float> b,
                             std::size_t len) {
  if (a.size() != b.size()) throw ParameterError("crossfade inputs differ in length");
  if (len > a.size()) throw ParameterError("crossfade longer than its inputs");
  std::vector<float> out(b.begin(), b.end());
  for (std::size_t i = 0; i < len; ++i) {
    const double c = std::cos(kPi * static_cast<double>(i) / (2.0 * static_cast<double>(len)));
    const double wa = c * c;
    out[i] = static_cast<float>(wa * a[i] + (1.0 - wa) * b[i]);
  }
  return out;
}

}  // namespace throatline::dsp
