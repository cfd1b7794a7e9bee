#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "throatline/audio.hpp"
#include "throatline/errors.hpp"

namespace throatline {
namespace {

constexpr int kTaps = 32;
constexpr int kHalf = kTaps / 2;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Taps for the output sample at input position i + frac, covering inputs
// i - kHalf + 1 .. i + kHalf. Normalized to unit sum so DC passes exactly.
void design_phase(double frac, double cutoff, double* taps) {
  double sum = 0.0;
  for (int k = 0; k < kTaps; ++k) {
    const double u = frac + static_cast<double>(kHalf - 1 - k);
    const double w = std::abs(u) < kHalf
                         ? 0.5 * (1.0 + std::cos(std::numbers::pi * u / kHalf))
                         : 0.0;
    taps[k] = cutoff * sinc(cutoff * u) * w;
    sum += taps[k];
  }
  for (int k = 0; k < kTaps; ++k) taps[k] /= sum;
}

}  // namespace

SampleBuffer resample(const SampleBuffer& buffer, int target_rate) {
  if (target_rate <= 0) throw ParameterError("target_rate must be positive");
  const int source_rate = buffer.sample_rate();
  if (target_rate == source_rate) return buffer;

  const long g = std::gcd(source_rate, target_rate);
  const long up = target_rate / g;    // L
  const long down = source_rate / g;  // M
  const double cutoff = std::min(1.0, static_cast<double>(up) / down);
  const auto n_in = static_cast<long>(buffer.size());
  const auto n_out = static_cast<long>(
      std::llround(static_cast<double>(n_in) * target_rate / source_rate));

  // One filter per phase when the phase count is small, else on the fly.
  const bool tabulate = up <= 4096;
  std::vector<double> table;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(up * kTaps));
    for (long p = 0; p < up; ++p) {
      design_phase(static_cast<double>(p) / up, cutoff, &table[static_cast<std::size_t>(p * kTaps)]);
    }
  }

  const auto& x = buffer.samples();
  std::vector<float> out(static_cast<std::size_t>(std::max(0L, n_out)));
  double scratch[kTaps];
  for (long n = 0; n < n_out; ++n) {
    const long num = n * down;
    const long i = num / up;
    const long phase = num % up;
    const double* taps = nullptr;
    if (tabulate) {
      taps = &table[static_cast<std::size_t>(phase * kTaps)];
    } else {
      design_phase(static_cast<double>(phase) / up, cutoff, scratch);
      taps = scratch;
    }
    double acc = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      // Edge samples are replicated outside the buffer.
      const long idx = std::clamp(i - kHalf + 1 + k, 0L, n_in - 1);
      acc += taps[k] * x[static_cast<std::size_t>(idx)];
    }
    out[static_cast<std::size_t>(n)] = static_cast<float>(acc);
  }
  return SampleBuffer(std::move(out), target_rate);
}

}  // namespace throatline
