#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <tuple>

#include "throatline/errors.hpp"
#include "throatline/throatsim.hpp"

namespace throatline {
namespace {

struct Glide {
  double from_hz, to_hz;
};

// Rising, falling and level f0 contours.
constexpr std::array<Glide, 6> kGlides{{{110, 140},
                                        {140, 110},
                                        {180, 220},
                                        {220, 180},
                                        {130, 130},
                                        {200, 200}}};

// F1-F3 of a few vowels; every vowel shares a fourth formant.
constexpr std::array<std::array<double, 3>, 7> kVowels{{{730, 1090, 2440},
                                                       {270, 2290, 3010},
                                                       {300, 870, 2240},
                                                       {530, 1840, 2480},
                                                       {660, 1720, 2410},
                                                       {490, 1350, 2490},
                                                       {640, 1190, 2390}}};
constexpr double kF4 = 3400.0;
constexpr std::array<double, 4> kFormantWeight{1.0, 0.5, 0.25, 0.25};
constexpr std::array<double, 4> kFormantWidth{80.0, 100.0, 150.0, 200.0};

// Peak-normalized voiced unit.
std::vector<double> make_unit(const Glide& glide, const std::array<double, 3>& vowel,
                              std::size_t len, int rate) {
  std::vector<double> f0(len);
  for (std::size_t i = 0; i < len; ++i) {
    const double t = len > 1 ? static_cast<double>(i) / static_cast<double>(len - 1) : 0.0;
    f0[i] = glide.from_hz + (glide.to_hz - glide.from_hz) * t;
  }
  std::vector<double> phase(len);
  double acc = 0.0;
  for (std::size_t i = 0; i < len; ++i) {
    acc += 2.0 * std::numbers::pi * f0[i] / rate;
    phase[i] = acc;
  }
  const std::array<double, 4> formants{vowel[0], vowel[1], vowel[2], kF4};
  std::vector<double> sig(len, 0.0);
  const double limit = rate / 2.0 - 500.0;
  for (int k = 1; k < 60; ++k) {
    for (std::size_t i = 0; i < len; ++i) {
      const double fk = k * f0[i];
      if (fk > limit) continue;
      double amp = 0.0;
      for (std::size_t j = 0; j < formants.size(); ++j) {
        const double d = (fk - formants[j]) / kFormantWidth[j];
        amp += kFormantWeight[j] / (1.0 + d * d);
      }
      amp /= std::sqrt(static_cast<double>(k));
      sig[i] += amp * std::sin(k * phase[i]);
    }
  }
  const auto ramp = std::min<std::size_t>(static_cast<std::size_t>(0.02 * rate), len / 2);
  for (std::size_t i = 0; i < ramp; ++i) {
    const double s = std::sin(std::numbers::pi / 2.0 * static_cast<double>(i) /
                              static_cast<double>(ramp));
    sig[i] *= s * s;
    sig[len - 1 - i] *= s * s;
  }
  double peak = 0.0;
  for (const double v : sig) peak = std::max(peak, std::abs(v));
  if (peak > 0.0) {
    for (double& v : sig) v /= peak;
  }
  return sig;
}

}  // namespace

SampleBuffer synthetic_utterance(double seconds, std::uint64_t seed,
                                 const SynthConfig& cfg) {
  if (!(seconds >= 0.0) || cfg.frame_len == 0 || cfg.frames_per_unit == 0) {
    throw ParameterError("invalid synthetic utterance parameters");
  }
  const auto n_frames = static_cast<std::size_t>(seconds * cfg.sample_rate) / cfg.frame_len;
  std::vector<float> out(n_frames * cfg.frame_len, 0.0f);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit01(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_glide(0, kGlides.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_vowel(0, kVowels.size() - 1);
  std::uniform_real_distribution<double> peak(cfg.peak_min, cfg.peak_max);

  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::vector<double>> cache;
  std::size_t f = 0;
  while (f < n_frames) {
    if (unit01(rng) < cfg.silence_probability) {
      ++f;
      continue;
    }
    const std::size_t span = std::min(cfg.frames_per_unit, n_frames - f);
    const std::size_t g = pick_glide(rng);
    const std::size_t v = pick_vowel(rng);
    const double gain = peak(rng);
    auto key = std::make_tuple(g, v, span);
    auto it = cache.find(key);
    if (it == cache.end()) {
      it = cache.emplace(key, make_unit(kGlides[g], kVowels[v], span * cfg.frame_len,
                                        cfg.sample_rate)).first;
    }
    const auto& unit = it->second;
    for (std::size_t i = 0; i < unit.size(); ++i) {
      out[f * cfg.frame_len + i] = static_cast<float>(gain * unit[i]);
    }
    f += span;
  }
  return SampleBuffer(std::move(out), cfg.sample_rate);
}

SampleBuffer tone(double freq_hz, double amplitude, double seconds, int sample_rate) {
  const auto n = static_cast<std::size_t>(seconds * sample_rate);
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<float>(
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * static_cast<double>(i) / sample_rate));
  }
  return SampleBuffer(std::move(out), sample_rate);
}

}  // namespace throatline
