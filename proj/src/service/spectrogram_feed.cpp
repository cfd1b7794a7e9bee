#include "throatline/spectrogram_feed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "throatline/dsp.hpp"
#include "throatline/errors.hpp"

namespace throatline {

SpectrogramFeed::SpectrogramFeed(std::size_t win_len, std::size_t hop)
    : win_len_(win_len), hop_(hop), window_(win_len), segment_(win_len), power_(win_len / 2 + 1) {
  if (win_len == 0 || hop == 0 || hop > win_len || (win_len & (win_len - 1)) != 0) {
    throw ParameterError("spectrogram feed needs a power-of-two window and 0 < hop <= window");
  }
  for (std::size_t n = 0; n < win_len; ++n) {
    window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                      static_cast<double>(win_len));
  }
}

std::vector<protocol::SpectrogramColumn> SpectrogramFeed::push(std::span<const float> samples,
                                                               MonitorSource source) {
  std::vector<protocol::SpectrogramColumn> out;
  pending_.insert(pending_.end(), samples.begin(), samples.end());
  std::size_t start = 0;
  const auto src = static_cast<std::size_t>(source);
  while (pending_.size() - start >= win_len_) {
    for (std::size_t n = 0; n < win_len_; ++n) segment_[n] = window_[n] * pending_[start + n];
    const auto spec = dsp::rfft(segment_, win_len_);
    double peak = 0.0;
    for (std::size_t k = 0; k < power_.size(); ++k) {
      power_[k] = std::norm(spec[k]);
      peak = std::max(peak, power_[k]);
    }
    max_power_[src] = std::max(max_power_[src], peak);
    out.push_back({next_index_++, source, dsp::power_to_display_db(power_, max_power_[src])});
    start += hop_;
  }
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(start));
  return out;
}

std::vector<protocol::SpectrogramColumn> SpectrogramFeed::drain(SpscRing<float>& samples,
                                                                SpscRing<std::uint8_t>& tags,
                                                                std::size_t frame_len) {
  std::vector<protocol::SpectrogramColumn> out;
  frame_.resize(frame_len);
  std::uint8_t tag = 0;
  while (tags.available() >= 1 && samples.available() >= frame_len) {
    tags.read_available(std::span<std::uint8_t>(&tag, 1));
    samples.read_available(frame_);
    auto cols = push(frame_, tag == 0 ? MonitorSource::kRaw : MonitorSource::kEnhanced);
    std::move(cols.begin(), cols.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace throatline
