#include <cmath>

#include "throatline/audio.hpp"
#include "throatline/errors.hpp"

namespace throatline {

SampleBuffer::SampleBuffer(std::vector<float> samples, int sample_rate)
    : samples_(std::move(samples)), sample_rate_(sample_rate) {
  if (sample_rate_ <= 0) throw ParameterError("sample_rate must be positive");
  for (const float s : samples_) {
    if (!std::isfinite(s)) throw ParameterError("sample buffer contains NaN/Inf");
  }
}

FrameSplit frame_split(const SampleBuffer& buffer, std::size_t frame_len) {
  if (frame_len == 0) throw ParameterError("frame_len must be positive");
  FrameSplit out;
  const std::size_t n = buffer.size() / frame_len;
  out.frames.reserve(n);
  const auto& s = buffer.samples();
  for (std::size_t i = 0; i < n; ++i) {
    Frame f;
    f.index = i;
    f.samples.assign(s.begin() + static_cast<std::ptrdiff_t>(i * frame_len),
                     s.begin() + static_cast<std::ptrdiff_t>((i + 1) * frame_len));
    out.frames.push_back(std::move(f));
  }
  out.dropped = buffer.size() - n * frame_len;
  return out;
}

std::vector<float> concat_frames(const std::vector<Frame>& frames) {
  std::vector<float> out;
  for (const auto& f : frames) out.insert(out.end(), f.samples.begin(), f.samples.end());
  return out;
}

}  // namespace throatline
