#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace throatline {

inline constexpr int kDefaultSampleRate = 24000;
inline constexpr std::size_t kDefaultFrameLen = 1920;  // 80 ms at 24 kHz

// Mono PCM in nominal [-1, 1]. Every sample is finite and the rate positive;
// the constructor enforces both.
class SampleBuffer {
 public:
  SampleBuffer() = default;
  SampleBuffer(std::vector<float> samples, int sample_rate);

  const std::vector<float>& samples() const { return samples_; }
  std::span<const float> view() const { return samples_; }
  int sample_rate() const { return sample_rate_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  double duration_s() const {
    return static_cast<double>(samples_.size()) / sample_rate_;
  }

 private:
  std::vector<float> samples_;
  int sample_rate_ = kDefaultSampleRate;
};

struct Frame {
  std::uint64_t index = 0;
  std::vector<float> samples;
};

struct FrameSplit {
  std::vector<Frame> frames;
  std::size_t dropped = 0;  // trailing samples that did not fill a frame
};

// Non-overlapping fixed-size frames, indices 0..n-1. The partial tail is
// dropped and its length reported.
FrameSplit frame_split(const SampleBuffer& buffer, std::size_t frame_len);

std::vector<float> concat_frames(const std::vector<Frame>& frames);

// Band-limited polyphase resampling (Hann-windowed sinc, 32 taps per phase).
// Output length is round(len * target / source).
SampleBuffer resample(const SampleBuffer& buffer, int target_rate);

}  // namespace throatline
