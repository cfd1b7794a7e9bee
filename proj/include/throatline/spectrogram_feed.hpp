#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "throatline/engine.hpp"
#include "throatline/protocol.hpp"

namespace throatline {

// Turns the engine's monitor tap into log-dB spectrogram columns (Hann
// window, hop-spaced). Each column is normalized against the running maximum
// column power of its source and clamped to [-80, 0] dB. Runs on its own
// worker, never on capture or playback.
class SpectrogramFeed {
 public:
  explicit SpectrogramFeed(std::size_t win_len = 1024, std::size_t hop = 256);

  // Appends one monitored frame; returns the columns it completes.
  std::vector<protocol::SpectrogramColumn> push(std::span<const float> samples,
                                                MonitorSource source);

  // Drains whole frames from the engine's monitor rings.
  std::vector<protocol::SpectrogramColumn> drain(SpscRing<float>& samples,
                                                 SpscRing<std::uint8_t>& tags,
                                                 std::size_t frame_len);

  std::size_t n_bins() const { return win_len_ / 2 + 1; }
  std::uint32_t columns_emitted() const { return next_index_; }

 private:
  std::size_t win_len_;
  std::size_t hop_;
  std::vector<double> window_;
  std::vector<float> pending_;  // samples not yet consumed by a full hop
  std::uint32_t next_index_ = 0;
  double max_power_[2] = {0.0, 0.0};
  std::vector<double> segment_;
  std::vector<double> power_;
  std::vector<float> frame_;
};

// Bounded multi-producer queue with drop-oldest semantics.
template <typename T>
class DropOldestQueue {
 public:
  explicit DropOldestQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(T value) {
    std::lock_guard lock(mu_);
    if (items_.size() >= capacity_) {
      items_.pop_front();
      ++dropped_;
    }
    items_.push_back(std::move(value));
  }

  std::vector<T> drain() {
    std::lock_guard lock(mu_);
    std::vector<T> out(std::make_move_iterator(items_.begin()),
                       std::make_move_iterator(items_.end()));
    items_.clear();
    return out;
  }

  std::uint64_t dropped() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }

 private:
  mutable std::mutex mu_;
  std::deque<T> items_;
  std::size_t capacity_;
  std::uint64_t dropped_ = 0;
};

}  // namespace throatline
