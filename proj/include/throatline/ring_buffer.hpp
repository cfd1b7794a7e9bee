#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>

#include "throatline/errors.hpp"

namespace throatline {

// Single-producer / single-consumer sample FIFO.
//
// push() is called from exactly one context and pull() from exactly one
// other; both are wait-free: no allocation, no locks, bounded work. Cursors
// are monotone 64-bit counters so `write - read` is always the fill level.
// Overflow rejects the excess (overrun counter); a short read zero-fills the
// shortfall (underrun counter).
template <typename T>
class SpscRing {
 public:
  explicit SpscRing(std::size_t capacity)
      : capacity_(capacity), mask_(capacity - 1), data_(new T[capacity]()) {
    if (capacity == 0 || (capacity & (capacity - 1)) != 0) {
      throw ParameterError("ring capacity must be a power of two");
    }
  }

  SpscRing(const SpscRing&) = delete;
  SpscRing& operator=(const SpscRing&) = delete;

  std::size_t capacity() const { return capacity_; }

  // Producer side. Returns the number of samples accepted.
  std::size_t push(std::span<const T> in) {
    const std::uint64_t w = write_.load(std::memory_order_relaxed);
    const std::uint64_t r = read_.load(std::memory_order_acquire);
    const std::size_t free_space = capacity_ - static_cast<std::size_t>(w - r);
    const std::size_t n = std::min(free_space, in.size());
    const std::size_t start = static_cast<std::size_t>(w) & mask_;
    const std::size_t first = std::min(n, capacity_ - start);
    std::copy_n(in.data(), first, data_.get() + start);
    std::copy_n(in.data() + first, n - first, data_.get());
    write_.store(w + n, std::memory_order_release);
    if (n < in.size()) {
      overruns_.fetch_add(in.size() - n, std::memory_order_relaxed);
    }
    return n;
  }

  // Consumer side. Always fills `out`; returns the number of real samples.
  std::size_t pull(std::span<T> out) {
    const std::size_t n = read_available(out);
    if (n < out.size()) {
      std::fill(out.begin() + static_cast<std::ptrdiff_t>(n), out.end(), T{});
      underruns_.fetch_add(out.size() - n, std::memory_order_relaxed);
    }
    return n;
  }

  // Consumer side, no zero-fill and no underrun accounting: reads only what
  // is present.
  std::size_t read_available(std::span<T> out) {
    const std::uint64_t r = read_.load(std::memory_order_relaxed);
    const std::uint64_t w = write_.load(std::memory_order_acquire);
    const std::size_t n =
        std::min(static_cast<std::size_t>(w - r), out.size());
    const std::size_t start = static_cast<std::size_t>(r) & mask_;
    const std::size_t first = std::min(n, capacity_ - start);
    std::copy_n(data_.get() + start, first, out.data());
    std::copy_n(data_.get(), n - first, out.data() + first);
    read_.store(r + n, std::memory_order_release);
    return n;
  }

  std::size_t available() const {
    const std::uint64_t w = write_.load(std::memory_order_acquire);
    const std::uint64_t r = read_.load(std::memory_order_acquire);
    return static_cast<std::size_t>(w - r);
  }

  // Producer side: room left for push().
  std::size_t free_space() const { return capacity_ - available(); }

  std::uint64_t overruns() const {
    return overruns_.load(std::memory_order_relaxed);
  }
  std::uint64_t underruns() const {
    return underruns_.load(std::memory_order_relaxed);
  }
  std::uint64_t write_cursor() const {
    return write_.load(std::memory_order_acquire);
  }
  std::uint64_t read_cursor() const {
    return read_.load(std::memory_order_acquire);
  }

 private:
  static_assert(std::atomic<std::uint64_t>::is_always_lock_free);

  const std::size_t capacity_;
  const std::size_t mask_;
  std::unique_ptr<T[]> data_;
  alignas(64) std::atomic<std::uint64_t> write_{0};
  alignas(64) std::atomic<std::uint64_t> read_{0};
  alignas(64) std::atomic<std::uint64_t> overruns_{0};
  std::atomic<std::uint64_t> underruns_{0};
};

using RingBuffer = SpscRing<float>;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace throatline
