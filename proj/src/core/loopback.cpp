#include <algorithm>
#include <chrono>
#include <cmath>

#include "throatline/engine.hpp"
#include "throatline/errors.hpp"

namespace throatline {
namespace {

using Clock = std::chrono::steady_clock;

// Smallest block used when a buffer is configured as 0 ms.
constexpr std::size_t kMinBlock = 48;

std::size_t block_samples(double ms, int rate) {
  const auto n = static_cast<std::size_t>(std::lround(ms * rate / 1000.0));
  return std::max(n, kMinBlock);
}

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
}

void sleep_until_ns(std::int64_t t) {
  std::this_thread::sleep_until(Clock::time_point(std::chrono::nanoseconds(t)));
}

}  // namespace

RealtimeLoop::RealtimeLoop(Engine& engine, SampleBuffer source, Options options)
    : engine_(engine), source_(std::move(source)), options_(options) {
  if (source_.empty()) throw ParameterError("loopback source is empty");
  if (source_.sample_rate() != engine_.config().sample_rate) {
    throw ConfigurationError("loopback source rate does not match the engine");
  }
  recorded_.reserve(options_.record_samples);
  const std::size_t max_blocks = options_.record_samples / kMinBlock + 2;
  block_pull_s_.reserve(max_blocks);
  block_first_sample_.reserve(max_blocks);
}

RealtimeLoop::~RealtimeLoop() { stop(); }

void RealtimeLoop::start() {
  if (running_.exchange(true)) return;
  engine_.start();
  capture_start_ns_.store(now_ns());
  threads_.emplace_back(&RealtimeLoop::capture_loop, this);
  threads_.emplace_back(&RealtimeLoop::worker_loop, this);
  threads_.emplace_back(&RealtimeLoop::playback_loop, this);
}

void RealtimeLoop::stop() {
  running_.store(false);
  for (auto& t : threads_) {
    if (t.joinable()) t.join();
  }
  threads_.clear();
}

void RealtimeLoop::wait() {
  while (running_.load() && !(capture_done_.load() && recorded_done_.load())) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

double RealtimeLoop::play_time_s(std::size_t sample_index) const {
  if (block_first_sample_.empty() || sample_index >= recorded_.size()) {
    throw RangeError("sample was not recorded");
  }
  const auto it = std::upper_bound(block_first_sample_.begin(), block_first_sample_.end(), sample_index);
  const auto b = static_cast<std::size_t>(it - block_first_sample_.begin()) - 1;
  return block_pull_s_[b] + static_cast<double>(sample_index - block_first_sample_[b]) /
                                engine_.config().sample_rate;
}

void RealtimeLoop::capture_loop() {
  const int rate = engine_.config().sample_rate;
  const std::int64_t t0 = capture_start_ns_.load();
  const auto& x = source_.samples();
  std::vector<float> block;
  std::uint64_t captured = 0;  // samples delivered so far, silence included
  std::size_t pos = 0;
  while (running_.load()) {
    const std::size_t n = block_samples(engine_.latency_report().input_buffer_ms, rate);
    block.assign(n, 0.0f);
    for (std::size_t i = 0; i < n && !capture_done_.load(); ++i) {
      block[i] = x[pos++];
      if (pos == x.size()) {
        if (options_.repeat) {
          pos = 0;
        } else {
          capture_done_.store(true);
        }
      }
    }
    captured += n;
    // A block is available once its last sample has been "recorded".
    sleep_until_ns(t0 + static_cast<std::int64_t>(captured * 1'000'000'000ull / static_cast<std::uint64_t>(rate)));
    engine_.push_input(block);
    first_block_delivered_.store(true, std::memory_order_release);
  }
}

void RealtimeLoop::worker_loop() {
  while (running_.load()) {
    engine_.process_step();
    std::this_thread::sleep_for(std::chrono::microseconds(500));
  }
}

void RealtimeLoop::playback_loop() {
  const int rate = engine_.config().sample_rate;
  const std::int64_t t0 = capture_start_ns_.load();
  while (running_.load() && !first_block_delivered_.load(std::memory_order_acquire)) {
    std::this_thread::sleep_for(std::chrono::microseconds(200));
  }
  const std::int64_t first = now_ns();
  std::vector<float> block;
  std::uint64_t pulled = 0;
  while (running_.load()) {
    const double out_ms = engine_.latency_report().output_buffer_ms;
    const std::size_t n = block_samples(out_ms, rate);
    block.resize(n);
    sleep_until_ns(first + static_cast<std::int64_t>(pulled * 1'000'000'000ull / static_cast<std::uint64_t>(rate)));
    const double pull_s = static_cast<double>(now_ns() - t0) * 1e-9;
    engine_.pull_output(block);
    pulled += n;
    if (recorded_.size() < options_.record_samples) {
      if (block_first_sample_.size() < block_first_sample_.capacity()) {
        if (block_first_sample_.empty()) playback_start_s_ = pull_s + out_ms / 1000.0;
        block_first_sample_.push_back(recorded_.size());
        // Samples pulled now reach the listener one output buffer later.
        block_pull_s_.push_back(pull_s + out_ms / 1000.0);
      }
      const std::size_t take = std::min(n, options_.record_samples - recorded_.size());
      recorded_.insert(recorded_.end(), block.begin(), block.begin() + static_cast<std::ptrdiff_t>(take));
    } else {
      recorded_done_.store(true);
    }
  }
}

LoopbackResult run_loopback(Engine& engine, const SampleBuffer& input, double silence_threshold) {
  const std::size_t len = engine.config().frame_len;
  const int rate = engine.config().sample_rate;
  RealtimeLoop::Options opt;
  // Enough to cover the pipeline delay, both buffers and some slack.
  opt.record_samples = input.size() + (kPipelineDelayFrames + 2) * len +
                       2 * block_samples(engine.config().max_buffer_ms, rate);
  RealtimeLoop loop(engine, input, opt);
  loop.start();
  loop.wait();
  loop.stop();

  LoopbackResult r;
  r.output = SampleBuffer(loop.recorded(), rate);
  r.latency = engine.latency_report();
  r.counters = engine.counters();

  const auto& x = input.samples();
  const auto first_in = std::find_if(x.begin(), x.end(),
                                     [&](float v) { return std::abs(v) > silence_threshold; });
  const auto& y = loop.recorded();
  const auto first_out = std::find_if(y.begin(), y.end(),
                                      [&](float v) { return std::abs(v) > silence_threshold; });
  if (first_in != x.end() && first_out != y.end()) {
    const double t_in = static_cast<double>(first_in - x.begin()) / rate;
    const double t_out = loop.play_time_s(static_cast<std::size_t>(first_out - y.begin()));
    r.measured_ms = (t_out - t_in) * 1000.0;
    r.latency.measured_end_to_end_ms = r.measured_ms;
  }
  return r;
}

}  // namespace throatline
