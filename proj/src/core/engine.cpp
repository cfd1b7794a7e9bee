#include "throatline/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>

#include "throatline/errors.hpp"

namespace throatline {

void EngineConfig::validate() const {
  if (sample_rate <= 0 || frame_len == 0) throw ParameterError("engine: invalid rate or frame length");
  if (!(input_buffer_ms >= 0.0) || !(output_buffer_ms >= 0.0)) {
    throw ParameterError("engine: buffer sizes must be non-negative");
  }
  if (!(max_buffer_ms >= 0.0) || input_buffer_ms > max_buffer_ms || output_buffer_ms > max_buffer_ms) {
    throw ParameterError("engine: buffer size above max_buffer_ms");
  }
  if (!(crossfade_ms >= 0.0) || crossfade_ms > frame_ms()) {
    throw ParameterError("engine: crossfade must fit in one frame");
  }
  if (ring_frames < kPipelineDelayFrames + 2) throw ParameterError("engine: ring_frames too small");
}

LatencyReport predicted_latency(const EngineConfig& cfg) {
  LatencyReport r;
  r.frame_ms = cfg.frame_ms();
  r.input_buffer_ms = cfg.input_buffer_ms;
  r.output_buffer_ms = cfg.output_buffer_ms;
  r.end_to_end_ms = static_cast<double>(kPipelineDelayFrames) * r.frame_ms + r.input_buffer_ms +
                    r.output_buffer_ms;
  return r;
}

Engine::Engine(EngineConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      crossfade_len_(static_cast<std::size_t>(std::lround(cfg_.crossfade_ms * cfg_.sample_rate / 1000.0))),
      input_(next_pow2(cfg_.ring_frames * cfg_.frame_len)),
      output_(next_pow2(cfg_.ring_frames * cfg_.frame_len)),
      requested_bypass_(cfg_.bypass),
      active_bypass_(cfg_.bypass),
      input_buffer_ms_(cfg_.input_buffer_ms),
      output_buffer_ms_(cfg_.output_buffer_ms),
      in_frame_(cfg_.frame_len),
      old_path_(cfg_.frame_len),
      new_path_(cfg_.frame_len),
      mixed_(cfg_.frame_len) {
  register_enhancer(std::make_unique<PassthroughEnhancer>());
}

Engine::~Engine() = default;

void Engine::register_enhancer(std::unique_ptr<Enhancer> enhancer) {
  if (!enhancer) throw ControlError("null enhancer");
  const std::size_t n = registry_size_.load(std::memory_order_acquire);
  if (find_slot(enhancer->descriptor().id) != kMaxEnhancers) {
    throw ControlError("enhancer '" + enhancer->descriptor().id + "' already registered");
  }
  if (n == kMaxEnhancers) throw ControlError("enhancer registry full");
  registry_[n] = std::move(enhancer);
  registry_size_.store(n + 1, std::memory_order_release);
}

std::size_t Engine::find_slot(const std::string& id) const {
  const std::size_t n = registry_size_.load(std::memory_order_acquire);
  for (std::size_t i = 0; i < n; ++i) {
    if (registry_[i]->descriptor().id == id) return i;
  }
  return kMaxEnhancers;
}

bool Engine::has_enhancer(const std::string& id) const { return find_slot(id) != kMaxEnhancers; }

std::vector<EnhancerDescriptor> Engine::enhancers() const {
  std::vector<EnhancerDescriptor> out;
  const std::size_t n = registry_size_.load(std::memory_order_acquire);
  for (std::size_t i = 0; i < n; ++i) out.push_back(registry_[i]->descriptor());
  return out;
}

void Engine::warm_up() {
  Enhancer& e = *registry_[active_slot_.load()];
  std::fill(in_frame_.begin(), in_frame_.end(), 0.0f);
  try {
    e.process(in_frame_, new_path_);
  } catch (const std::exception&) {
    errors_.fetch_add(1, std::memory_order_relaxed);
  }
  e.reset();
}

void Engine::start() {
  if (started_) return;
  // An explicit set_enhancer() before start() wins over the configured id.
  const std::size_t slot = enhancer_requested_.load() ? requested_slot_.load()
                                                      : find_slot(cfg_.active_enhancer);
  if (slot == kMaxEnhancers) {
    throw ControlError("active enhancer '" + cfg_.active_enhancer + "' is not registered");
  }
  requested_slot_.store(slot);
  active_slot_.store(slot);
  warm_up();
  std::fill(mixed_.begin(), mixed_.end(), 0.0f);
  for (std::size_t f = 0; f < kPipelineDelayFrames; ++f) output_.push(mixed_);
  started_ = true;
}

std::size_t Engine::push_input(std::span<const float> samples) { return input_.push(samples); }

std::size_t Engine::pull_output(std::span<float> out) { return output_.pull(out); }

std::size_t Engine::process_step() {
  std::size_t done = 0;
  const std::size_t len = cfg_.frame_len;
  while (input_.available() >= len) {
    const auto t0 = std::chrono::steady_clock::now();
    input_.read_available(in_frame_);

    const bool bypass_old = active_bypass_.load(std::memory_order_relaxed);
    const std::size_t slot_old = active_slot_.load(std::memory_order_relaxed);
    const bool bypass_new = requested_bypass_.load(std::memory_order_acquire);
    const std::size_t slot_new = requested_slot_.load(std::memory_order_acquire);

    // The active enhancer runs on every frame, bypassed or not, so its state
    // stays continuous and un-bypassing is seamless.
    const auto run = [this](std::size_t slot, std::span<float> out) {
      try {
        registry_[slot]->process(in_frame_, out);
      } catch (const std::exception&) {
        std::fill(out.begin(), out.end(), 0.0f);
        errors_.fetch_add(1, std::memory_order_relaxed);
      }
    };
    run(slot_old, old_path_);
    std::span<const float> out_old = bypass_old ? std::span<const float>(in_frame_) : old_path_;

    std::span<const float> result = out_old;
    if (bypass_new != bypass_old || slot_new != slot_old) {
      if (slot_new != slot_old) {
        registry_[slot_new]->reset();
        run(slot_new, new_path_);
      } else {
        std::copy(old_path_.begin(), old_path_.end(), new_path_.begin());
      }
      std::span<const float> out_new = bypass_new ? std::span<const float>(in_frame_) : new_path_;
      const std::size_t n = std::min(crossfade_len_, len);
      for (std::size_t i = 0; i < n; ++i) {
        const double c = std::cos(std::numbers::pi * static_cast<double>(i) / (2.0 * static_cast<double>(n)));
        const double w = c * c;
        mixed_[i] = static_cast<float>(w * out_old[i] + (1.0 - w) * out_new[i]);
      }
      std::copy(out_new.begin() + static_cast<std::ptrdiff_t>(n), out_new.end(),
                mixed_.begin() + static_cast<std::ptrdiff_t>(n));
      result = mixed_;
      active_bypass_.store(bypass_new, std::memory_order_release);
      active_slot_.store(slot_new, std::memory_order_release);
      crossfades_.fetch_add(1, std::memory_order_relaxed);
    }

    output_.push(result);

    if (monitor_samples_ != nullptr && monitor_tags_ != nullptr) {
      if (monitor_samples_->free_space() >= len && monitor_tags_->free_space() >= 1) {
        monitor_samples_->push(result);
        const auto tag = static_cast<std::uint8_t>(
            active_bypass_.load(std::memory_order_relaxed) ? MonitorSource::kRaw
                                                           : MonitorSource::kEnhanced);
        monitor_tags_->push(std::span<const std::uint8_t>(&tag, 1));
      } else {
        monitor_drops_.fetch_add(1, std::memory_order_relaxed);
      }
    }

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    last_inference_ms_.store(ms, std::memory_order_relaxed);
    if (ms >= cfg_.frame_ms()) rt_violations_.fetch_add(1, std::memory_order_relaxed);
    frames_processed_.fetch_add(1, std::memory_order_release);
    ++done;
  }
  return done;
}

void Engine::set_bypass(bool on) { requested_bypass_.store(on, std::memory_order_release); }

void Engine::set_enhancer(const std::string& id) {
  const std::size_t slot = find_slot(id);
  if (slot == kMaxEnhancers) throw ControlError("unknown enhancer '" + id + "'");
  requested_slot_.store(slot, std::memory_order_release);
  enhancer_requested_.store(true, std::memory_order_release);
}

void Engine::set_buffers(double input_ms, double output_ms) {
  if (!std::isfinite(input_ms) || !std::isfinite(output_ms)) {
    throw ControlError("buffer sizes must be finite");
  }
  input_buffer_ms_.store(std::clamp(input_ms, 0.0, cfg_.max_buffer_ms));
  output_buffer_ms_.store(std::clamp(output_ms, 0.0, cfg_.max_buffer_ms));
}

bool Engine::bypass_requested() const { return requested_bypass_.load(); }
bool Engine::bypass_active() const { return active_bypass_.load(); }
std::string Engine::active_enhancer() const { return registry_[active_slot_.load()]->descriptor().id; }
std::string Engine::requested_enhancer() const {
  return registry_[requested_slot_.load()]->descriptor().id;
}

LatencyReport Engine::latency_report() const {
  EngineConfig c = cfg_;
  c.input_buffer_ms = input_buffer_ms_.load();
  c.output_buffer_ms = output_buffer_ms_.load();
  LatencyReport r = predicted_latency(c);
  r.inference_ms = last_inference_ms_.load();
  return r;
}

EngineCounters Engine::counters() const {
  EngineCounters c;
  c.frames_processed = frames_processed_.load();
  c.underruns = output_.underruns();
  c.overruns = input_.overruns();
  c.errors = errors_.load();
  c.crossfades = crossfades_.load();
  c.rt_violations = rt_violations_.load();
  c.monitor_drops = monitor_drops_.load();
  return c;
}

void Engine::set_monitor(SpscRing<float>* samples, SpscRing<std::uint8_t>* tags) {
  monitor_samples_ = samples;
  monitor_tags_ = tags;
}

SampleBuffer enhance_offline(Enhancer& enhancer, const SampleBuffer& input, std::size_t frame_len) {
  enhancer.reset();
  const FrameSplit split = frame_split(input, frame_len);
  std::vector<float> out(split.frames.size() * frame_len);
  for (std::size_t f = 0; f < split.frames.size(); ++f) {
    enhancer.process(split.frames[f].samples,
                     std::span<float>(out.data() + f * frame_len, frame_len));
  }
  return SampleBuffer(std::move(out), input.sample_rate());
}

SampleBuffer stream_simulated(Engine& engine, const SampleBuffer& input, std::size_t block,
                              const std::vector<ControlEvent>& events) {
  if (block == 0) throw ParameterError("block size must be positive");
  engine.start();
  std::vector<const ControlEvent*> pending;
  for (const auto& e : events) pending.push_back(&e);
  std::stable_sort(pending.begin(), pending.end(),
                   [](const ControlEvent* a, const ControlEvent* b) { return a->at_sample < b->at_sample; });
  std::size_t next_event = 0;
  const auto& x = input.samples();
  std::vector<float> out(x.size());
  for (std::size_t pos = 0; pos < x.size(); pos += block) {
    const std::size_t n = std::min(block, x.size() - pos);
    while (next_event < pending.size() && pending[next_event]->at_sample < pos + n) {
      pending[next_event]->apply(engine);
      ++next_event;
    }
    engine.push_input(std::span<const float>(x.data() + pos, n));
    engine.process_step();
    engine.pull_output(std::span<float>(out.data() + pos, n));
  }
  return SampleBuffer(std::move(out), input.sample_rate());
}

SampleBuffer enhance_streaming(Engine& engine, const SampleBuffer& input) {
  const std::size_t len = engine.config().frame_len;
  const std::size_t n = input.size();
  const std::size_t padded = (n + len - 1) / len * len;
  std::vector<float> x(padded + kPipelineDelayFrames * len, 0.0f);
  std::copy(input.samples().begin(), input.samples().end(), x.begin());
  const SampleBuffer streamed =
      stream_simulated(engine, SampleBuffer(std::move(x), input.sample_rate()), len);
  const auto first = streamed.samples().begin() + static_cast<std::ptrdiff_t>(kPipelineDelayFrames * len);
  return SampleBuffer({first, first + static_cast<std::ptrdiff_t>(n)}, input.sample_rate());
}

}  // namespace throatline
