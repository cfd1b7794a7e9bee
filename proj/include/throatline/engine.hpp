#pragma once

#include <array>
#include <filesystem>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "throatline/audio.hpp"
#include "throatline/codec.hpp"
#include "throatline/dsp.hpp"
#include "throatline/ring_buffer.hpp"

namespace throatline {

struct EngineConfig {
  int sample_rate = kDefaultSampleRate;
  std::size_t frame_len = kDefaultFrameLen;
  double input_buffer_ms = 32.0;
  double output_buffer_ms = 32.0;
  double max_buffer_ms = 32.0;
  std::string active_enhancer = "passthrough";
  bool bypass = false;
  double crossfade_ms = 10.0;
  std::size_t ring_frames = 8;  // ring capacity, rounded up to a power of two

  double frame_ms() const {
    return static_cast<double>(frame_len) * 1000.0 / sample_rate;
  }
  void validate() const;
};

// Frames of pure buffering between capture and playback: one to fill the
// input frame, one for the process/playback hand-off.
inline constexpr std::size_t kPipelineDelayFrames = 2;

struct LatencyReport {
  double frame_ms = 0.0;
  double inference_ms = 0.0;
  double input_buffer_ms = 0.0;
  double output_buffer_ms = 0.0;
  double end_to_end_ms = 0.0;  // 2*frame_ms + input + output, exactly
  std::optional<double> measured_end_to_end_ms;
};

LatencyReport predicted_latency(const EngineConfig& cfg);

// --- enhancers --------------------------------------------------------------

struct EnhancerDescriptor {
  std::string id;
  std::size_t algorithmic_delay_frames = 0;
  std::string display_name;
};

// One frame in, one frame out. Implementations may keep state across frames
// (reset() clears it). Called only from the worker context.
class Enhancer {
 public:
  virtual ~Enhancer() = default;
  virtual const EnhancerDescriptor& descriptor() const = 0;
  virtual void process(std::span<const float> in, std::span<float> out) = 0;
  virtual void reset() {}
};

class PassthroughEnhancer final : public Enhancer {
 public:
  PassthroughEnhancer();
  const EnhancerDescriptor& descriptor() const override { return desc_; }
  void process(std::span<const float> in, std::span<float> out) override;

 private:
  EnhancerDescriptor desc_;
};

// Non-learned baseline: +12 dB high shelf above 2 kHz followed by
// tanh(drive*x)/tanh(drive) waveshaping to regenerate upper harmonics.
class EqualizerEnhancer final : public Enhancer {
 public:
  struct Params {
    double shelf_hz = 2000.0;
    double shelf_gain_db = 12.0;
    double drive = 2.0;
  };
  explicit EqualizerEnhancer(int sample_rate = kDefaultSampleRate);
  EqualizerEnhancer(int sample_rate, Params params);
  const EnhancerDescriptor& descriptor() const override { return desc_; }
  void process(std::span<const float> in, std::span<float> out) override;
  void reset() override { shelf_.reset(); }

 private:
  EnhancerDescriptor desc_;
  Params params_;
  dsp::Biquad shelf_;
  double norm_;
};

class CodecEnhancer final : public Enhancer {
 public:
  CodecEnhancer(std::string id, std::shared_ptr<const EnhancerModel> model);
  const EnhancerDescriptor& descriptor() const override { return desc_; }
  void process(std::span<const float> in, std::span<float> out) override;
  const EnhancerModel& model() const { return *model_; }

 private:
  EnhancerDescriptor desc_;
  std::shared_ptr<const EnhancerModel> model_;
};

// Builds "passthrough", "equalizer" or "codec:<path>". For codec ids the
// path may name an enhancer file (its base is found next to it by hash) or a
// plain codec file (used with an untuned encoder copy). Loads from disk, so
// call it off the audio path.
std::unique_ptr<Enhancer> make_enhancer(const std::string& id,
                                        int sample_rate = kDefaultSampleRate);

// Locates the codec file whose hash matches an enhancer file: candidates first,
// then *.bin files in the enhancer's directory.
std::shared_ptr<const EnhancerModel> load_enhancer_resolving_base(
    const std::filesystem::path& enhancer_path,
    const std::vector<std::filesystem::path>& candidates = {});

// --- engine -----------------------------------------------------------------

struct EngineCounters {
  std::uint64_t frames_processed = 0;
  std::uint64_t underruns = 0;  // output ring, playback side
  std::uint64_t overruns = 0;   // input ring, capture side
  std::uint64_t errors = 0;     // enhancer failures replaced by silence
  std::uint64_t crossfades = 0;
  std::uint64_t rt_violations = 0;  // inference_ms >= frame_ms
  std::uint64_t monitor_drops = 0;
};

// Source tag carried with monitored frames.
enum class MonitorSource : std::uint8_t { kRaw = 0, kEnhanced = 1 };

// Frame-aligned streaming pipeline.
//
// Context roles: push_input() from the capture context, process_step() from
// the worker, pull_output() from playback. Control calls (set_bypass,
// set_enhancer, set_buffers) may come from any other context; they store
// single-writer atomics that the worker applies at the next frame boundary
// with a short crossfade. Register enhancers (which may load models) before
// arming them; registration never touches the audio path.
class Engine {
 public:
  static constexpr std::size_t kMaxEnhancers = 16;

  explicit Engine(EngineConfig cfg);
  ~Engine();
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const EngineConfig& config() const { return cfg_; }

  // Control/setup context. Throws ControlError when the registry is full or
  // the id already exists.
  void register_enhancer(std::unique_ptr<Enhancer> enhancer);
  bool has_enhancer(const std::string& id) const;
  std::vector<EnhancerDescriptor> enhancers() const;

  // Setup context, before streaming: runs the active enhancer once on a
  // silent frame (then resets it) and primes the output ring with the
  // pipeline delay. Idempotent per stream.
  void start();
  void warm_up();
  bool started() const { return started_; }

  // Capture context. Wait-free.
  std::size_t push_input(std::span<const float> samples);
  // Worker context. Returns frames processed.
  std::size_t process_step();
  // Playback context. Wait-free; zero-fills the shortfall.
  std::size_t pull_output(std::span<float> out);

  // Control context.
  void set_bypass(bool on);
  void set_enhancer(const std::string& id);
  void set_buffers(double input_ms, double output_ms);

  bool bypass_requested() const;
  bool bypass_active() const;
  std::string active_enhancer() const;
  std::string requested_enhancer() const;

  LatencyReport latency_report() const;
  EngineCounters counters() const;
  std::size_t input_available() const { return input_.available(); }
  std::size_t output_available() const { return output_.available(); }

  // Optional tap for the spectrogram worker: each processed frame of the
  // displayed source (raw while bypassed, enhanced otherwise) is offered to
  // `samples` and its tag to `tags`; full taps drop the frame. Set before
  // streaming.
  void set_monitor(SpscRing<float>* samples, SpscRing<std::uint8_t>* tags);

 private:
  std::size_t find_slot(const std::string& id) const;

  EngineConfig cfg_;
  std::size_t crossfade_len_;
  RingBuffer input_;
  RingBuffer output_;
  std::array<std::unique_ptr<Enhancer>, kMaxEnhancers> registry_;
  std::atomic<std::size_t> registry_size_{0};

  std::atomic<bool> requested_bypass_;
  std::atomic<std::size_t> requested_slot_{0};
  std::atomic<bool> active_bypass_;
  std::atomic<std::size_t> active_slot_{0};
  std::atomic<bool> enhancer_requested_{false};

  std::atomic<double> input_buffer_ms_;
  std::atomic<double> output_buffer_ms_;
  std::atomic<double> last_inference_ms_{0.0};

  std::atomic<std::uint64_t> frames_processed_{0};
  std::atomic<std::uint64_t> errors_{0};
  std::atomic<std::uint64_t> crossfades_{0};
  std::atomic<std::uint64_t> rt_violations_{0};
  std::atomic<std::uint64_t> monitor_drops_{0};

  SpscRing<float>* monitor_samples_ = nullptr;
  SpscRing<std::uint8_t>* monitor_tags_ = nullptr;

  // Worker-owned scratch, sized once.
  std::vector<float> in_frame_;
  std::vector<float> old_path_;
  std::vector<float> new_path_;
  std::vector<float> mixed_;
  bool started_ = false;
};

// Batch reference: frame_split + per-frame enhancement + concatenation (tail
// dropped). The enhancer is reset first.
SampleBuffer enhance_offline(Enhancer& enhancer, const SampleBuffer& input,
                             std::size_t frame_len = kDefaultFrameLen);

// Event applied before the block that starts at `at_sample`.
struct ControlEvent {
  std::size_t at_sample = 0;
  std::function<void(Engine&)> apply;
};

// Drives an engine on a simulated clock: per block, push `block` input
// samples, run process_step(), pull `block` output samples. Returns
// everything pulled (pipeline delay included). Calls start() if needed.
SampleBuffer stream_simulated(Engine& engine, const SampleBuffer& input,
                              std::size_t block,
                              const std::vector<ControlEvent>& events = {});

// Offline file enhancement through the streaming engine: the input is
// zero-padded to whole frames, streamed, and the pipeline delay and padding
// are trimmed so the result has the input's length.
SampleBuffer enhance_streaming(Engine& engine, const SampleBuffer& input);

// --- loopback ---------------------------------------------------------------

// Device-free real-time source/sink: a capture thread feeds `source` to the
// engine at the sample rate in input-buffer-sized blocks, a worker thread
// runs process_step(), and a playback thread pulls output-buffer-sized
// blocks. Block sizes follow set_buffers() at block boundaries.
class RealtimeLoop {
 public:
  struct Options {
    bool repeat = false;           // loop the source until stop()
    std::size_t record_samples = 0;  // capacity for recorded output
  };

  RealtimeLoop(Engine& engine, SampleBuffer source, Options options);
  ~RealtimeLoop();
  RealtimeLoop(const RealtimeLoop&) = delete;
  RealtimeLoop& operator=(const RealtimeLoop&) = delete;

  void start();
  void stop();
  // Blocks until a non-repeating source has been fully played.
  void wait();
  bool running() const { return running_.load(); }

  // Recorded output and the wall-clock play time of each recorded sample's
  // block start, in seconds since capture start.
  const std::vector<float>& recorded() const { return recorded_; }
  double play_time_s(std::size_t sample_index) const;
  double playback_start_s() const { return playback_start_s_; }

 private:
  void capture_loop();
  void worker_loop();
  void playback_loop();

  Engine& engine_;
  SampleBuffer source_;
  Options options_;
  std::vector<float> recorded_;
  std::vector<double> block_pull_s_;
  std::vector<std::size_t> block_first_sample_;
  std::atomic<bool> running_{false};
  std::atomic<bool> capture_done_{false};
  std::atomic<bool> first_block_delivered_{false};
  std::atomic<bool> recorded_done_{false};
  std::atomic<std::int64_t> capture_start_ns_{0};
  double playback_start_s_ = 0.0;
  std::vector<std::thread> threads_;
};

struct LoopbackResult {
  SampleBuffer output;  // everything the playback side pulled
  LatencyReport latency;
  EngineCounters counters;
  std::optional<double> measured_ms;
};

// Streams `input` through `engine` in real time with three threads
// (capture, worker, playback). Capture delivers blocks of the input buffer
// size; playback starts when the first block arrives and plays each pulled
// block one output-buffer later. The measured latency is the play time of the
// first non-silent output sample minus the capture time of the first
// non-silent input sample.
LoopbackResult run_loopback(Engine& engine, const SampleBuffer& input,
                            double silence_threshold = 1e-4);

}  // namespace throatline
