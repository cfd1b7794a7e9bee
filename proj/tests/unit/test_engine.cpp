#include <doctest.h>

#include <thread>

#include "support.hpp"
#include "throatline/dsp.hpp"
#include "throatline/engine.hpp"
#include "throatline/errors.hpp"
#include "throatline/throatsim.hpp"

using namespace throatline;

namespace {

class ThrowingEnhancer final : public Enhancer {
 public:
  const EnhancerDescriptor& descriptor() const override { return desc_; }
  void process(std::span<const float> in, std::span<float> out) override {
    if (++calls_ % 2 == 0) throw std::runtime_error("boom");
    std::copy(in.begin(), in.end(), out.begin());
  }

 private:
  EnhancerDescriptor desc_{"flaky", 0, "flaky"};
  int calls_ = 0;
};

class SlowEnhancer final : public Enhancer {
 public:
  const EnhancerDescriptor& descriptor() const override { return desc_; }
  void process(std::span<const float> in, std::span<float> out) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    std::copy(in.begin(), in.end(), out.begin());
  }

 private:
  EnhancerDescriptor desc_{"slow", 0, "slow"};
};

class GainEnhancer final : public Enhancer {
 public:
  explicit GainEnhancer(float g) : g_(g) {}
  const EnhancerDescriptor& descriptor() const override { return desc_; }
  void process(std::span<const float> in, std::span<float> out) override {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = g_ * in[i];
  }

 private:
  EnhancerDescriptor desc_{"gain", 0, "gain"};
  float g_;
};

EngineConfig small_engine() {
  EngineConfig c;
  c.frame_len = 480;
  c.crossfade_ms = 2.5;
  return c;
}

double band_power(std::span<const float> x, double lo_hz) {
  const auto spec = dsp::power_spectrogram(dsp::stft(x, 1024, 256));
  double acc = 0;
  for (const auto& col : spec.columns) {
    for (std::size_t k = 0; k < col.size(); ++k) {
      if (static_cast<double>(k) * 24000.0 / 1024.0 >= lo_hz) acc += col[k];
    }
  }
  return acc;
}

}  // namespace

TEST_SUITE("engine") {

TEST_CASE("predicted latency is the linear formula") {
  EngineConfig c;
  CHECK(predicted_latency(c).end_to_end_ms == 224.0);
  c.input_buffer_ms = c.output_buffer_ms = 0;
  CHECK(predicted_latency(c).end_to_end_ms == 160.0);
  c.frame_len = 960;
  c.input_buffer_ms = c.output_buffer_ms = 10;
  CHECK(predicted_latency(c).end_to_end_ms == 100.0);
  CHECK(predicted_latency(c).frame_ms == 40.0);

  Engine e{EngineConfig{}};
  CHECK(e.latency_report().end_to_end_ms == 224.0);
  e.set_buffers(16, 8);
  const auto r = e.latency_report();
  CHECK(r.end_to_end_ms == 2 * r.frame_ms + 16 + 8);
  e.set_buffers(1000, -5);
  CHECK(e.latency_report().input_buffer_ms == 32.0);
  CHECK(e.latency_report().output_buffer_ms == 0.0);
  CHECK_THROWS_AS(e.set_buffers(NAN, 1), ControlError);
}

TEST_CASE("config validation") {
  EngineConfig c;
  c.input_buffer_ms = -1;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = EngineConfig{};
  c.crossfade_ms = 100;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = EngineConfig{};
  c.frame_len = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = EngineConfig{};
  c.active_enhancer = "missing";
  Engine e(c);
  CHECK_THROWS_AS(e.start(), ControlError);
}

TEST_CASE("push accounting and empty processing") {
  Engine e{EngineConfig{}};
  e.start();
  CHECK(e.push_input(std::vector<float>(1920, 0.1f)) == 1920);
  const std::size_t cap = next_pow2(8 * 1920);
  CHECK(e.push_input(std::vector<float>(cap, 0.1f)) == cap - 1920);
  CHECK(e.counters().overruns == 1920);

  Engine idle{EngineConfig{}};
  idle.start();
  CHECK(idle.process_step() == 0);
  CHECK(idle.output_available() == 2 * 1920);
  CHECK(idle.counters().frames_processed == 0);
}

TEST_CASE("bypass is the input delayed by exactly two frames") {
  EngineConfig c = small_engine();
  c.bypass = true;
  c.active_enhancer = "equalizer";
  const auto x = test_support::white_noise(480 * 20, 0.2, 1);
  Engine f(c);
  f.register_enhancer(std::make_unique<EqualizerEnhancer>());
  const SampleBuffer y = stream_simulated(f, SampleBuffer(x, 24000), 480);
  REQUIRE(y.size() == x.size());
  for (std::size_t i = 0; i < 960; ++i) REQUIRE(y.samples()[i] == 0.0f);
  for (std::size_t i = 960; i < x.size(); ++i) REQUIRE(y.samples()[i] == x[i - 960]);
  CHECK(f.counters().crossfades == 0);
}

TEST_CASE("pulled output follows processed frames in order, then underruns") {
  Engine e(small_engine());
  e.start();
  std::vector<float> primed(960);
  CHECK(e.pull_output(primed) == 960);
  const auto x = test_support::white_noise(480 * 3, 0.2, 2);
  e.push_input(x);
  CHECK(e.process_step() == 3);
  std::vector<float> out(480 * 3);
  CHECK(e.pull_output(out) == out.size());
  CHECK(out == x);
  std::vector<float> more(10, 1.0f);
  CHECK(e.pull_output(more) == 0);
  for (float v : more) CHECK(v == 0.0f);
  CHECK(e.counters().underruns == 10);
}

TEST_CASE("equalizer lifts the band above 2 kHz") {
  EqualizerEnhancer eq;
  const SampleBuffer noise(test_support::white_noise(1920 * 25, 0.05, 3), 24000);
  const SampleBuffer y = enhance_offline(eq, noise);
  const double gain_hi = band_power(y.view(), 3000) / band_power(noise.view(), 3000);
  const double gain_lo = (band_power(y.view(), 0) - band_power(y.view(), 1000)) /
                         (band_power(noise.view(), 0) - band_power(noise.view(), 1000));
  CHECK(10 * std::log10(gain_hi) > 6.0);
  CHECK(gain_hi > 4.0 * gain_lo);
}

TEST_CASE("enhancer failures become silence and are counted") {
  EngineConfig c = small_engine();
  c.active_enhancer = "flaky";
  Engine e(c);
  e.register_enhancer(std::make_unique<ThrowingEnhancer>());
  const auto x = test_support::white_noise(480 * 6, 0.2, 4);
  const SampleBuffer y = stream_simulated(e, SampleBuffer(x, 24000), 480);
  // Warm-up made call 1; stream calls 2..7 alternate failure/success.
  const auto counters = e.counters();
  CHECK(counters.errors == 3);
  CHECK(counters.frames_processed == 6);
  for (std::size_t f = 0; f + 2 < 6; ++f) {
    const bool failed = (f + 2) % 2 == 0;
    for (std::size_t i = 0; i < 480; ++i) {
      const float got = y.samples()[(f + 2) * 480 + i];
      REQUIRE(got == (failed ? 0.0f : x[f * 480 + i]));
    }
  }
}

TEST_CASE("slow enhancers are reported as real-time violations") {
  EngineConfig c = small_engine();
  c.active_enhancer = "slow";
  Engine e(c);
  e.register_enhancer(std::make_unique<SlowEnhancer>());
  stream_simulated(e, SampleBuffer(std::vector<float>(480 * 2, 0.0f), 24000), 480);
  CHECK(e.counters().rt_violations == 2);
  CHECK(e.latency_report().inference_ms >= 10.0);
}

TEST_CASE("control semantics") {
  Engine e(small_engine());
  e.register_enhancer(std::make_unique<EqualizerEnhancer>());
  CHECK_THROWS_AS(e.register_enhancer(std::make_unique<EqualizerEnhancer>()), ControlError);
  e.start();
  const auto x = test_support::white_noise(480, 0.2, 5);

  CHECK_THROWS_AS(e.set_enhancer("nope"), ControlError);
  CHECK(e.requested_enhancer() == "passthrough");

  e.set_enhancer("passthrough");
  e.push_input(x);
  e.process_step();
  CHECK(e.counters().crossfades == 0);

  e.set_bypass(true);
  e.set_bypass(false);
  e.push_input(x);
  e.process_step();
  CHECK(e.counters().crossfades == 0);
  CHECK(!e.bypass_active());

  e.set_enhancer("equalizer");
  e.push_input(x);
  e.process_step();
  CHECK(e.counters().crossfades == 1);
  CHECK(e.active_enhancer() == "equalizer");
  CHECK(e.counters().underruns == 0);
}

TEST_CASE("toggling on silence stays silent") {
  EngineConfig c = small_engine();
  c.active_enhancer = "equalizer";
  Engine e(c);
  e.register_enhancer(std::make_unique<EqualizerEnhancer>());
  std::vector<ControlEvent> events;
  for (std::size_t k = 1; k < 10; ++k) {
    events.push_back({k * 480 + 100, [k](Engine& en) { en.set_bypass(k % 2 == 1); }});
  }
  const SampleBuffer y = stream_simulated(e, SampleBuffer(std::vector<float>(480 * 12, 0.0f), 24000), 240, events);
  for (float v : y.samples()) REQUIRE(v == 0.0f);
  CHECK(e.counters().crossfades == 9);
}

TEST_CASE("crossfade between same-sign paths never overshoots") {
  EngineConfig c = small_engine();
  c.active_enhancer = "gain";
  Engine e(c);
  e.register_enhancer(std::make_unique<GainEnhancer>(0.5f));
  std::vector<float> x(480 * 8);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.2f + 0.5f * static_cast<float>((i * 7919) % 1000) / 1000.0f;
  const SampleBuffer y =
      stream_simulated(e, SampleBuffer(x, 24000), 480, {{480 * 3, [](Engine& en) { en.set_bypass(true); }}});
  for (std::size_t i = 960; i < y.size(); ++i) {
    const float in = x[i - 960];
    REQUIRE(std::abs(y.samples()[i]) <= std::max(std::abs(in), std::abs(0.5f * in)));
  }
}

TEST_CASE("switching to a pre-registered codec does not underrun") {
  CodecConfig cc;
  auto base = std::make_shared<const CodecModel>(CodecModel::random_init(cc));
  auto enh = std::make_shared<const EnhancerModel>(EnhancerModel::from_base(base));
  Engine e{EngineConfig{}};
  e.register_enhancer(std::make_unique<CodecEnhancer>("codec:rand", enh));
  const SampleBuffer x = synthetic_utterance(2.0, 2);
  const SampleBuffer y =
      stream_simulated(e, x, 480, {{24000, [](Engine& en) { en.set_enhancer("codec:rand"); }}});
  CHECK(y.size() == x.size());
  CHECK(e.counters().underruns == 0);
  CHECK(e.active_enhancer() == "codec:rand");
}

TEST_CASE("passthrough inference is far below a millisecond") {
  Engine e{EngineConfig{}};
  stream_simulated(e, synthetic_utterance(2.0, 3), 1920);
  CHECK(e.latency_report().inference_ms < 1.0);
}

TEST_CASE("enhance_streaming keeps the input length and matches offline") {
  Engine e{EngineConfig{}};
  e.register_enhancer(std::make_unique<EqualizerEnhancer>());
  e.set_enhancer("equalizer");
  const SampleBuffer x = synthetic_utterance(1.3, 4);
  const SampleBuffer y = enhance_streaming(e, x);
  REQUIRE(y.size() == x.size());
  EqualizerEnhancer eq;
  const SampleBuffer ref = enhance_offline(eq, x);
  for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(y.samples()[i] == ref.samples()[i]);
}

TEST_CASE("make_enhancer ids") {
  CHECK(make_enhancer("passthrough")->descriptor().id == "passthrough");
  CHECK(make_enhancer("equalizer")->descriptor().id == "equalizer");
  CHECK_THROWS_AS(make_enhancer("bogus"), ControlError);
  CHECK_THROWS(make_enhancer("codec:/definitely/not/here.bin"));
}

}  // TEST_SUITE
