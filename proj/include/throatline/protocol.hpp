#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "throatline/engine.hpp"

namespace throatline::protocol {

inline constexpr double kMaxBufferMs = 128.0;

// --- control (client -> service, JSON text frames) ---------------------------

enum class ControlType { kSetBypass, kSetEnhancer, kSetBufferMs, kGetStatus };

struct BufferMs {
  double input_ms = 0.0;
  double output_ms = 0.0;
  bool operator==(const BufferMs&) const = default;
};

struct ControlMessage {
  ControlType type = ControlType::kGetStatus;
  std::variant<std::monostate, bool, std::string, BufferMs> value;
  bool operator==(const ControlMessage&) const = default;

  static ControlMessage set_bypass(bool on) { return {ControlType::kSetBypass, on}; }
  static ControlMessage set_enhancer(std::string id) {
    return {ControlType::kSetEnhancer, std::move(id)};
  }
  static ControlMessage set_buffer_ms(double in, double out) {
    return {ControlType::kSetBufferMs, BufferMs{in, out}};
  }
  static ControlMessage get_status() { return {ControlType::kGetStatus, {}}; }
};

// {"type":"set_bypass","value":true}
// {"type":"set_enhancer","value":"equalizer"}
// {"type":"set_buffer_ms","value":{"input_ms":32,"output_ms":32}}
// {"type":"get_status"}
std::string to_json(const ControlMessage& msg);
// Throws FormatError on malformed JSON, unknown types or bad values. Buffer
// values are clamped to [0, 128].
ControlMessage parse_control(std::string_view text);

// --- telemetry (service -> client, JSON text frames) -------------------------

enum class TelemetryType { kLatency, kStatus, kError };

struct StatusPayload {
  bool bypass = false;
  std::string enhancer;
  std::vector<std::string> enhancers;
  double input_ms = 0.0;
  double output_ms = 0.0;
  std::uint64_t frames_processed = 0;
  std::uint64_t underruns = 0;
  std::uint64_t overruns = 0;
  std::uint64_t errors = 0;
  std::uint64_t rt_violations = 0;
  std::uint64_t dropped_columns = 0;
  bool controller = false;
  bool operator==(const StatusPayload&) const = default;
};

struct LatencyPayload {
  double frame_ms = 0.0;
  double inference_ms = 0.0;
  double input_buffer_ms = 0.0;
  double output_buffer_ms = 0.0;
  double end_to_end_ms = 0.0;
  std::optional<double> measured_end_to_end_ms;
  bool operator==(const LatencyPayload&) const = default;

  static LatencyPayload from(const LatencyReport& r);
};

struct ErrorPayload {
  std::string message;
  bool operator==(const ErrorPayload&) const = default;
};

struct TelemetryMessage {
  TelemetryType type = TelemetryType::kStatus;
  std::variant<LatencyPayload, StatusPayload, ErrorPayload> payload;
  bool operator==(const TelemetryMessage&) const = default;

  static TelemetryMessage latency(const LatencyReport& r) {
    return {TelemetryType::kLatency, LatencyPayload::from(r)};
  }
  static TelemetryMessage status(StatusPayload s) {
    return {TelemetryType::kStatus, std::move(s)};
  }
  static TelemetryMessage error(std::string message) {
    return {TelemetryType::kError, ErrorPayload{std::move(message)}};
  }
};

std::string to_json(const TelemetryMessage& msg);
TelemetryMessage parse_telemetry(std::string_view text);

// --- spectrogram columns (service -> client, binary frames) ------------------
//
// offset size
//      0    4  magic "SPC1"
//      4    4  column index, u32 LE
//      8    1  source (0 raw, 1 enhanced)
//      9    2  n_bins, u16 LE
//     11  4*n  log-dB values, f32 LE, clamped to [-80, 0]

inline constexpr std::size_t kColumnHeaderBytes = 11;

struct SpectrogramColumn {
  std::uint32_t column_index = 0;
  MonitorSource source = MonitorSource::kRaw;
  std::vector<float> values;
  bool operator==(const SpectrogramColumn&) const = default;
};

std::vector<std::uint8_t> encode_column(const SpectrogramColumn& column);
// Throws FormatError unless the frame is exactly 11 + 4*n_bins bytes with the
// right magic, a known source and finite in-range values.
SpectrogramColumn decode_column(std::span<const std::uint8_t> bytes);
// Non-throwing variant for hot paths and fuzzing.
std::optional<SpectrogramColumn> try_decode_column(
    std::span<const std::uint8_t> bytes);

}  // namespace throatline::protocol
