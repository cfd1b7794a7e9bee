#include "throatline/protocol.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>

#include "throatline/errors.hpp"

namespace throatline::protocol {
namespace {

using nlohmann::json;

constexpr std::uint8_t kMagic[4] = {'S', 'P', 'C', '1'};

json parse_object(std::string_view text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw FormatError("malformed JSON");
  if (!j.is_object()) throw FormatError("message must be a JSON object");
  if (!j.contains("type") || !j["type"].is_string()) throw FormatError("message lacks a string 'type'");
  return j;
}

double finite_number(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw FormatError(std::string("'") + key + "' must be a number");
  }
  const double v = j[key].get<double>();
  if (!std::isfinite(v)) throw FormatError(std::string("'") + key + "' must be finite");
  return v;
}

std::uint64_t count(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_unsigned()) {
    throw FormatError(std::string("'") + key + "' must be a non-negative integer");
  }
  return j[key].get<std::uint64_t>();
}

bool flag(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_boolean()) {
    throw FormatError(std::string("'") + key + "' must be a boolean");
  }
  return j[key].get<bool>();
}

std::string text_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw FormatError(std::string("'") + key + "' must be a string");
  }
  return j[key].get<std::string>();
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::string to_json(const ControlMessage& msg) {
  json j;
  switch (msg.type) {
    case ControlType::kSetBypass:
      j = {{"type", "set_bypass"}, {"value", std::get<bool>(msg.value)}};
      break;
    case ControlType::kSetEnhancer:
      j = {{"type", "set_enhancer"}, {"value", std::get<std::string>(msg.value)}};
      break;
    case ControlType::kSetBufferMs: {
      const auto& b = std::get<BufferMs>(msg.value);
      j = {{"type", "set_buffer_ms"}, {"value", {{"input_ms", b.input_ms}, {"output_ms", b.output_ms}}}};
      break;
    }
    case ControlType::kGetStatus:
      j = {{"type", "get_status"}};
      break;
  }
  return j.dump();
}

ControlMessage parse_control(std::string_view text) {
  const json j = parse_object(text);
  const std::string type = j["type"].get<std::string>();
  if (type == "get_status") return ControlMessage::get_status();
  if (!j.contains("value")) throw FormatError("'" + type + "' needs a value");
  if (type == "set_bypass") {
    if (!j["value"].is_boolean()) throw FormatError("set_bypass value must be a boolean");
    return ControlMessage::set_bypass(j["value"].get<bool>());
  }
  if (type == "set_enhancer") {
    if (!j["value"].is_string() || j["value"].get<std::string>().empty()) {
      throw FormatError("set_enhancer value must be a non-empty string");
    }
    return ControlMessage::set_enhancer(j["value"].get<std::string>());
  }
  if (type == "set_buffer_ms") {
    const json& v = j["value"];
    if (!v.is_object()) throw FormatError("set_buffer_ms value must be an object");
    const auto clamp = [](double ms) { return std::clamp(ms, 0.0, kMaxBufferMs); };
    return ControlMessage::set_buffer_ms(clamp(finite_number(v, "input_ms")),
                                         clamp(finite_number(v, "output_ms")));
  }
  throw FormatError("unknown control type '" + type + "'");
}

LatencyPayload LatencyPayload::from(const LatencyReport& r) {
  return {r.frame_ms, r.inference_ms, r.input_buffer_ms, r.output_buffer_ms, r.end_to_end_ms,
          r.measured_end_to_end_ms};
}

std::string to_json(const TelemetryMessage& msg) {
  json p;
  std::string type;
  switch (msg.type) {
    case TelemetryType::kLatency: {
      type = "latency";
      const auto& l = std::get<LatencyPayload>(msg.payload);
      p = {{"frame_ms", l.frame_ms},
           {"inference_ms", l.inference_ms},
           {"input_buffer_ms", l.input_buffer_ms},
           {"output_buffer_ms", l.output_buffer_ms},
           {"end_to_end_ms", l.end_to_end_ms}};
      if (l.measured_end_to_end_ms) p["measured_end_to_end_ms"] = *l.measured_end_to_end_ms;
      break;
    }
    case TelemetryType::kStatus: {
      type = "status";
      const auto& s = std::get<StatusPayload>(msg.payload);
      p = {{"bypass", s.bypass},
           {"enhancer", s.enhancer},
           {"enhancers", s.enhancers},
           {"input_ms", s.input_ms},
           {"output_ms", s.output_ms},
           {"frames_processed", s.frames_processed},
           {"underruns", s.underruns},
           {"overruns", s.overruns},
           {"errors", s.errors},
           {"rt_violations", s.rt_violations},
           {"dropped_columns", s.dropped_columns},
           {"controller", s.controller}};
      break;
    }
    case TelemetryType::kError:
      type = "error";
      p = {{"message", std::get<ErrorPayload>(msg.payload).message}};
      break;
  }
  return json{{"type", type}, {"payload", p}}.dump();
}

TelemetryMessage parse_telemetry(std::string_view text) {
  const json j = parse_object(text);
  const std::string type = j["type"].get<std::string>();
  if (!j.contains("payload") || !j["payload"].is_object()) throw FormatError("telemetry needs an object payload");
  const json& p = j["payload"];
  if (type == "latency") {
    LatencyPayload l;
    l.frame_ms = finite_number(p, "frame_ms");
    l.inference_ms = finite_number(p, "inference_ms");
    l.input_buffer_ms = finite_number(p, "input_buffer_ms");
    l.output_buffer_ms = finite_number(p, "output_buffer_ms");
    l.end_to_end_ms = finite_number(p, "end_to_end_ms");
    if (p.contains("measured_end_to_end_ms") && !p["measured_end_to_end_ms"].is_null()) {
      l.measured_end_to_end_ms = finite_number(p, "measured_end_to_end_ms");
    }
    return {TelemetryType::kLatency, l};
  }
  if (type == "status") {
    StatusPayload s;
    s.bypass = flag(p, "bypass");
    s.enhancer = text_field(p, "enhancer");
    if (!p.contains("enhancers") || !p["enhancers"].is_array()) throw FormatError("'enhancers' must be an array");
    for (const auto& e : p["enhancers"]) {
      if (!e.is_string()) throw FormatError("'enhancers' entries must be strings");
      s.enhancers.push_back(e.get<std::string>());
    }
    s.input_ms = finite_number(p, "input_ms");
    s.output_ms = finite_number(p, "output_ms");
    s.frames_processed = count(p, "frames_processed");
    s.underruns = count(p, "underruns");
    s.overruns = count(p, "overruns");
    s.errors = count(p, "errors");
    s.rt_violations = count(p, "rt_violations");
    s.dropped_columns = count(p, "dropped_columns");
    s.controller = flag(p, "controller");
    return {TelemetryType::kStatus, s};
  }
  if (type == "error") return {TelemetryType::kError, ErrorPayload{text_field(p, "message")}};
  throw FormatError("unknown telemetry type '" + type + "'");
}

std::vector<std::uint8_t> encode_column(const SpectrogramColumn& column) {
  if (column.values.size() > 0xFFFF) throw FormatError("column has too many bins");
  if (column.source != MonitorSource::kRaw && column.source != MonitorSource::kEnhanced) {
    throw FormatError("unknown column source");
  }
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.reserve(kColumnHeaderBytes + 4 * column.values.size());
  put_u32(out, column.column_index);
  out.push_back(static_cast<std::uint8_t>(column.source));
  const auto n = static_cast<std::uint16_t>(column.values.size());
  out.push_back(static_cast<std::uint8_t>(n & 0xFF));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  for (const float v : column.values) {
    if (!std::isfinite(v)) throw FormatError("column value is not finite");
    const float c = std::clamp(v, static_cast<float>(dsp::kLogFloorDb), 0.0f);
    put_u32(out, std::bit_cast<std::uint32_t>(c));
  }
  return out;
}

std::optional<SpectrogramColumn> try_decode_column(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kColumnHeaderBytes) return std::nullopt;
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) return std::nullopt;
  const std::size_t n = static_cast<std::size_t>(bytes[9]) | (static_cast<std::size_t>(bytes[10]) << 8);
  if (bytes.size() != kColumnHeaderBytes + 4 * n) return std::nullopt;
  if (bytes[8] > 1) return std::nullopt;
  SpectrogramColumn c;
  c.column_index = get_u32(bytes.data() + 4);
  c.source = static_cast<MonitorSource>(bytes[8]);
  c.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float v = std::bit_cast<float>(get_u32(bytes.data() + kColumnHeaderBytes + 4 * i));
    if (!(v >= dsp::kLogFloorDb && v <= 0.0f)) return std::nullopt;  // also rejects NaN
    c.values[i] = v;
  }
  return c;
}

SpectrogramColumn decode_column(std::span<const std::uint8_t> bytes) {
  auto c = try_decode_column(bytes);
  if (!c) throw FormatError("malformed spectrogram column frame");
  return std::move(*c);
}

}  // namespace throatline::protocol
