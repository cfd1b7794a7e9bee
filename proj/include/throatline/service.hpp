#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "throatline/engine.hpp"

namespace throatline {

struct ServiceConfig {
  EngineConfig engine;
  std::string bind_address = "127.0.0.1";
  unsigned short port = 8787;  // 0 picks a free port
  std::filesystem::path static_dir;
  std::optional<std::filesystem::path> loop_source;
  // Extra enhancer ids registered at startup ("codec:<path>", ...).
  std::vector<std::string> enhancer_ids;
  double telemetry_hz = 10.0;
  std::size_t column_queue = 256;
};

// Websocket control + telemetry service. Text frames carry control and
// telemetry JSON, binary frames carry spectrogram columns. The first client
// is the controller; later clients get read-only telemetry and a busy
// status until the controller leaves.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds, starts audio/spectrogram workers and the network loop in
  // background threads; returns once listening.
  void start();
  // Blocks until stop() (or a signal handler calling stop()).
  void wait();
  void stop();

  unsigned short port() const;
  Engine& engine();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace throatline
