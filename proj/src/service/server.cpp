#include "throatline/service.hpp"

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "throatline/errors.hpp"
#include "throatline/protocol.hpp"
#include "throatline/spectrogram_feed.hpp"
#include "throatline/wav.hpp"

namespace throatline {
namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

// Per-session outgoing frames beyond this are dropped oldest-first.
constexpr std::size_t kMaxPendingWrites = 512;

std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

struct Outgoing {
  bool binary = false;
  std::shared_ptr<const std::string> data;
};

class Hub;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void accept(http::request<http::string_body> req);
  void send(Outgoing msg);
  void close();
  bool controller = false;
  std::uint64_t dropped = 0;

 private:
  void read();
  void write_next();

  websocket::stream<beast::tcp_stream> ws_;
  Hub& hub_;
  beast::flat_buffer buffer_;
  std::deque<Outgoing> queue_;
  bool writing_ = false;
  bool closed_ = false;
};

// All members are touched only from the network thread.
class Hub {
 public:
  Hub(Engine& engine, DropOldestQueue<protocol::SpectrogramColumn>& columns)
      : engine_(engine), columns_(columns) {}

  void join(const std::shared_ptr<WsSession>& s) {
    s->controller = sessions_.empty();
    sessions_.push_back(s);
    send_status(*s);
  }

  void leave(const WsSession* s) {
    const bool was_controller = s->controller;
    std::erase_if(sessions_, [s](const auto& p) { return p.get() == s; });
    if (was_controller && !sessions_.empty()) {
      sessions_.front()->controller = true;
      broadcast_status();
    }
  }

  void on_text(WsSession& s, const std::string& text) {
    protocol::ControlMessage msg;
    try {
      msg = protocol::parse_control(text);
    } catch (const std::exception& e) {
      send_error(s, e.what());
      return;
    }
    if (msg.type == protocol::ControlType::kGetStatus) {
      send_status(s);
      return;
    }
    if (!s.controller) {
      send_error(s, "busy: another client controls the engine");
      send_status(s);
      return;
    }
    try {
      switch (msg.type) {
        case protocol::ControlType::kSetBypass:
          engine_.set_bypass(std::get<bool>(msg.value));
          break;
        case protocol::ControlType::kSetEnhancer:
          engine_.set_enhancer(std::get<std::string>(msg.value));
          break;
        case protocol::ControlType::kSetBufferMs: {
          const auto b = std::get<protocol::BufferMs>(msg.value);
          engine_.set_buffers(b.input_ms, b.output_ms);
          break;
        }
        case protocol::ControlType::kGetStatus:
          break;
      }
    } catch (const std::exception& e) {
      send_error(s, e.what());
    }
    broadcast_status();
    if (msg.type == protocol::ControlType::kSetBufferMs) broadcast_latency();
  }

  // Called by the telemetry timer.
  void tick() {
    broadcast_latency();
    for (auto& c : columns_.drain()) {
      const auto bytes = protocol::encode_column(c);
      auto data = std::make_shared<const std::string>(bytes.begin(), bytes.end());
      for (auto& s : sessions_) s->send({true, data});
    }
    // Frame progress alone is not a status change.
    auto snap = status_for(false);
    snap.frames_processed = last_status_.frames_processed;
    if (!(snap == last_status_)) broadcast_status();
  }

  void close_all() {
    auto copy = sessions_;
    for (auto& s : copy) s->close();
  }

 private:
  protocol::StatusPayload status_for(bool controller) const {
    protocol::StatusPayload p;
    p.bypass = engine_.bypass_requested();
    p.enhancer = engine_.requested_enhancer();
    for (const auto& d : engine_.enhancers()) p.enhancers.push_back(d.id);
    const auto lat = engine_.latency_report();
    p.input_ms = lat.input_buffer_ms;
    p.output_ms = lat.output_buffer_ms;
    const auto c = engine_.counters();
    p.frames_processed = c.frames_processed;
    p.underruns = c.underruns;
    p.overruns = c.overruns;
    p.errors = c.errors;
    p.rt_violations = c.rt_violations;
    p.dropped_columns = columns_.dropped() + c.monitor_drops;
    for (const auto& s : sessions_) p.dropped_columns += s->dropped;
    p.controller = controller;
    return p;
  }

  void send_status(WsSession& s) {
    last_status_ = status_for(false);
    s.send({false, std::make_shared<const std::string>(
                       protocol::to_json(protocol::TelemetryMessage::status(status_for(s.controller))))});
  }

  void broadcast_status() {
    for (auto& s : sessions_) send_status(*s);
    last_status_ = status_for(false);
  }

  void broadcast_latency() {
    auto data = std::make_shared<const std::string>(
        protocol::to_json(protocol::TelemetryMessage::latency(engine_.latency_report())));
    for (auto& s : sessions_) s->send({false, data});
  }

  void send_error(WsSession& s, const std::string& what) {
    s.send({false, std::make_shared<const std::string>(
                       protocol::to_json(protocol::TelemetryMessage::error(what)))});
  }

  Engine& engine_;
  DropOldestQueue<protocol::SpectrogramColumn>& columns_;
  std::vector<std::shared_ptr<WsSession>> sessions_;
  protocol::StatusPayload last_status_;
};

void WsSession::accept(http::request<http::string_body> req) {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->hub_.join(self);
    self->read();
  });
}

void WsSession::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->closed_ = true;
      self->hub_.leave(self.get());
      return;
    }
    if (self->ws_.got_text()) {
      self->hub_.on_text(*self, beast::buffers_to_string(self->buffer_.data()));
    }
    self->buffer_.consume(self->buffer_.size());
    self->read();
  });
}

void WsSession::send(Outgoing msg) {
  if (closed_) return;
  if (queue_.size() >= kMaxPendingWrites) {
    // Drop the oldest queued frame that is not currently being written.
    const auto victim = queue_.begin() + (writing_ ? 1 : 0);
    if (victim != queue_.end()) {
      queue_.erase(victim);
      ++dropped;
    }
  }
  queue_.push_back(std::move(msg));
  if (!writing_) write_next();
}

void WsSession::write_next() {
  if (queue_.empty() || closed_) {
    writing_ = false;
    return;
  }
  writing_ = true;
  ws_.binary(queue_.front().binary);
  ws_.async_write(asio::buffer(*queue_.front().data),
                  [self = shared_from_this()](beast::error_code ec, std::size_t) {
                    self->queue_.pop_front();
                    if (ec) {
                      self->closed_ = true;
                      self->writing_ = false;
                      return;
                    }
                    self->write_next();
                  });
}

void WsSession::close() {
  if (closed_) return;
  closed_ = true;
  beast::error_code ec;
  beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
  beast::get_lowest_layer(ws_).socket().close(ec);
}

// Plain HTTP: static files, or hand-off to a websocket session on /ws.
class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Hub& hub, std::filesystem::path root)
      : stream_(std::move(socket)), hub_(hub), root_(std::move(root)) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->handle();
    });
  }

  void handle() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), hub_)->accept(std::move(req_));
      } else {
        respond(http::status::not_found, "text/plain", "websocket endpoint is /ws\n");
      }
      return;
    }
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      respond(http::status::method_not_allowed, "text/plain", "GET only\n");
      return;
    }
    std::string target(req_.target());
    target = target.substr(0, target.find('?'));
    if (target.empty() || target.back() == '/') target += "index.html";
    const std::filesystem::path rel = std::filesystem::path(target).relative_path().lexically_normal();
    if (rel.empty() || *rel.begin() == "..") {
      respond(http::status::bad_request, "text/plain", "bad path\n");
      return;
    }
    const auto path = root_ / rel;
    std::ifstream in(path, std::ios::binary);
    if (root_.empty() || !in) {
      respond(http::status::not_found, "text/plain", "not found\n");
      return;
    }
    std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    respond(http::status::ok, mime_type(path), std::move(body));
  }

  void respond(http::status status, const std::string& type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, "throatline");
    res->set(http::field::content_type, type);
    res->keep_alive(req_.keep_alive());
    const bool head = req_.method() == http::verb::head;
    res->body() = std::move(body);
    res->prepare_payload();
    if (head) res->body().clear();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  Hub& hub_;
  std::filesystem::path root_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct Service::Impl {
  explicit Impl(ServiceConfig c)
      : cfg(std::move(c)),
        engine(cfg.engine),
        monitor_samples(next_pow2(16 * cfg.engine.frame_len)),
        monitor_tags(64),
        columns(cfg.column_queue),
        hub(engine, columns),
        acceptor(ioc),
        timer(ioc) {}

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpSession>(std::move(socket), hub, cfg.static_dir)->run();
      accept();
    });
  }

  void schedule_tick() {
    const auto period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(1.0 / cfg.telemetry_hz));
    timer.expires_after(period);
    timer.async_wait([this](beast::error_code ec) {
      if (ec) return;
      hub.tick();
      schedule_tick();
    });
  }

  void spectrogram_loop() {
    SpectrogramFeed feed;
    while (!stopping.load()) {
      for (auto& c : feed.drain(monitor_samples, monitor_tags, cfg.engine.frame_len)) {
        columns.push(std::move(c));
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  ServiceConfig cfg;
  Engine engine;
  SpscRing<float> monitor_samples;
  SpscRing<std::uint8_t> monitor_tags;
  DropOldestQueue<protocol::SpectrogramColumn> columns;
  asio::io_context ioc;
  Hub hub;
  tcp::acceptor acceptor;
  asio::steady_timer timer;
  std::unique_ptr<RealtimeLoop> loop;
  std::vector<std::thread> threads;
  std::atomic<bool> stopping{false};
  std::mutex mu;
  std::condition_variable cv;
  bool stopped = false;
  bool started = false;
};

Service::Service(ServiceConfig cfg) {
  if (!(cfg.telemetry_hz > 0.0 && cfg.telemetry_hz <= 10.0)) {
    throw ParameterError("telemetry rate must lie in (0, 10] Hz");
  }
  cfg.engine.max_buffer_ms = std::max(cfg.engine.max_buffer_ms, protocol::kMaxBufferMs);
  impl_ = std::make_unique<Impl>(std::move(cfg));
  for (const auto& id : impl_->cfg.enhancer_ids) {
    if (!impl_->engine.has_enhancer(id)) {
      impl_->engine.register_enhancer(make_enhancer(id, impl_->cfg.engine.sample_rate));
    }
  }
}

Service::~Service() { stop(); }

void Service::start() {
  Impl& s = *impl_;
  if (s.started) return;
  if (!s.cfg.loop_source) {
    throw ConfigurationError("no audio device backend in this build; pass a loopback source");
  }
  SampleBuffer source = wav_read(*s.cfg.loop_source);
  if (source.sample_rate() != s.cfg.engine.sample_rate) {
    throw ConfigurationError("loopback source must be at " + std::to_string(s.cfg.engine.sample_rate) +
                             " Hz (no resampling on the live path)");
  }

  const auto addr = asio::ip::make_address(s.cfg.bind_address);
  tcp::endpoint ep(addr, s.cfg.port);
  s.acceptor.open(ep.protocol());
  s.acceptor.set_option(asio::socket_base::reuse_address(true));
  s.acceptor.bind(ep);
  s.acceptor.listen();

  s.engine.set_monitor(&s.monitor_samples, &s.monitor_tags);
  s.loop = std::make_unique<RealtimeLoop>(s.engine, std::move(source), RealtimeLoop::Options{true, 0});
  s.loop->start();

  s.accept();
  s.schedule_tick();
  s.threads.emplace_back([&s] { s.spectrogram_loop(); });
  s.threads.emplace_back([&s] { s.ioc.run(); });
  s.started = true;
}

void Service::wait() {
  std::unique_lock lock(impl_->mu);
  impl_->cv.wait(lock, [this] { return impl_->stopped; });
}

void Service::stop() {
  if (!impl_) return;
  Impl& s = *impl_;
  {
    std::lock_guard lock(s.mu);
    if (s.stopped) return;
    s.stopped = true;
  }
  s.stopping.store(true);
  asio::post(s.ioc, [&s] {
    beast::error_code ec;
    s.acceptor.close(ec);
    s.timer.cancel();
    s.hub.close_all();
  });
  // Give sessions a moment to unwind before forcing the loop down.
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  s.ioc.stop();
  for (auto& t : s.threads) {
    if (t.joinable()) t.join();
  }
  s.threads.clear();
  if (s.loop) s.loop->stop();
  s.cv.notify_all();
}

unsigned short Service::port() const {
  beast::error_code ec;
  const auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? impl_->cfg.port : ep.port();
}

Engine& Service::engine() { return impl_->engine; }

}  // namespace throatline
