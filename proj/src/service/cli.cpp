#include "throatline/cli.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "throatline/codec.hpp"
#include "throatline/engine.hpp"
#include "throatline/errors.hpp"
#include "throatline/metrics.hpp"
#include "throatline/protocol.hpp"
#include "throatline/service.hpp"
#include "throatline/throatsim.hpp"
#include "throatline/wav.hpp"

#ifndef THROATLINE_DEFAULT_WEB_DIR
#define THROATLINE_DEFAULT_WEB_DIR ""
#endif

namespace throatline {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("THROATLINE_LOG");
    if (env == nullptr) return LogLevel::kInfo;
    const std::string v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    if (v != "info") std::cerr << "[warn] THROATLINE_LOG must be error, info or debug\n";
    return LogLevel::kInfo;
  }();
  return level;
}

template <typename... Args>
void log(LogLevel level, const Args&... args) {
  if (level > log_level()) return;
  static constexpr const char* tags[] = {"error", "info", "debug"};
  std::cerr << '[' << tags[static_cast<int>(level)] << "] ";
  (std::cerr << ... << args);
  std::cerr << '\n';
}

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted.store(true); }

// --- config file ---------------------------------------------------------------

struct Settings {
  ChannelConfig channel;
  CodecConfig codec;
  EngineConfig engine;
  std::optional<std::size_t> synthetic_files;
  double synthetic_seconds = 5.0;
  std::uint64_t synthetic_seed = 0;
};

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigurationError("unknown config key '" + where + "." + key + "'");
    }
  }
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config key '") + key + "': " + e.what());
  }
}

// null or "inf" disables a noise term.
void read_snr(const json& obj, const char* key, double& out) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (v.is_null() || (v.is_string() && v.get<std::string>() == "inf")) {
    out = kNoNoise;
  } else if (v.is_number()) {
    out = v.get<double>();
  } else {
    throw ConfigurationError(std::string("config key '") + key + "' must be a number, null or \"inf\"");
  }
}

Settings load_settings(const std::string& path) {
  Settings s;
  if (path.empty()) return s;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigurationError("config must be a JSON object");
  reject_unknown(j, {"channel", "codec", "engine", "synthetic"}, "config");
  if (j.contains("channel")) {
    const json& c = j["channel"];
    reject_unknown(c, {"cutoff_hz", "filter_order", "phys_noise_snr_db", "phys_noise_band_hz",
                       "burst_rate_hz", "sensor_noise_snr_db", "seed"}, "channel");
    read_into(c, "cutoff_hz", s.channel.cutoff_hz);
    read_into(c, "filter_order", s.channel.filter_order);
    read_snr(c, "phys_noise_snr_db", s.channel.phys_noise_snr_db);
    read_into(c, "phys_noise_band_hz", s.channel.phys_noise_band_hz);
    read_into(c, "burst_rate_hz", s.channel.burst_rate_hz);
    read_snr(c, "sensor_noise_snr_db", s.channel.sensor_noise_snr_db);
    read_into(c, "seed", s.channel.seed);
  }
  if (j.contains("codec")) {
    const json& c = j["codec"];
    reject_unknown(c, {"embed_dim", "hidden_dim", "num_quantizers", "codebook_size", "seed", "learn_rate",
                       "momentum", "batch_size", "epochs", "ema_decay", "mel_bands", "mel_weight",
                       "mel_floor", "quantizer_warmup_epochs", "optimizer"}, "codec");
    read_into(c, "embed_dim", s.codec.embed_dim);
    read_into(c, "hidden_dim", s.codec.hidden_dim);
    read_into(c, "num_quantizers", s.codec.num_quantizers);
    read_into(c, "codebook_size", s.codec.codebook_size);
    read_into(c, "seed", s.codec.seed);
    read_into(c, "learn_rate", s.codec.learn_rate);
    read_into(c, "momentum", s.codec.momentum);
    read_into(c, "batch_size", s.codec.batch_size);
    read_into(c, "epochs", s.codec.epochs);
    read_into(c, "ema_decay", s.codec.ema_decay);
    read_into(c, "mel_bands", s.codec.mel_bands);
    read_into(c, "mel_weight", s.codec.mel_weight);
    read_into(c, "mel_floor", s.codec.mel_floor);
    read_into(c, "quantizer_warmup_epochs", s.codec.quantizer_warmup_epochs);
    if (c.contains("optimizer")) {
      const std::string o = c["optimizer"].is_string() ? c["optimizer"].get<std::string>() : "";
      if (o == "sgd") {
        s.codec.optimizer = OptimizerKind::kSgdMomentum;
      } else if (o == "adam") {
        s.codec.optimizer = OptimizerKind::kAdam;
      } else {
        throw ConfigurationError("codec.optimizer must be \"sgd\" or \"adam\"");
      }
    }
  }
  if (j.contains("engine")) {
    const json& c = j["engine"];
    reject_unknown(c, {"input_buffer_ms", "output_buffer_ms", "max_buffer_ms", "crossfade_ms",
                       "active_enhancer", "bypass", "ring_frames"}, "engine");
    read_into(c, "input_buffer_ms", s.engine.input_buffer_ms);
    read_into(c, "output_buffer_ms", s.engine.output_buffer_ms);
    read_into(c, "max_buffer_ms", s.engine.max_buffer_ms);
    read_into(c, "crossfade_ms", s.engine.crossfade_ms);
    read_into(c, "active_enhancer", s.engine.active_enhancer);
    read_into(c, "bypass", s.engine.bypass);
    read_into(c, "ring_frames", s.engine.ring_frames);
  }
  if (j.contains("synthetic")) {
    const json& c = j["synthetic"];
    reject_unknown(c, {"files", "seconds", "seed"}, "synthetic");
    std::size_t files = 25;
    read_into(c, "files", files);
    s.synthetic_files = files;
    read_into(c, "seconds", s.synthetic_seconds);
    read_into(c, "seed", s.synthetic_seed);
  }
  s.codec.validate();
  s.engine.validate();
  return s;
}

// --- helpers -------------------------------------------------------------------

SampleBuffer read_at_rate(const fs::path& path, int rate) {
  SampleBuffer b = wav_read(path);
  return b.sample_rate() == rate ? b : resample(b, rate);
}

struct FramePairs {
  std::vector<std::vector<float>> clean;
  std::vector<std::vector<float>> degraded;
};

FramePairs load_frames(const PairManifest& m, std::size_t frame_len, int rate) {
  FramePairs out;
  for (const auto& row : m.rows) {
    const auto c = frame_split(read_at_rate(row.clean, rate), frame_len).frames;
    const auto d = frame_split(read_at_rate(row.degraded, rate), frame_len).frames;
    const std::size_t n = std::min(c.size(), d.size());
    for (std::size_t i = 0; i < n; ++i) {
      out.clean.push_back(c[i].samples);
      out.degraded.push_back(d[i].samples);
    }
  }
  if (out.clean.empty()) throw EmptyCorpusError("manifest yields no whole frames");
  return out;
}

std::shared_ptr<const EnhancerModel> load_any_model(const fs::path& path) {
  switch (peek_model_kind(path)) {
    case ModelFileKind::kEnhancer:
      return load_enhancer_resolving_base(path);
    case ModelFileKind::kCodec:
      return std::make_shared<const EnhancerModel>(
          EnhancerModel::from_base(std::make_shared<const CodecModel>(load_model(path))));
    default:
      throw FormatError(path.string() + " is not a model file");
  }
}

void progress_log(const TrainingProgress& p, void*) {
  if (p.epoch % 10 == 0) {
    log(LogLevel::kInfo, "epoch ", p.epoch, " loss ", p.loss);
  } else {
    log(LogLevel::kDebug, "epoch ", p.epoch, " loss ", p.loss);
  }
}

std::unique_ptr<Engine> engine_with_model(EngineConfig cfg, const std::shared_ptr<const EnhancerModel>& model,
                                          const std::string& model_id, bool bypass) {
  cfg.bypass = bypass;
  if (model) cfg.active_enhancer = model_id;
  auto engine = std::make_unique<Engine>(cfg);
  engine->register_enhancer(std::make_unique<EqualizerEnhancer>(cfg.sample_rate));
  if (model) engine->register_enhancer(std::make_unique<CodecEnhancer>(model_id, model));
  engine->start();
  return engine;
}

// --- subcommands ---------------------------------------------------------------

struct Options {
  std::string model, in, out, pairs, report, config, loop;
  int port = 8787;
  bool bypass = false;
  std::optional<std::uint64_t> seed;
  std::optional<double> cutoff_hz, noise_snr_db;
  std::optional<std::uint32_t> epochs;
};

int cmd_simulate(const Options& o) {
  Settings s = load_settings(o.config);
  if (o.seed) s.channel.seed = *o.seed;
  if (o.cutoff_hz) s.channel.cutoff_hz = *o.cutoff_hz;
  if (o.noise_snr_db) s.channel.phys_noise_snr_db = *o.noise_snr_db;
  s.channel.validate(kDefaultSampleRate);
  fs::path corpus = o.in;
  if (corpus.empty()) {
    if (!s.synthetic_files) throw ParameterError("simulate needs --in DIR or a \"synthetic\" config section");
    corpus = fs::path(o.out) / "source";
    fs::create_directories(corpus);
    for (std::size_t i = 0; i < *s.synthetic_files; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "synth_%04zu.wav", i);
      wav_write(synthetic_utterance(s.synthetic_seconds, derive_file_seed(s.synthetic_seed, i)), corpus / name);
    }
    log(LogLevel::kInfo, "wrote ", *s.synthetic_files, " synthetic utterances to ", corpus.string());
  }
  const PairManifest m = make_pairs(corpus, o.out, s.channel);
  log(LogLevel::kInfo, "simulated ", m.rows.size(), " pairs (cfg ", s.channel.hash(), ") -> ",
      (fs::path(o.out) / "manifest.csv").string());
  return 0;
}

int cmd_train_pretrain(const Options& o) {
  Settings s = load_settings(o.config);
  if (o.seed) s.codec.seed = *o.seed;
  if (o.epochs) s.codec.epochs = *o.epochs;
  const auto frames = load_frames(PairManifest::read_csv(o.pairs), s.codec.frame_len,
                                  static_cast<int>(s.codec.sample_rate));
  log(LogLevel::kInfo, "pretraining on ", frames.clean.size(), " frames for ", s.codec.epochs, " epochs");
  const CodecModel model =
      pretrain(s.codec, frames_to_matrix(frames.clean, s.codec.frame_len), progress_log, nullptr);
  save_model(model, o.out);
  log(LogLevel::kInfo, "final loss ", model.loss_curve.empty() ? 0.0 : model.loss_curve.back(), " -> ", o.out);
  return 0;
}

int cmd_train_finetune(const Options& o) {
  Settings s = load_settings(o.config);
  if (o.seed) s.codec.seed = *o.seed;
  if (o.epochs) s.codec.epochs = *o.epochs;
  auto base = std::make_shared<const CodecModel>(load_model(o.model));
  const auto frames = load_frames(PairManifest::read_csv(o.pairs), base->config.frame_len,
                                  static_cast<int>(base->config.sample_rate));
  const Eigen::MatrixXf clean = frames_to_matrix(frames.clean, base->config.frame_len);
  const Eigen::MatrixXf degraded = frames_to_matrix(frames.degraded, base->config.frame_len);
  log(LogLevel::kInfo, "fine-tuning on ", frames.clean.size(), " frame pairs for ", s.codec.epochs, " epochs");
  const EnhancerModel enh = finetune_encoder(base, degraded, clean, s.codec, progress_log, nullptr);
  log(LogLevel::kInfo, "embedding L1: ", embedding_l1(EnhancerModel::from_base(base), degraded, clean),
      " -> ", embedding_l1(enh, degraded, clean));
  save_enhancer(enh, o.out);
  log(LogLevel::kInfo, "wrote ", o.out, " (base codec must stay next to it or be passed explicitly)");
  return 0;
}

int cmd_enhance(const Options& o) {
  Settings s = load_settings(o.config);
  const auto model = load_any_model(o.model);
  const SampleBuffer input = read_at_rate(o.in, s.engine.sample_rate);
  auto engine = engine_with_model(s.engine, model, "codec:" + o.model, o.bypass);
  const SampleBuffer out = enhance_streaming(*engine, input);
  wav_write(out, o.out, WavEncoding::kFloat32);
  const auto c = engine->counters();
  log(LogLevel::kInfo, "enhanced ", input.duration_s(), " s (", c.frames_processed, " frames, ", c.errors,
      " errors) -> ", o.out);
  return 0;
}

int cmd_eval(const Options& o) {
  Settings s = load_settings(o.config);
  const PairManifest m = PairManifest::read_csv(o.pairs);
  std::shared_ptr<const EnhancerModel> model;
  metrics::EnhanceFn fn;
  if (!o.model.empty()) {
    model = load_any_model(o.model);
    fn = [&](const SampleBuffer& d) {
      auto engine = engine_with_model(s.engine, model, "codec:" + o.model, o.bypass);
      return enhance_streaming(*engine, d);
    };
  }
  const metrics::MetricReport report = metrics::evaluate_corpus(m, fn);
  report.write_csv(o.report);
  fs::path json_path = o.report;
  json_path.replace_extension(".json");
  std::ofstream(json_path) << report.summary_json() << '\n';
  std::cout << report.summary_table();
  for (const auto& r : report.rows) {
    if (!r.error.empty()) log(LogLevel::kError, r.file, ": ", r.error);
  }
  log(LogLevel::kInfo, "report -> ", o.report, ", summary -> ", json_path.string());
  return report.degraded.count == 0 ? 2 : 0;
}

int cmd_serve(const Options& o) {
  Settings s = load_settings(o.config);
  ServiceConfig cfg;
  cfg.engine = s.engine;
  cfg.engine.bypass = o.bypass;
  cfg.port = static_cast<unsigned short>(o.port);
  cfg.static_dir = THROATLINE_DEFAULT_WEB_DIR;
  if (const char* web = std::getenv("THROATLINE_WEB_DIR")) cfg.static_dir = web;
  if (!o.loop.empty()) cfg.loop_source = o.loop;
  cfg.enhancer_ids.push_back("equalizer");
  if (!o.model.empty()) {
    cfg.enhancer_ids.push_back("codec:" + o.model);
    cfg.engine.active_enhancer = "codec:" + o.model;
  }
  Service service(cfg);
  service.start();
  std::cout << "listening on http://127.0.0.1:" << service.port() << "/ (websocket /ws)" << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_interrupted.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  log(LogLevel::kInfo, "stopped");
  return 0;
}

int cmd_live(const Options& o) {
  Settings s = load_settings(o.config);
  if (o.loop.empty()) {
    throw ConfigurationError("no audio device backend in this build; pass --loop PATH");
  }
  const SampleBuffer input = wav_read(o.loop);
  if (input.sample_rate() != s.engine.sample_rate) {
    throw ConfigurationError("live input must be at the engine rate (no resampling on the live path)");
  }
  std::shared_ptr<const EnhancerModel> model;
  if (!o.model.empty()) model = load_any_model(o.model);
  auto engine = engine_with_model(s.engine, model, "codec:" + o.model, o.bypass);
  log(LogLevel::kInfo, "streaming ", input.duration_s(), " s in real time");
  const LoopbackResult r = run_loopback(*engine, input);
  std::cout << protocol::to_json(protocol::TelemetryMessage::latency(r.latency)) << '\n';
  const auto c = r.counters;
  log(LogLevel::kInfo, "frames ", c.frames_processed, ", underruns ", c.underruns, ", overruns ", c.overruns,
      ", errors ", c.errors, ", rt violations ", c.rt_violations);
  if (!o.out.empty()) wav_write(r.output, o.out, WavEncoding::kFloat32);
  return 0;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv) {
  CLI::App app{"throatline: throat-microphone speech enhancement toolkit"};
  app.require_subcommand(1);
  Options o;

  const auto add_config = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
  };

  auto* sim = app.add_subcommand("simulate", "Degrade a clean corpus through the throat channel");
  sim->add_option("--in", o.in, "Directory of clean WAV files")->check(CLI::ExistingDirectory);
  sim->add_option("--out", o.out, "Output directory")->required();
  sim->add_option("--seed", o.seed, "Channel seed");
  sim->add_option("--cutoff-hz", o.cutoff_hz, "Body low-pass cutoff");
  sim->add_option("--noise-snr-db", o.noise_snr_db, "Physiological noise SNR");
  add_config(sim);

  auto* pre = app.add_subcommand("train-pretrain", "Pretrain the codec on clean frames");
  pre->add_option("--pairs", o.pairs, "Pair manifest")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", o.out, "Output codec file")->required();
  pre->add_option("--epochs", o.epochs, "Training epochs");
  pre->add_option("--seed", o.seed, "Training seed");
  add_config(pre);

  auto* fin = app.add_subcommand("train-finetune", "Fine-tune the encoder on degraded/clean pairs");
  fin->add_option("--model", o.model, "Base codec file")->required()->check(CLI::ExistingFile);
  fin->add_option("--pairs", o.pairs, "Pair manifest")->required()->check(CLI::ExistingFile);
  fin->add_option("--out", o.out, "Output enhancer file")->required();
  fin->add_option("--epochs", o.epochs, "Training epochs");
  fin->add_option("--seed", o.seed, "Training seed");
  add_config(fin);

  auto* enh = app.add_subcommand("enhance", "Enhance a WAV file through the streaming engine");
  enh->add_option("--model", o.model, "Codec or enhancer file")->required()->check(CLI::ExistingFile);
  enh->add_option("--in", o.in, "Input WAV")->required()->check(CLI::ExistingFile);
  enh->add_option("--out", o.out, "Output WAV")->required();
  enh->add_flag("--bypass", o.bypass, "Pass audio through unprocessed");
  add_config(enh);

  auto* ev = app.add_subcommand("eval", "Score a pair manifest");
  ev->add_option("--pairs", o.pairs, "Pair manifest")->required()->check(CLI::ExistingFile);
  ev->add_option("--report", o.report, "Output CSV report")->required();
  ev->add_option("--model", o.model, "Enhancer to score as well")->check(CLI::ExistingFile);
  ev->add_flag("--bypass", o.bypass, "Score the bypass path");
  add_config(ev);

  auto* srv = app.add_subcommand("serve", "Run the websocket control/telemetry service");
  srv->add_option("--port", o.port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  srv->add_option("--loop", o.loop, "Loopback WAV source")->check(CLI::ExistingFile);
  srv->add_option("--model", o.model, "Codec or enhancer file")->check(CLI::ExistingFile);
  srv->add_flag("--bypass", o.bypass, "Start bypassed");
  add_config(srv);

  auto* live = app.add_subcommand("live", "Stream in real time without the UI");
  live->add_option("--loop", o.loop, "Loopback WAV source")->check(CLI::ExistingFile);
  live->add_option("--model", o.model, "Codec or enhancer file")->check(CLI::ExistingFile);
  live->add_option("--out", o.out, "Write the played output here");
  live->add_flag("--bypass", o.bypass, "Start bypassed");
  add_config(live);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*sim) return cmd_simulate(o);
    if (*pre) return cmd_train_pretrain(o);
    if (*fin) return cmd_train_finetune(o);
    if (*enh) return cmd_enhance(o);
    if (*ev) return cmd_eval(o);
    if (*srv) return cmd_serve(o);
    if (*live) return cmd_live(o);
  } catch (const ParameterError& e) {
    log(LogLevel::kError, e.what());
    std::cerr << app.help() << '\n';
    return 1;
  } catch (const std::exception& e) {
    log(LogLevel::kError, e.what());
    return 2;
  }
  return 1;
}

int cli_dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace throatline
