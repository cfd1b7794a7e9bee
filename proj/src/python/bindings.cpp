#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "throatline/codec.hpp"
#include "throatline/engine.hpp"
#include "throatline/errors.hpp"
#include "throatline/metrics.hpp"
#include "throatline/throatsim.hpp"
#include "throatline/wav.hpp"

namespace py = pybind11;
using namespace throatline;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

SampleBuffer to_buffer(const FloatArray& a, int rate) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D sample array");
  return SampleBuffer(std::vector<float>(a.data(), a.data() + a.size()), rate);
}

std::span<const float> view(const FloatArray& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D sample array");
  return {a.data(), static_cast<std::size_t>(a.size())};
}

py::array_t<float> to_array(const std::vector<float>& v) {
  return py::array_t<float>(static_cast<py::ssize_t>(v.size()), v.data());
}

// (n_frames, frame_len) row-major is the column-major (frame_len x n_frames)
// layout the trainers take.
Eigen::MatrixXf to_frames(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("expected a (n_frames, frame_len) array");
  return Eigen::Map<const Eigen::MatrixXf>(a.data(), a.shape(1), a.shape(0));
}

py::dict latency_dict(const LatencyReport& r) {
  py::dict d;
  d["frame_ms"] = r.frame_ms;
  d["inference_ms"] = r.inference_ms;
  d["input_buffer_ms"] = r.input_buffer_ms;
  d["output_buffer_ms"] = r.output_buffer_ms;
  d["end_to_end_ms"] = r.end_to_end_ms;
  d["measured_end_to_end_ms"] = r.measured_end_to_end_ms ? py::cast(*r.measured_end_to_end_ms) : py::none();
  return d;
}

py::dict counters_dict(const EngineCounters& c) {
  py::dict d;
  d["frames_processed"] = c.frames_processed;
  d["underruns"] = c.underruns;
  d["overruns"] = c.overruns;
  d["errors"] = c.errors;
  d["crossfades"] = c.crossfades;
  d["rt_violations"] = c.rt_violations;
  d["monitor_drops"] = c.monitor_drops;
  return d;
}

std::string hex(const Sha256Digest& d) { return to_hex(std::span<const std::uint8_t>(d.data(), d.size())); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Throat-microphone speech enhancement: channel simulation, toy codec, metrics and streaming engine.";
  m.attr("DEFAULT_SAMPLE_RATE") = kDefaultSampleRate;
  m.attr("DEFAULT_FRAME_LEN") = kDefaultFrameLen;

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<UnsupportedFormatError>(m, "UnsupportedFormatError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<ConfigurationError>(m, "ConfigurationError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<RangeError>(m, "RangeError", base.ptr());
  py::register_exception<EmptyCorpusError>(m, "EmptyCorpusError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());
  py::register_exception<UndefinedReferenceError>(m, "UndefinedReferenceError", base.ptr());
  py::register_exception<InsufficientSignalError>(m, "InsufficientSignalError", base.ptr());
  py::register_exception<ControlError>(m, "ControlError", base.ptr());

  // --- audio ---
  m.def("read_wav", [](const std::filesystem::path& path) {
    const SampleBuffer b = wav_read(path);
    return py::make_tuple(to_array(b.samples()), b.sample_rate());
  }, py::arg("path"), "Read a mono-mixed WAV file as (float32 samples, sample_rate).");
  m.def("write_wav", [](const std::filesystem::path& path, const FloatArray& samples, int sample_rate, bool pcm16) {
    wav_write(to_buffer(samples, sample_rate), path, pcm16 ? WavEncoding::kPcm16 : WavEncoding::kFloat32);
  }, py::arg("path"), py::arg("samples"), py::arg("sample_rate") = kDefaultSampleRate, py::arg("pcm16") = false);
  m.def("resample", [](const FloatArray& samples, int sample_rate, int target_rate) {
    return to_array(resample(to_buffer(samples, sample_rate), target_rate).samples());
  }, py::arg("samples"), py::arg("sample_rate"), py::arg("target_rate"));

  // --- channel simulation ---
  py::class_<ChannelConfig>(m, "ChannelConfig")
      .def(py::init<>())
      .def_readwrite("cutoff_hz", &ChannelConfig::cutoff_hz)
      .def_readwrite("filter_order", &ChannelConfig::filter_order)
      .def_readwrite("phys_noise_snr_db", &ChannelConfig::phys_noise_snr_db)
      .def_readwrite("phys_noise_band_hz", &ChannelConfig::phys_noise_band_hz)
      .def_readwrite("burst_rate_hz", &ChannelConfig::burst_rate_hz)
      .def_readwrite("sensor_noise_snr_db", &ChannelConfig::sensor_noise_snr_db)
      .def_readwrite("seed", &ChannelConfig::seed)
      .def("hash", &ChannelConfig::hash);
  m.def("simulate_channel", [](const FloatArray& clean, const ChannelConfig& cfg, int sample_rate) {
    return to_array(simulate_channel(to_buffer(clean, sample_rate), cfg).samples());
  }, py::arg("clean"), py::arg("config") = ChannelConfig{}, py::arg("sample_rate") = kDefaultSampleRate);
  m.def("make_pairs", [](const std::filesystem::path& corpus, const std::filesystem::path& out,
                         const ChannelConfig& cfg) {
    py::list rows;
    for (const auto& r : make_pairs(corpus, out, cfg).rows) {
      py::dict d;
      d["clean"] = r.clean;
      d["degraded"] = r.degraded;
      d["seed"] = r.seed;
      d["cfg_hash"] = r.cfg_hash;
      rows.append(d);
    }
    return rows;
  }, py::arg("corpus_dir"), py::arg("out_dir"), py::arg("config") = ChannelConfig{});
  m.def("synthetic_utterance", [](double seconds, std::uint64_t seed) {
    return to_array(synthetic_utterance(seconds, seed).samples());
  }, py::arg("seconds"), py::arg("seed"));
  m.def("tone", [](double freq, double amplitude, double seconds, int sample_rate) {
    return to_array(tone(freq, amplitude, seconds, sample_rate).samples());
  }, py::arg("freq_hz"), py::arg("amplitude"), py::arg("seconds"), py::arg("sample_rate") = kDefaultSampleRate);

  // --- metrics ---
  m.def("si_sdr", [](const FloatArray& est, const FloatArray& ref) { return metrics::si_sdr(view(est), view(ref)); },
        py::arg("estimate"), py::arg("reference"));
  m.def("stoi", [](const FloatArray& est, const FloatArray& ref, int sample_rate) {
    return metrics::stoi(to_buffer(est, sample_rate), to_buffer(ref, sample_rate));
  }, py::arg("estimate"), py::arg("reference"), py::arg("sample_rate") = kDefaultSampleRate);
  m.def("lsd", [](const FloatArray& est, const FloatArray& ref) { return metrics::lsd(view(est), view(ref)); },
        py::arg("estimate"), py::arg("reference"));

  // --- codec ---
  py::enum_<OptimizerKind>(m, "Optimizer")
      .value("SGD_MOMENTUM", OptimizerKind::kSgdMomentum)
      .value("ADAM", OptimizerKind::kAdam);
  py::class_<CodecConfig>(m, "CodecConfig")
      .def(py::init<>())
      .def_readwrite("frame_len", &CodecConfig::frame_len)
      .def_readwrite("embed_dim", &CodecConfig::embed_dim)
      .def_readwrite("hidden_dim", &CodecConfig::hidden_dim)
      .def_readwrite("num_quantizers", &CodecConfig::num_quantizers)
      .def_readwrite("codebook_size", &CodecConfig::codebook_size)
      .def_readwrite("seed", &CodecConfig::seed)
      .def_readwrite("learn_rate", &CodecConfig::learn_rate)
      .def_readwrite("momentum", &CodecConfig::momentum)
      .def_readwrite("batch_size", &CodecConfig::batch_size)
      .def_readwrite("epochs", &CodecConfig::epochs)
      .def_readwrite("ema_decay", &CodecConfig::ema_decay)
      .def_readwrite("mel_bands", &CodecConfig::mel_bands)
      .def_readwrite("mel_weight", &CodecConfig::mel_weight)
      .def_readwrite("mel_floor", &CodecConfig::mel_floor)
      .def_readwrite("quantizer_warmup_epochs", &CodecConfig::quantizer_warmup_epochs)
      .def_readwrite("optimizer", &CodecConfig::optimizer)
      .def_readwrite("sample_rate", &CodecConfig::sample_rate)
      .def("validate", &CodecConfig::validate);

  py::class_<CodecModel, std::shared_ptr<CodecModel>>(m, "CodecModel")
      .def_static("random_init", [](const CodecConfig& c) { return std::make_shared<CodecModel>(CodecModel::random_init(c)); })
      .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<CodecModel>(load_model(p)); })
      .def("save", [](const CodecModel& model, const std::filesystem::path& p) { save_model(model, p); })
      .def("hash", [](const CodecModel& model) { return hex(model.hash()); })
      .def_readonly("config", &CodecModel::config)
      .def_readonly("loss_curve", &CodecModel::loss_curve)
      .def("encode", [](const CodecModel& model, const FloatArray& frame) {
        const Embedding e = encode(model, view(frame));
        return to_array(std::vector<float>(e.data(), e.data() + e.size()));
      })
      .def("tokens", [](const CodecModel& model, const FloatArray& frame) {
        return quantize(model, encode(model, view(frame))).tokens.indices;
      })
      .def("reconstruct", [](const CodecModel& model, const FloatArray& frame) {
        return to_array(decode(model, quantize(model, encode(model, view(frame))).embedding));
      });
  m.def("pretrain", [](const CodecConfig& cfg, const FloatArray& frames) {
    const Eigen::MatrixXf x = to_frames(frames);
    py::gil_scoped_release release;
    return std::make_shared<CodecModel>(pretrain(cfg, x));
  }, py::arg("config"), py::arg("clean_frames"), "Pretrain on a (n_frames, frame_len) array of clean frames.");

  py::class_<EnhancerModel, std::shared_ptr<EnhancerModel>>(m, "EnhancerModel")
      .def_static("from_base", [](std::shared_ptr<CodecModel> base) {
        return std::make_shared<EnhancerModel>(EnhancerModel::from_base(std::move(base)));
      })
      .def_static("load", [](const std::filesystem::path& p, std::shared_ptr<CodecModel> base) {
        return std::make_shared<EnhancerModel>(load_enhancer(p, std::move(base)));
      })
      .def("save", [](const EnhancerModel& e, const std::filesystem::path& p) { save_enhancer(e, p); })
      .def_readonly("loss_curve", &EnhancerModel::loss_curve)
      .def("enhance_frame", [](const EnhancerModel& e, const FloatArray& frame) {
        return to_array(enhance_frame(e, view(frame)));
      });
  m.def("finetune", [](std::shared_ptr<CodecModel> base, const FloatArray& degraded, const FloatArray& clean,
                       const CodecConfig& cfg) {
    const Eigen::MatrixXf d = to_frames(degraded), c = to_frames(clean);
    py::gil_scoped_release release;
    return std::make_shared<EnhancerModel>(finetune_encoder(std::move(base), d, c, cfg));
  }, py::arg("base"), py::arg("degraded_frames"), py::arg("clean_frames"), py::arg("config"));

  // --- engine ---
  m.def("predicted_latency", [](double input_ms, double output_ms, std::size_t frame_len, int sample_rate) {
    EngineConfig c;
    c.frame_len = frame_len;
    c.sample_rate = sample_rate;
    c.input_buffer_ms = input_ms;
    c.output_buffer_ms = output_ms;
    c.max_buffer_ms = std::max({c.max_buffer_ms, input_ms, output_ms});
    return latency_dict(predicted_latency(c));
  }, py::arg("input_ms") = 32.0, py::arg("output_ms") = 32.0, py::arg("frame_len") = kDefaultFrameLen,
     py::arg("sample_rate") = kDefaultSampleRate);

  py::class_<Engine>(m, "Engine")
      .def(py::init([](const std::string& enhancer, bool bypass, double input_ms, double output_ms,
                       std::size_t frame_len, double crossfade_ms) {
             EngineConfig c;
             c.active_enhancer = enhancer;
             c.bypass = bypass;
             c.input_buffer_ms = input_ms;
             c.output_buffer_ms = output_ms;
             c.max_buffer_ms = std::max({c.max_buffer_ms, input_ms, output_ms});
             c.frame_len = frame_len;
             c.crossfade_ms = crossfade_ms;
             return std::make_unique<Engine>(c);
           }),
           py::arg("enhancer") = "passthrough", py::arg("bypass") = false, py::arg("input_ms") = 32.0,
           py::arg("output_ms") = 32.0, py::arg("frame_len") = kDefaultFrameLen, py::arg("crossfade_ms") = 10.0)
      .def("add_enhancer", [](Engine& e, const std::string& id) {
        e.register_enhancer(make_enhancer(id, e.config().sample_rate));
      }, py::arg("id"), "Register 'equalizer' or 'codec:<path>'.")
      .def("add_codec", [](Engine& e, const std::string& id, std::shared_ptr<EnhancerModel> model) {
        e.register_enhancer(std::make_unique<CodecEnhancer>(id, std::move(model)));
      }, py::arg("id"), py::arg("model"))
      .def_property_readonly("enhancers", [](const Engine& e) {
        std::vector<std::string> ids;
        for (const auto& d : e.enhancers()) ids.push_back(d.id);
        return ids;
      })
      .def("start", &Engine::start)
      .def("push", [](Engine& e, const FloatArray& samples) { return e.push_input(view(samples)); })
      .def("process", &Engine::process_step)
      .def("pull", [](Engine& e, std::size_t n) {
        std::vector<float> out(n);
        e.pull_output(out);
        return to_array(out);
      })
      .def("set_bypass", &Engine::set_bypass)
      .def("set_enhancer", &Engine::set_enhancer)
      .def("set_buffers", &Engine::set_buffers)
      .def_property_readonly("bypass", &Engine::bypass_active)
      .def_property_readonly("active_enhancer", &Engine::active_enhancer)
      .def_property_readonly("counters", [](const Engine& e) { return counters_dict(e.counters()); })
      .def_property_readonly("latency", [](const Engine& e) { return latency_dict(e.latency_report()); })
      .def("stream", [](Engine& e, const FloatArray& samples, std::size_t block) {
        return to_array(stream_simulated(e, to_buffer(samples, e.config().sample_rate), block).samples());
      }, py::arg("samples"), py::arg("block") = 480,
         "Simulated-clock streaming; the output keeps the pipeline delay.")
      .def("enhance", [](Engine& e, const FloatArray& samples) {
        return to_array(enhance_streaming(e, to_buffer(samples, e.config().sample_rate)).samples());
      }, py::arg("samples"), "Whole-signal enhancement with the pipeline delay trimmed.");
}
