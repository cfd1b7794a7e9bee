// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Criterion 7 interposes the allocator, mutex, condition-variable
// and sleep entry points of this process to observe the audio-path calls.

#include <dlfcn.h>
#include <pthread.h>
#include <time.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "throatline/codec.hpp"
#include "throatline/codec_math.hpp"
#include "throatline/engine.hpp"
#include "throatline/errors.hpp"
#include "throatline/metrics.hpp"
#include "throatline/protocol.hpp"
#include "throatline/throatsim.hpp"
#include "throatline/wav.hpp"

namespace fs = std::filesystem;
using namespace throatline;

// --- interposition ------------------------------------------------------------

extern "C" {
void* __libc_malloc(std::size_t);
void* __libc_calloc(std::size_t, std::size_t);
void* __libc_realloc(void*, std::size_t);
void* __libc_memalign(std::size_t, std::size_t);
}

namespace probe {

std::atomic<std::uint64_t> allocations{0};
std::atomic<std::uint64_t> blocking{0};
thread_local bool counting = false;
bool resolving = false;

using mutex_lock_fn = int (*)(pthread_mutex_t*);
using cond_wait_fn = int (*)(pthread_cond_t*, pthread_mutex_t*);
using cond_timedwait_fn = int (*)(pthread_cond_t*, pthread_mutex_t*, const struct timespec*);
using cond_clockwait_fn = int (*)(pthread_cond_t*, pthread_mutex_t*, clockid_t, const struct timespec*);
using nanosleep_fn = int (*)(const struct timespec*, struct timespec*);
using clock_nanosleep_fn = int (*)(clockid_t, int, const struct timespec*, struct timespec*);

mutex_lock_fn real_mutex_lock = nullptr;
cond_wait_fn real_cond_wait = nullptr;
cond_timedwait_fn real_cond_timedwait = nullptr;
cond_clockwait_fn real_cond_clockwait = nullptr;
nanosleep_fn real_nanosleep = nullptr;
clock_nanosleep_fn real_clock_nanosleep = nullptr;

template <typename F>
F next_symbol(const char* name, const char* version) {
  void* p = version != nullptr ? dlvsym(RTLD_NEXT, name, version) : nullptr;
  if (p == nullptr) p = dlsym(RTLD_NEXT, name);
  return reinterpret_cast<F>(p);
}

// Resolved before main so no hook ever calls dlsym concurrently. While
// resolving, a re-entrant mutex hook returns without locking (single thread).
__attribute__((constructor(101))) void resolve() {
  resolving = true;
  real_mutex_lock = next_symbol<mutex_lock_fn>("pthread_mutex_lock", nullptr);
  real_cond_wait = next_symbol<cond_wait_fn>("pthread_cond_wait", "GLIBC_2.3.2");
  real_cond_timedwait = next_symbol<cond_timedwait_fn>("pthread_cond_timedwait", "GLIBC_2.3.2");
  real_cond_clockwait = next_symbol<cond_clockwait_fn>("pthread_cond_clockwait", nullptr);
  real_nanosleep = next_symbol<nanosleep_fn>("nanosleep", nullptr);
  real_clock_nanosleep = next_symbol<clock_nanosleep_fn>("clock_nanosleep", nullptr);
  resolving = false;
}

inline void note_alloc() {
  if (counting) allocations.fetch_add(1, std::memory_order_relaxed);
}
inline void note_block() {
  if (counting) blocking.fetch_add(1, std::memory_order_relaxed);
}

struct Counted {
  Counted() { counting = true; }
  ~Counted() { counting = false; }
};

}  // namespace probe

extern "C" {

void* malloc(std::size_t n) {
  probe::note_alloc();
  return __libc_malloc(n);
}
void* calloc(std::size_t n, std::size_t m) {
  probe::note_alloc();
  return __libc_calloc(n, m);
}
void* realloc(void* p, std::size_t n) {
  probe::note_alloc();
  return __libc_realloc(p, n);
}
void* aligned_alloc(std::size_t align, std::size_t n) {
  probe::note_alloc();
  return __libc_memalign(align, n);
}
int posix_memalign(void** out, std::size_t align, std::size_t n) {
  probe::note_alloc();
  void* p = __libc_memalign(align, n);
  if (p == nullptr) return ENOMEM;
  *out = p;
  return 0;
}

int pthread_mutex_lock(pthread_mutex_t* m) {
  if (probe::real_mutex_lock == nullptr) {
    if (probe::resolving) return 0;
    probe::resolve();
  }
  probe::note_block();
  return probe::real_mutex_lock(m);
}
int pthread_cond_wait(pthread_cond_t* c, pthread_mutex_t* m) {
  probe::note_block();
  return probe::real_cond_wait(c, m);
}
int pthread_cond_timedwait(pthread_cond_t* c, pthread_mutex_t* m, const struct timespec* t) {
  probe::note_block();
  return probe::real_cond_timedwait(c, m, t);
}
int pthread_cond_clockwait(pthread_cond_t* c, pthread_mutex_t* m, clockid_t clk, const struct timespec* t) {
  probe::note_block();
  return probe::real_cond_clockwait(c, m, clk, t);
}
int nanosleep(const struct timespec* req, struct timespec* rem) {
  probe::note_block();
  return probe::real_nanosleep(req, rem);
}
int clock_nanosleep(clockid_t clk, int flags, const struct timespec* req, struct timespec* rem) {
  probe::note_block();
  return probe::real_clock_nanosleep(clk, flags, req, rem);
}

}  // extern "C"

// --- runner -------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

const fs::path kGolden = THROATLINE_GOLDEN_DIR;

std::vector<float> scaled(std::span<const float> x, float a) {
  std::vector<float> y(x.begin(), x.end());
  for (float& v : y) v *= a;
  return y;
}

std::vector<float> white(std::size_t n, double std_dev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, std_dev);
  std::vector<float> v(n);
  for (float& s : v) s = static_cast<float>(d(rng));
  return v;
}

// --- 1: metric properties ------------------------------------------------------

void metric_properties(Outcome& o) {
  const auto t0 = Clock::now();
  const auto ref = white(24000, 0.3, 1);
  const auto noise = white(24000, 0.1, 2);
  std::vector<float> est(ref.size());
  for (std::size_t i = 0; i < est.size(); ++i) est[i] = ref[i] + noise[i];
  const double base = metrics::si_sdr(est, ref);
  double drift = 0.0;
  for (float a : {0.1f, 1.0f, 10.0f}) drift = std::max(drift, std::abs(metrics::si_sdr(scaled(est, a), ref) - base));
  o.require(drift < 1e-6, "SI-SDR scale drift " + fmt(drift));

  // Disjoint supports: <noise, ref> = 0 exactly, so SI-SDR = 10 log10(|r|^2 / (c^2 |e|^2)).
  std::vector<float> r(4000, 0.0f), mix(4000, 0.0f);
  const auto a = white(2000, 1.0, 3), b = white(2000, 1.0, 4);
  double rr = 0, ee = 0;
  const float c = 0.3f;
  for (std::size_t i = 0; i < 2000; ++i) {
    r[2 * i] = a[i];
    mix[2 * i] = a[i];
    mix[2 * i + 1] = c * b[i];
    rr += static_cast<double>(a[i]) * a[i];
    ee += static_cast<double>(b[i]) * b[i];
  }
  const double closed = 10.0 * std::log10(rr / (static_cast<double>(c) * c * ee));
  const double ortho_err = std::abs(metrics::si_sdr(mix, r) - closed);
  o.require(ortho_err < 1e-6, "orthogonal closed form error " + fmt(ortho_err));
  o.require(metrics::si_sdr(ref, ref) == 100.0, "identity cap");

  const SampleBuffer x = synthetic_utterance(4.0, 11);
  const double self = metrics::stoi(x, x);
  o.require(std::abs(self - 1.0) <= 1e-6, "STOI(x,x) = " + fmt(self, 10));
  const double px = [&] {
    double s = 0;
    for (float v : x.samples()) s += static_cast<double>(v) * v;
    return s / static_cast<double>(x.size());
  }();
  std::vector<double> sweep;
  for (double snr : {20.0, 10.0, 0.0}) {
    const auto n = white(x.size(), std::sqrt(px / std::pow(10.0, snr / 10.0)), 100 + static_cast<int>(snr));
    std::vector<float> y(x.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.samples()[i] + n[i];
    sweep.push_back(metrics::stoi(SampleBuffer(y, x.sample_rate()), x));
  }
  o.require(sweep[0] < 1.0 && sweep[1] < sweep[0] && sweep[2] < sweep[1], "STOI sweep not strictly decreasing");
  const double dt = seconds_since(t0);
  o.require(dt < 10.0, "runtime");
  o.detail << "scale drift " << fmt(drift) << " dB, orthogonal err " << fmt(ortho_err) << " dB, STOI 20/10/0 dB = "
           << fmt(sweep[0]) << "/" << fmt(sweep[1]) << "/" << fmt(sweep[2]);
}

// --- 2: gradient correctness -----------------------------------------------------

namespace cm = codec_math;
using LD = long double;
constexpr std::size_t kMelWindow = 512;
constexpr double kFdStep = 1e-6;
constexpr double kRelTol = 1e-4;
// Gradient entries below this magnitude (in both estimates) compare absolutely.
constexpr double kGradFloor = 1e-9;

template <typename S>
struct Problem {
  cm::Mat<S> clean, degraded, clean_mel, frozen_embed;
  cm::MlpT<S> enc, dec, frozen;
  std::unique_ptr<cm::LogMelLoss<S>> mel;
  S mel_weight;
};

template <typename S>
Problem<S> make_problem(const CodecModel& model, const CodecModel& frozen, const Eigen::MatrixXf& clean,
                        const Eigen::MatrixXf& degraded) {
  Problem<S> p;
  const CodecConfig& c = model.config;
  p.clean = clean.cast<S>();
  p.degraded = degraded.cast<S>();
  p.enc = model.encoder.template cast<S>();
  p.dec = model.decoder.template cast<S>();
  p.frozen = frozen.encoder.template cast<S>();
  p.mel = std::make_unique<cm::LogMelLoss<S>>(c.frame_len, kMelWindow, c.mel_bands, c.sample_rate, c.mel_floor);
  p.clean_mel = p.mel->features(p.clean);
  p.frozen_embed = cm::mlp_forward(p.frozen, p.clean, static_cast<cm::MlpTape<S>*>(nullptr));
  p.mel_weight = S(c.mel_weight);
  return p;
}

template <typename S>
void sign_pattern(const cm::Mat<S>& d, std::vector<signed char>& out) {
  out.resize(static_cast<std::size_t>(d.size()));
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<signed char>(d(i) > 0 ? 1 : (d(i) < 0 ? -1 : 0));
  }
}

// Pretraining objective with the quantizer bypassed. `signs` receives the
// sign pattern of the L1 residual.
template <typename S>
S pretrain_loss(const Problem<S>& p, std::vector<signed char>* signs) {
  const cm::Mat<S> z = cm::mlp_forward(p.enc, p.clean, static_cast<cm::MlpTape<S>*>(nullptr));
  const cm::Mat<S> y = cm::mlp_forward(p.dec, z, static_cast<cm::MlpTape<S>*>(nullptr));
  if (signs != nullptr) sign_pattern<S>(y - p.clean, *signs);
  return cm::l1_loss<S>(y, p.clean, nullptr) + p.mel_weight * p.mel->loss(y, p.clean_mel, nullptr);
}

template <typename S>
S finetune_loss(const Problem<S>& p, std::vector<signed char>* signs) {
  const cm::Mat<S> z = cm::mlp_forward(p.enc, p.degraded, static_cast<cm::MlpTape<S>*>(nullptr));
  if (signs != nullptr) sign_pattern<S>(z - p.frozen_embed, *signs);
  return cm::l1_loss<S>(z, p.frozen_embed, nullptr);
}

// Analytic gradients in double: pretraining (encoder + decoder tensors) and
// fine-tuning (encoder tensors).
void analytic_pretrain(const Problem<double>& p, cm::MlpT<double>& genc, cm::MlpT<double>& gdec) {
  cm::MlpTape<double> te, td;
  const cm::Mat<double> z = cm::mlp_forward(p.enc, p.clean, &te);
  const cm::Mat<double> y = cm::mlp_forward(p.dec, z, &td);
  cm::Mat<double> dy, dmel;
  cm::l1_loss<double>(y, p.clean, &dy);
  p.mel->loss(y, p.clean_mel, &dmel);
  dy += p.mel_weight * dmel;
  genc = cm::MlpT<double>::zeros(p.enc.in_dim(), p.enc.hidden_dim(), p.enc.out_dim());
  gdec = cm::MlpT<double>::zeros(p.dec.in_dim(), p.dec.hidden_dim(), p.dec.out_dim());
  const cm::Mat<double> dz = cm::mlp_backward(p.dec, td, dy, gdec);
  cm::mlp_backward(p.enc, te, dz, genc);
}

void analytic_finetune(const Problem<double>& p, cm::MlpT<double>& genc) {
  cm::MlpTape<double> te;
  const cm::Mat<double> z = cm::mlp_forward(p.enc, p.degraded, &te);
  cm::Mat<double> dz;
  cm::l1_loss<double>(z, p.frozen_embed, &dz);
  genc = cm::MlpT<double>::zeros(p.enc.in_dim(), p.enc.hidden_dim(), p.enc.out_dim());
  cm::mlp_backward(p.enc, te, dz, genc);
}

template <typename S>
std::vector<std::pair<S*, std::size_t>> tensors(cm::MlpT<S>& m) {
  std::vector<std::pair<S*, std::size_t>> out;
  m.for_each_tensor([&](S* d, std::size_t n) { out.emplace_back(d, n); });
  return out;
}

struct GradStats {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
};

// Compares every selected entry of `grad` with a central difference of
// `loss` in long double, perturbing the matching entry of `param`.
void compare(cm::MlpT<double>& grad, cm::MlpT<LD>& param, const std::function<LD(std::vector<signed char>*)>& loss,
             std::size_t per_tensor, std::mt19937_64& rng, GradStats& st) {
  auto g = tensors(grad);
  auto w = tensors(param);
  std::vector<signed char> sp, sm;
  for (std::size_t t = 0; t < g.size(); ++t) {
    std::vector<std::size_t> idx(g[t].second);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (per_tensor != 0 && per_tensor < idx.size()) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_tensor);
    }
    for (std::size_t i : idx) {
      LD& v = w[t].first[i];
      const LD keep = v;
      v = keep + LD(kFdStep);
      const LD lp = loss(&sp);
      v = keep - LD(kFdStep);
      const LD lm = loss(&sm);
      v = keep;
      if (sp != sm) {  // an L1 residual crossed zero inside the stencil
        ++st.kinks;
        continue;
      }
      const double numeric = static_cast<double>((lp - lm) / (LD(2) * LD(kFdStep)));
      const double analytic = g[t].first[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      st.worst = std::max(st.worst, std::abs(analytic - numeric) / denom);
      ++st.checked;
    }
  }
}

std::pair<Eigen::MatrixXf, Eigen::MatrixXf> grad_batch(std::size_t frame_len, std::uint64_t seed) {
  SynthConfig sc;
  sc.frame_len = frame_len;
  const SampleBuffer clean = synthetic_utterance(3.0, seed, sc);
  ChannelConfig ch;
  ch.seed = seed;
  const SampleBuffer degraded = simulate_channel(clean, ch);
  Eigen::MatrixXf c(static_cast<Eigen::Index>(frame_len), 4), d(static_cast<Eigen::Index>(frame_len), 4);
  Eigen::Index col = 0;
  for (std::size_t off = 0; off + frame_len <= clean.size() && col < 4; off += frame_len) {
    double e = 0;
    for (std::size_t n = 0; n < frame_len; ++n) e += std::abs(clean.samples()[off + n]);
    if (e / static_cast<double>(frame_len) < 1e-3) continue;
    for (std::size_t n = 0; n < frame_len; ++n) {
      c(static_cast<Eigen::Index>(n), col) = clean.samples()[off + n];
      d(static_cast<Eigen::Index>(n), col) = degraded.samples()[off + n];
    }
    ++col;
  }
  if (col < 4) throw TrainingError("gradient batch: not enough voiced frames");
  return {c, d};
}

void check_config(const CodecConfig& base_cfg, std::size_t per_tensor, std::uint64_t seed, GradStats& st) {
  CodecConfig cfg = base_cfg;
  cfg.seed = seed;
  const CodecModel model = CodecModel::random_init(cfg);
  CodecConfig fcfg = cfg;
  fcfg.seed = seed + 1000;
  const CodecModel frozen = CodecModel::random_init(fcfg);
  const auto [clean, degraded] = grad_batch(cfg.frame_len, seed + 17);
  std::mt19937_64 rng(seed);

  Problem<double> pd = make_problem<double>(model, frozen, clean, degraded);
  Problem<LD> pl = make_problem<LD>(model, frozen, clean, degraded);

  cm::MlpT<double> genc, gdec;
  analytic_pretrain(pd, genc, gdec);
  const auto pre = [&](std::vector<signed char>* s) { return pretrain_loss(pl, s); };
  compare(genc, pl.enc, pre, per_tensor, rng, st);
  compare(gdec, pl.dec, pre, per_tensor, rng, st);

  analytic_finetune(pd, genc);
  const auto fin = [&](std::vector<signed char>* s) { return finetune_loss(pl, s); };
  compare(genc, pl.enc, fin, per_tensor, rng, st);
}

void gradient_correctness(Outcome& o) {
  const auto t0 = Clock::now();
  // Every entry of every tensor on a narrow codec, then sampled entries of
  // the default-size codec.
  CodecConfig small;
  small.frame_len = 512;
  small.embed_dim = 4;
  small.hidden_dim = 6;
  small.mel_bands = 32;
  GradStats full, sampled;
  for (std::uint64_t seed = 0; seed < 5; ++seed) check_config(small, 0, seed, full);
  const CodecConfig def;
  for (std::uint64_t seed = 0; seed < 5; ++seed) check_config(def, 4, seed, sampled);
  const double dt = seconds_since(t0);
  const std::size_t total = full.checked + full.kinks;
  o.require(full.worst < kRelTol, "max rel err (all entries) " + fmt(full.worst));
  o.require(sampled.worst < kRelTol, "max rel err (default size) " + fmt(sampled.worst));
  o.require(full.kinks * 100 <= total, "too many L1 kinks skipped");
  o.require(dt < 60.0, "runtime");
  o.detail << full.checked << " entries over 5 seeds, max rel err " << fmt(full.worst) << " (" << full.kinks
           << " kink-skipped), default size " << sampled.checked << " sampled entries max rel err "
           << fmt(sampled.worst);
}

// --- 3: end-to-end direction ----------------------------------------------------

Eigen::MatrixXf stack_frames(const std::vector<SampleBuffer>& files, std::size_t frame_len) {
  std::vector<std::vector<float>> frames;
  for (const auto& f : files) {
    for (auto& fr : frame_split(f, frame_len).frames) frames.push_back(std::move(fr.samples));
  }
  return frames_to_matrix(frames, frame_len);
}

void end_to_end(Outcome& o) {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / ("throatline_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root / "clean");
  constexpr std::size_t kFiles = 25;
  constexpr double kSeconds = 5.0;
  for (std::size_t i = 0; i < kFiles; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03zu.wav", i);
    wav_write(synthetic_utterance(kSeconds, derive_file_seed(2024, i)), root / "clean" / name);
  }
  std::size_t extra = 0;
  if (const char* dir = std::getenv("THROATLINE_EXTRA_CORPUS")) {
    for (const auto& e : fs::directory_iterator(dir)) {
      std::string ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext != ".wav") continue;
      fs::copy_file(e.path(), root / "clean" / ("extra_" + e.path().filename().string()));
      ++extra;
    }
  }
  ChannelConfig ch;
  ch.seed = 7;
  const PairManifest all = make_pairs(root / "clean", root / "pairs", ch);

  // Every fifth file (by sorted name) is held out.
  PairManifest held;
  std::vector<SampleBuffer> train_clean, train_degraded;
  double total_s = 0.0;
  for (std::size_t i = 0; i < all.rows.size(); ++i) {
    const SampleBuffer c = wav_read(all.rows[i].clean);
    total_s += c.duration_s();
    if (i % 5 == 4) {
      held.rows.push_back(all.rows[i]);
      continue;
    }
    train_clean.push_back(c);
    train_degraded.push_back(wav_read(all.rows[i].degraded));
  }
  o.require(total_s >= 60.0, "paired audio shorter than 60 s");

  CodecConfig cfg;
  cfg.seed = 1;
  const Eigen::MatrixXf clean = stack_frames(train_clean, cfg.frame_len);
  const Eigen::MatrixXf degraded = stack_frames(train_degraded, cfg.frame_len);
  const auto tp = Clock::now();
  auto base = std::make_shared<const CodecModel>(pretrain(cfg, clean));
  const double pretrain_s = seconds_since(tp);
  o.require(pretrain_s <= 300.0, "pretraining exceeded 300 s");
  auto enh = std::make_shared<const EnhancerModel>(finetune_encoder(base, degraded, clean, cfg));

  const auto enhance = [&](const SampleBuffer& d) {
    EngineConfig ec;
    ec.active_enhancer = "codec:accept";
    Engine engine(ec);
    engine.register_enhancer(std::make_unique<CodecEnhancer>("codec:accept", enh));
    engine.start();
    return enhance_streaming(engine, d);
  };
  const metrics::MetricReport report = metrics::evaluate_corpus(held, enhance);
  fs::remove_all(root);
  o.require(report.enhanced.has_value() && report.degraded.count == held.rows.size(), "evaluation rows failed");
  if (!report.enhanced) return;
  const auto& d = report.degraded.mean;
  const auto& e = report.enhanced->mean;
  o.require(e.stoi >= d.stoi + 0.05, "STOI gain below 0.05");
  o.require(e.si_sdr_db > d.si_sdr_db, "SI-SDR not improved");
  o.detail << total_s << " s paired audio (" << extra << " extra files), " << held.rows.size()
           << " held-out files: STOI " << fmt(d.stoi) << " -> " << fmt(e.stoi) << ", SI-SDR " << fmt(d.si_sdr_db)
           << " -> " << fmt(e.si_sdr_db) << " dB, pretrain " << fmt(pretrain_s, 3) << " s, total "
           << fmt(seconds_since(t0), 3) << " s";
}

// --- 4: latency identity ---------------------------------------------------------

void latency_identity(Outcome& o) {
  EngineConfig a;
  a.input_buffer_ms = 0;
  a.output_buffer_ms = 0;
  EngineConfig b;
  b.input_buffer_ms = 32;
  b.output_buffer_ms = 32;
  const double pa = predicted_latency(a).end_to_end_ms;
  const double pb = predicted_latency(b).end_to_end_ms;
  o.require(pa == 160.0, "0/0 prediction " + fmt(pa));
  o.require(pb == 224.0, "32/32 prediction " + fmt(pb));
  o.detail << "predicted 160/224 ms = " << pa << "/" << pb << " ms; loopback measured";

  // 0.5 s of silence, then a tone: the first non-silent sample marks the edge.
  std::vector<float> sig(12000, 0.0f);
  const SampleBuffer t = tone(300.0, 0.5, 1.5);
  sig.insert(sig.end(), t.samples().begin() + 1, t.samples().end());
  const SampleBuffer input(sig, kDefaultSampleRate);
  for (const EngineConfig& cfg : {a, b}) {
    Engine engine(cfg);
    const LoopbackResult r = run_loopback(engine, input);
    const double predicted = predicted_latency(cfg).end_to_end_ms;
    if (!r.measured_ms) {
      o.require(false, "no measurement at " + fmt(cfg.input_buffer_ms) + " ms buffers");
      continue;
    }
    o.require(std::abs(*r.measured_ms - predicted) <= cfg.frame_ms(),
              "measured " + fmt(*r.measured_ms) + " vs " + fmt(predicted));
    o.detail << " " << fmt(*r.measured_ms, 5) << " (pred " << predicted << ")";
  }
  o.detail << " ms";
}

// --- 5: offline/online equivalence -----------------------------------------------

void offline_online(Outcome& o) {
  const SampleBuffer input = synthetic_utterance(10.0, 99);
  const auto model = std::make_shared<const CodecModel>(CodecModel::random_init(CodecConfig{}));
  const auto enh = std::make_shared<const EnhancerModel>(EnhancerModel::from_base(model));
  const auto make = [&](const std::string& id) -> std::unique_ptr<Enhancer> {
    if (id == "passthrough") return std::make_unique<PassthroughEnhancer>();
    if (id == "equalizer") return std::make_unique<EqualizerEnhancer>();
    return std::make_unique<CodecEnhancer>(id, enh);
  };
  const std::size_t delay = kPipelineDelayFrames * kDefaultFrameLen;
  for (const std::string id : {"passthrough", "equalizer", "codec:random"}) {
    EngineConfig cfg;
    cfg.active_enhancer = id;
    Engine engine(cfg);
    if (id != "passthrough") engine.register_enhancer(make(id));
    const SampleBuffer streamed = stream_simulated(engine, input, 700);
    auto reference_enhancer = make(id);
    const SampleBuffer reference = enhance_offline(*reference_enhancer, input);
    const std::size_t n = std::min(reference.size(), streamed.size() - delay);
    const bool same =
        n > 0 && std::memcmp(streamed.samples().data() + delay, reference.samples().data(), n * sizeof(float)) == 0;
    o.require(same && n + delay + kDefaultFrameLen > input.size(), id + " differs");
    o.detail << id << ": " << n << " samples " << (same ? "identical" : "DIFFERENT") << "; ";
  }
}

// --- 6: glitch-free toggle -------------------------------------------------------

double max_step(std::span<const float> x) {
  double m = 0;
  for (std::size_t i = 1; i < x.size(); ++i) m = std::max(m, std::abs(static_cast<double>(x[i]) - x[i - 1]));
  return m;
}

void glitch_free(Outcome& o) {
  const SampleBuffer t = tone(440.0, 0.5, 10.0);
  EngineConfig cfg;
  cfg.active_enhancer = "equalizer";
  const auto run = [&](bool toggle, EngineCounters& counters) {
    Engine engine(cfg);
    engine.register_enhancer(std::make_unique<EqualizerEnhancer>());
    std::vector<ControlEvent> events;
    if (toggle) {
      bool on = true;
      for (std::size_t at = 12000; at < t.size(); at += 12000, on = !on) {
        events.push_back({at, [on](Engine& e) { e.set_bypass(on); }});
      }
    }
    SampleBuffer out = stream_simulated(engine, t, 480, events);
    counters = engine.counters();
    return out;
  };
  EngineCounters steady{}, toggled{};
  const SampleBuffer eq = run(false, steady);
  const SampleBuffer out = run(true, toggled);
  // The tone starts at t = 0 with a slope discontinuity that the shelf turns
  // into a one-off transient; slopes are compared after it has settled.
  const std::size_t settle = kPipelineDelayFrames * kDefaultFrameLen + 2400;
  const auto tail = [&](const SampleBuffer& x) { return x.view().subspan(settle); };
  const double natural = std::max(max_step(tail(t)), max_step(tail(eq)));
  const double worst = max_step(tail(out));
  o.require(toggled.underruns == 0, "underruns " + std::to_string(toggled.underruns));
  o.require(toggled.crossfades >= 19, "expected 19 crossfades, saw " + std::to_string(toggled.crossfades));
  o.require(worst <= 1.1 * natural, "max step " + fmt(worst) + " > 1.1 x " + fmt(natural));
  o.detail << toggled.crossfades << " crossfades, 0 underruns, max step " << fmt(worst) << " vs natural "
           << fmt(natural) << " (raw " << fmt(max_step(tail(t))) << ", equalizer " << fmt(max_step(tail(eq)))
           << ", first " << settle << " samples excluded)";
}

// --- 7: real-time safety ---------------------------------------------------------

void realtime_safety(Outcome& o) {
  // Positive control: the probes must see a lock and an allocation.
  {
    std::mutex m;
    probe::allocations = 0;
    probe::blocking = 0;
    {
      probe::Counted c;
      std::lock_guard<std::mutex> lock(m);
      int* volatile p = new int(1);
      delete p;
    }
    o.require(probe::allocations.load() > 0 && probe::blocking.load() > 0, "probes did not fire on control");
  }

  EngineConfig cfg;
  cfg.active_enhancer = "equalizer";
  Engine engine(cfg);
  engine.register_enhancer(std::make_unique<EqualizerEnhancer>());
  engine.start();
  const SampleBuffer src = synthetic_utterance(2.0, 5);
  std::vector<float> block(480), sink(480);
  probe::allocations = 0;
  probe::blocking = 0;
  std::size_t calls = 0, pos = 0;
  for (int i = 0; i < 5000; ++i) {
    std::copy_n(src.samples().begin() + static_cast<std::ptrdiff_t>(pos), 480, block.begin());
    pos = (pos + 480) % (src.size() - 480);
    {
      probe::Counted c;
      engine.push_input(block);
    }
    engine.process_step();
    {
      probe::Counted c;
      engine.pull_output(sink);
    }
    calls += 2;
  }

  // Concurrent capture / worker / playback with the probes on the RT sides.
  std::atomic<bool> done{false};
  std::atomic<std::size_t> threaded_calls{0};
  std::thread worker([&] {
    while (!done.load()) {
      if (engine.process_step() == 0) std::this_thread::yield();
    }
  });
  const auto side = [&](bool capture) {
    std::vector<float> buf(480, 0.25f);
    for (int i = 0; i < 2500; ++i) {
      {
        probe::Counted c;
        if (capture) {
          engine.push_input(buf);
        } else {
          engine.pull_output(buf);
        }
      }
      threaded_calls.fetch_add(1);
      std::this_thread::sleep_for(std::chrono::microseconds(200));
    }
  };
  std::thread cap(side, true), play(side, false);
  cap.join();
  play.join();
  done = true;
  worker.join();
  calls += threaded_calls.load();
  const auto allocs = probe::allocations.load();
  const auto blocks = probe::blocking.load();
  o.require(calls >= 10000, "fewer than 10^4 calls");
  o.require(allocs == 0, std::to_string(allocs) + " allocations");
  o.require(blocks == 0, std::to_string(blocks) + " blocking calls");

  // Toy codec inference time per frame.
  const auto model = std::make_shared<const CodecModel>(CodecModel::random_init(CodecConfig{}));
  CodecEnhancer codec("codec:toy", std::make_shared<const EnhancerModel>(EnhancerModel::from_base(model)));
  std::vector<float> in(kDefaultFrameLen), out(kDefaultFrameLen);
  std::copy_n(src.samples().begin(), kDefaultFrameLen, in.begin());
  std::vector<double> ms;
  for (int i = 0; i < 200; ++i) {
    const auto t0 = Clock::now();
    codec.process(in, out);
    ms.push_back(seconds_since(t0) * 1000.0);
  }
  std::sort(ms.begin(), ms.end());
  const double p95 = ms[ms.size() * 95 / 100];
  const double budget = kDefaultFrameLen * 1000.0 / kDefaultSampleRate / 10.0;
  o.require(p95 < budget, "codec p95 " + fmt(p95) + " ms");
  o.detail << calls << " push/pull calls, " << allocs << " allocations, " << blocks
           << " blocking calls; codec p95 " << fmt(p95, 3) << " ms (budget " << budget << " ms)";
}

// --- 8: protocol conformance -----------------------------------------------------

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void protocol_conformance(Outcome& o) {
  using namespace protocol;
  std::size_t goldens = 0;
  const std::vector<std::pair<std::string, ControlMessage>> controls = {
      {"control_set_bypass_true.json", ControlMessage::set_bypass(true)},
      {"control_set_bypass_false.json", ControlMessage::set_bypass(false)},
      {"control_set_enhancer.json", ControlMessage::set_enhancer("codec:models/enh.bin")},
      {"control_set_buffer_ms.json", ControlMessage::set_buffer_ms(32.0, 12.5)},
      {"control_get_status.json", ControlMessage::get_status()},
  };
  for (const auto& [file, msg] : controls) {
    const std::string text = read_file(kGolden / file);
    o.require(to_json(msg) == text && parse_control(text) == msg, file);
    ++goldens;
  }

  LatencyReport lat;
  lat.frame_ms = 80.0;
  lat.inference_ms = 1.25;
  lat.input_buffer_ms = 32.0;
  lat.output_buffer_ms = 32.0;
  lat.end_to_end_ms = 224.0;
  LatencyReport measured = lat;
  measured.measured_end_to_end_ms = 231.5;
  StatusPayload st;
  st.enhancer = "equalizer";
  st.enhancers = {"passthrough", "equalizer", "codec:models/enh.bin"};
  st.input_ms = 32.0;
  st.output_ms = 0.0;
  st.frames_processed = 1234;
  st.overruns = 2;
  st.rt_violations = 1;
  st.dropped_columns = 7;
  st.controller = true;
  const std::vector<std::pair<std::string, TelemetryMessage>> telemetry = {
      {"telemetry_latency.json", TelemetryMessage::latency(lat)},
      {"telemetry_latency_measured.json", TelemetryMessage::latency(measured)},
      {"telemetry_status.json", TelemetryMessage::status(st)},
      {"telemetry_error.json", TelemetryMessage::error("busy: \"controller\" attached \\ \xc3\xbc")},
  };
  for (const auto& [file, msg] : telemetry) {
    const std::string text = read_file(kGolden / file);
    o.require(to_json(msg) == text && parse_telemetry(text) == msg, file);
    ++goldens;
  }

  std::vector<float> ramp(513);
  for (std::size_t k = 0; k < ramp.size(); ++k) ramp[k] = static_cast<float>(-80.0 * k / 512.0);
  const std::vector<std::pair<std::string, SpectrogramColumn>> cols = {
      {"column_raw_513.bin", {0, MonitorSource::kRaw, ramp}},
      {"column_enhanced_4.bin", {123456, MonitorSource::kEnhanced, {-80.0f, -12.5f, -0.25f, 0.0f}}},
      {"column_empty.bin", {4294967295u, MonitorSource::kEnhanced, {}}},
  };
  for (const auto& [file, col] : cols) {
    const std::string raw = read_file(kGolden / file);
    const std::vector<std::uint8_t> bytes(raw.begin(), raw.end());
    o.require(encode_column(col) == bytes && decode_column(bytes) == col, file);
    ++goldens;
  }

  // Binary parser fuzz: random frames and mutations of valid ones. Accepted
  // frames must re-encode to the same bytes.
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> byte(0, 255);
  std::size_t accepted = 0, inconsistent = 0;
  const auto valid = encode_column(cols[0].second);
  for (std::size_t i = 0; i < 100000; ++i) {
    std::vector<std::uint8_t> f;
    if (i % 2 == 0) {
      f.resize(rng() % 2200);
      for (auto& b : f) b = static_cast<std::uint8_t>(byte(rng));
      if (f.size() >= 4 && i % 4 == 0) std::memcpy(f.data(), "SPC1", 4);
    } else {
      f = valid;
      const std::size_t flips = 1 + rng() % 8;
      for (std::size_t k = 0; k < flips; ++k) f[rng() % f.size()] = static_cast<std::uint8_t>(byte(rng));
      if (rng() % 4 == 0) f.resize(rng() % (f.size() + 1));
    }
    const auto col = try_decode_column(f);
    if (col) {
      ++accepted;
      if (encode_column(*col) != f) ++inconsistent;
    }
  }
  o.require(inconsistent == 0, std::to_string(inconsistent) + " accepted frames re-encode differently");

  // Control parser fuzz: only FormatError may escape.
  std::size_t control_fuzz = 0, foreign = 0;
  const std::string seed_text = read_file(kGolden / "control_set_buffer_ms.json");
  for (std::size_t i = 0; i < 20000; ++i) {
    std::string s = seed_text;
    const std::size_t edits = 1 + rng() % 6;
    for (std::size_t k = 0; k < edits && !s.empty(); ++k) s[rng() % s.size()] = static_cast<char>(byte(rng));
    if (rng() % 3 == 0) s.resize(rng() % (s.size() + 1));
    try {
      (void)parse_control(s);
    } catch (const FormatError&) {
    } catch (...) {
      ++foreign;
    }
    ++control_fuzz;
  }
  o.require(foreign == 0, std::to_string(foreign) + " unexpected exception types");
  o.detail << goldens << " golden files round-trip; 100000 fuzzed frames (" << accepted
           << " accepted, 0 crashes); " << control_fuzz << " fuzzed control messages";
}

}  // namespace

// Arguments, when given, select criteria by number.
int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    void (*run)(Outcome&);
  };
  const Criterion criteria[] = {
      {1, "metric properties", metric_properties},
      {2, "gradient correctness", gradient_correctness},
      {3, "end-to-end enhancement direction", end_to_end},
      {4, "latency identity", latency_identity},
      {5, "offline/online equivalence", offline_online},
      {6, "glitch-free bypass toggle", glitch_free},
      {7, "real-time safety", realtime_safety},
      {8, "protocol conformance", protocol_conformance},
  };
  int failures = 0;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = Clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "[exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail.str()
              << " [" << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
