#include "throatline/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "throatline/dsp.hpp"
#include "throatline/errors.hpp"
#include "throatline/wav.hpp"

namespace throatline::metrics {
namespace {

constexpr int kStoiRate = 10000;
constexpr std::size_t kStoiWin = 256;
constexpr std::size_t kStoiHop = 128;
constexpr std::size_t kStoiFft = 512;
constexpr std::size_t kStoiSegment = 30;
constexpr double kStoiBetaDb = -15.0;
constexpr double kStoiDynRangeDb = 40.0;
constexpr double kEps = 1e-12;

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

std::vector<double> to_double(const SampleBuffer& b) {
  return {b.samples().begin(), b.samples().end()};
}

std::size_t frame_count(std::size_t n) {
  return n < kStoiWin ? 0 : (n - kStoiWin) / kStoiHop + 1;
}

// Drops frames more than 40 dB below the loudest reference frame from both
// signals and overlap-adds the survivors.
void remove_silent_frames(std::vector<double>& x, std::vector<double>& y,
                          const std::vector<double>& w) {
  const std::size_t nf = frame_count(x.size());
  std::vector<double> energy_db(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    double e = 0.0;
    for (std::size_t i = 0; i < kStoiWin; ++i) {
      const double v = w[i] * x[f * kStoiHop + i];
      e += v * v;
    }
    energy_db[f] = 20.0 * std::log10(std::sqrt(e) + kEps);
  }
  const double top = nf ? *std::max_element(energy_db.begin(), energy_db.end()) : 0.0;
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < nf; ++f) {
    if (energy_db[f] > top - kStoiDynRangeDb) keep.push_back(f);
  }
  const std::size_t out_len = keep.empty() ? 0 : (keep.size() - 1) * kStoiHop + kStoiWin;
  std::vector<double> xo(out_len, 0.0), yo(out_len, 0.0);
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const std::size_t src = keep[j] * kStoiHop;
    const std::size_t dst = j * kStoiHop;
    for (std::size_t i = 0; i < kStoiWin; ++i) {
      xo[dst + i] += w[i] * x[src + i];
      yo[dst + i] += w[i] * y[src + i];
    }
  }
  x = std::move(xo);
  y = std::move(yo);
}

// Band envelopes: bands x frames.
std::vector<std::vector<double>> band_envelopes(const std::vector<double>& x,
                                                const std::vector<double>& w,
                                                const dsp::Filterbank& fb) {
  const std::size_t nf = frame_count(x.size());
  std::vector<std::vector<double>> env(fb.n_bands(), std::vector<double>(nf));
  std::vector<double> seg(kStoiWin);
  std::vector<double> power(kStoiFft / 2 + 1);
  for (std::size_t f = 0; f < nf; ++f) {
    for (std::size_t i = 0; i < kStoiWin; ++i) seg[i] = w[i] * x[f * kStoiHop + i];
    const auto spec = dsp::rfft(seg, kStoiFft);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = std::norm(spec[k]);
    const auto bands = fb.apply(power);
    for (std::size_t b = 0; b < bands.size(); ++b) env[b][f] = std::sqrt(bands[b]);
  }
  return env;
}

std::vector<double> stoi_band_scores(const SampleBuffer& estimate, const SampleBuffer& reference) {
  require_same_length(estimate.size(), reference.size(), "stoi");
  std::vector<double> x = to_double(resample(reference, kStoiRate));
  std::vector<double> y = to_double(resample(estimate, kStoiRate));
  const auto w = dsp::hann_window(kStoiWin);
  remove_silent_frames(x, y, w);
  if (frame_count(x.size()) < kStoiSegment) {
    throw InsufficientSignalError("stoi: fewer than 30 frames after silence removal");
  }
  const auto fb = dsp::third_octave_filterbank(kStoiFft / 2 + 1, kStoiRate);
  const auto xe = band_envelopes(x, w, fb);
  const auto ye = band_envelopes(y, w, fb);
  const std::size_t nf = xe.front().size();
  const double clip = 1.0 + std::pow(10.0, -kStoiBetaDb / 20.0);

  std::vector<double> score(fb.n_bands(), 0.0);
  std::vector<double> xs(kStoiSegment), ys(kStoiSegment);
  const std::size_t n_segments = nf - kStoiSegment + 1;
  for (std::size_t m = kStoiSegment; m <= nf; ++m) {
    for (std::size_t b = 0; b < fb.n_bands(); ++b) {
      double nx = 0.0, ny = 0.0;
      for (std::size_t i = 0; i < kStoiSegment; ++i) {
        xs[i] = xe[b][m - kStoiSegment + i];
        ys[i] = ye[b][m - kStoiSegment + i];
        nx += xs[i] * xs[i];
        ny += ys[i] * ys[i];
      }
      const double alpha = std::sqrt(nx) / (std::sqrt(ny) + kEps);
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < kStoiSegment; ++i) {
        ys[i] = std::min(alpha * ys[i], xs[i] * clip);
        mx += xs[i];
        my += ys[i];
      }
      mx /= kStoiSegment;
      my /= kStoiSegment;
      double sxy = 0.0, sxx = 0.0, syy = 0.0;
      for (std::size_t i = 0; i < kStoiSegment; ++i) {
        const double a = xs[i] - mx, c = ys[i] - my;
        sxy += a * c;
        sxx += a * a;
        syy += c * c;
      }
      score[b] += sxy / ((std::sqrt(sxx) + kEps) * (std::sqrt(syy) + kEps));
    }
  }
  for (double& s : score) s /= static_cast<double>(n_segments);
  return score;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

}  // namespace

double si_sdr(std::span<const float> estimate, std::span<const float> reference) {
  require_same_length(estimate.size(), reference.size(), "si_sdr");
  double rr = 0.0, er = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    rr += static_cast<double>(reference[i]) * reference[i];
    er += static_cast<double>(estimate[i]) * reference[i];
  }
  if (rr == 0.0) throw UndefinedReferenceError("si_sdr: reference is all zeros");
  const double a = er / rr;
  double target = 0.0, residual = 0.0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double s = a * reference[i];
    const double r = estimate[i] - s;
    target += s * s;
    residual += r * r;
  }
  if (residual < 1e-20 * target) return kSiSdrCapDb;
  if (target == 0.0) return -kSiSdrCapDb;  // estimate orthogonal to the reference
  return std::clamp(10.0 * std::log10(target / residual), -kSiSdrCapDb, kSiSdrCapDb);
}

double si_sdr(const SampleBuffer& estimate, const SampleBuffer& reference) {
  return si_sdr(estimate.view(), reference.view());
}

double stoi(const SampleBuffer& estimate, const SampleBuffer& reference) {
  const auto bands = stoi_band_scores(estimate, reference);
  double acc = 0.0;
  for (const double b : bands) acc += b;
  return acc / static_cast<double>(bands.size());
}

std::vector<double> stoi_bands(const SampleBuffer& estimate, const SampleBuffer& reference) {
  return stoi_band_scores(estimate, reference);
}

double lsd(std::span<const float> estimate, std::span<const float> reference) {
  require_same_length(estimate.size(), reference.size(), "lsd");
  constexpr std::size_t win = 1024, hop = 256;
  const auto pe = dsp::power_spectrogram(dsp::stft(estimate, win, hop));
  const auto pr = dsp::power_spectrogram(dsp::stft(reference, win, hop));
  if (pr.columns.empty()) throw InsufficientSignalError("lsd: input shorter than one window");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < pr.columns.size(); ++t) {
    for (std::size_t k = 0; k < pr.n_bins; ++k) {
      const double d = 10.0 * std::log10(pe.columns[t][k] + 1e-10) -
                       10.0 * std::log10(pr.columns[t][k] + 1e-10);
      acc += d * d;
      ++count;
    }
  }
  return std::sqrt(acc / static_cast<double>(count));
}

double lsd(const SampleBuffer& estimate, const SampleBuffer& reference) {
  return lsd(estimate.view(), reference.view());
}

MetricTriple evaluate_pair(const SampleBuffer& estimate, const SampleBuffer& reference) {
  return {si_sdr(estimate, reference), stoi(estimate, reference), lsd(estimate, reference)};
}

Aggregate aggregate(const std::vector<MetricTriple>& values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  const double n = static_cast<double>(values.size());
  for (const auto& v : values) {
    a.mean.si_sdr_db += v.si_sdr_db / n;
    a.mean.stoi += v.stoi / n;
    a.mean.lsd_db += v.lsd_db / n;
  }
  for (const auto& v : values) {
    a.stddev.si_sdr_db += std::pow(v.si_sdr_db - a.mean.si_sdr_db, 2) / n;
    a.stddev.stoi += std::pow(v.stoi - a.mean.stoi, 2) / n;
    a.stddev.lsd_db += std::pow(v.lsd_db - a.mean.lsd_db, 2) / n;
  }
  a.stddev.si_sdr_db = std::sqrt(a.stddev.si_sdr_db);
  a.stddev.stoi = std::sqrt(a.stddev.stoi);
  a.stddev.lsd_db = std::sqrt(a.stddev.lsd_db);
  return a;
}

MetricReport evaluate_corpus(const PairManifest& manifest, const EnhanceFn& enhancer) {
  MetricReport report;
  std::vector<MetricTriple> deg, enh;
  for (const auto& row : manifest.rows) {
    ReportRow r;
    r.file = row.clean.filename().string();
    try {
      const SampleBuffer clean = wav_read(row.clean);
      SampleBuffer degraded = wav_read(row.degraded);
      if (degraded.sample_rate() != clean.sample_rate()) {
        degraded = resample(degraded, clean.sample_rate());
      }
      const std::size_t n = std::min(clean.size(), degraded.size());
      const auto trim = [n](const SampleBuffer& b) {
        return SampleBuffer({b.samples().begin(), b.samples().begin() + static_cast<std::ptrdiff_t>(n)},
                            b.sample_rate());
      };
      const SampleBuffer ref = trim(clean);
      const SampleBuffer d = trim(degraded);
      MetricTriple dm = evaluate_pair(d, ref);
      std::optional<MetricTriple> em;
      if (enhancer) {
        const SampleBuffer e = enhancer(d);
        if (e.size() != n) throw ShapeError("enhancer changed the signal length");
        em = evaluate_pair(e, ref);
      }
      r.degraded = dm;
      r.enhanced = em;
      r.n_samples = n;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    report.rows.push_back(std::move(r));
  }
  std::stable_sort(report.rows.begin(), report.rows.end(),
                   [](const ReportRow& a, const ReportRow& b) { return a.file < b.file; });
  for (const auto& r : report.rows) {
    if (!r.error.empty()) continue;
    deg.push_back(*r.degraded);
    if (r.enhanced) enh.push_back(*r.enhanced);
    report.n_samples += r.n_samples;
  }
  report.degraded = aggregate(deg);
  if (enhancer) report.enhanced = aggregate(enh);
  return report;
}

void MetricReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write report " + path.string());
  out << kReportCsvHeader << '\n';
  const auto cells = [](const std::optional<MetricTriple>& m) {
    if (!m) return std::string(",,");
    return fmt(m->si_sdr_db) + ',' + fmt(m->stoi) + ',' + fmt(m->lsd_db);
  };
  for (const auto& r : rows) {
    std::string name = r.file;
    if (name.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (const char c : name) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      name = q + "\"";
    }
    out << name << ',' << cells(r.degraded) << ',' << cells(r.enhanced) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string MetricReport::summary_json() const {
  using nlohmann::json;
  const auto block = [](const Aggregate& a) {
    return json{{"count", a.count},
                {"si_sdr_db", {{"mean", a.mean.si_sdr_db}, {"std", a.stddev.si_sdr_db}}},
                {"stoi", {{"mean", a.mean.stoi}, {"std", a.stddev.stoi}}},
                {"lsd_db", {{"mean", a.mean.lsd_db}, {"std", a.stddev.lsd_db}}}};
  };
  json j{{"files", rows.size()}, {"n_samples", n_samples}, {"degraded", block(degraded)}};
  if (enhanced) j["enhanced"] = block(*enhanced);
  json errors = json::array();
  for (const auto& r : rows) {
    if (!r.error.empty()) errors.push_back({{"file", r.file}, {"error", r.error}});
  }
  j["errors"] = errors;
  return j.dump(2);
}

std::string MetricReport::summary_table() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "system" << std::right << std::setw(10) << "STOI"
     << std::setw(12) << "SI-SDR" << std::setw(10) << "LSD" << std::setw(8) << "files" << '\n';
  const auto line = [&os](const char* name, const Aggregate& a) {
    os << std::left << std::setw(12) << name << std::right << std::fixed << std::setprecision(3)
       << std::setw(10) << a.mean.stoi << std::setprecision(2) << std::setw(12)
       << a.mean.si_sdr_db << std::setw(10) << a.mean.lsd_db << std::setw(8) << a.count << '\n';
  };
  line("degraded", degraded);
  if (enhanced) line("enhanced", *enhanced);
  return os.str();
}

}  // namespace throatline::metrics
