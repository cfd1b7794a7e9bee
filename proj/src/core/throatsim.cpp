#include "throatline/throatsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "throatline/dsp.hpp"
#include "throatline/errors.hpp"
#include "throatline/hash.hpp"
#include "throatline/wav.hpp"

namespace throatline {
namespace {

namespace fs = std::filesystem;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double mean_power(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (const double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

void ChannelConfig::validate(int sample_rate) const {
  const double nyquist = sample_rate / 2.0;
  if (!(cutoff_hz > 0.0 && cutoff_hz < nyquist)) {
    throw ParameterError("cutoff_hz must lie in (0, sample_rate/2)");
  }
  if (filter_order <= 0 || filter_order % 2 != 0) {
    throw ParameterError("filter_order must be a positive even integer");
  }
  if (std::isnan(phys_noise_snr_db) || phys_noise_snr_db == -kNoNoise) {
    throw ParameterError("phys_noise_snr_db must be finite or +inf");
  }
  if (std::isnan(sensor_noise_snr_db) || sensor_noise_snr_db == -kNoNoise) {
    throw ParameterError("sensor_noise_snr_db must be finite or +inf");
  }
  const auto [low, high] = phys_noise_band_hz;
  if (!(low > 0.0 && low < high && high < nyquist)) {
    throw ParameterError("phys_noise_band_hz must satisfy 0 < low < high < sample_rate/2");
  }
  if (!(burst_rate_hz >= 0.0) || !std::isfinite(burst_rate_hz)) {
    throw ParameterError("burst_rate_hz must be finite and non-negative");
  }
}

std::string ChannelConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "cutoff_hz=" << cutoff_hz << ";filter_order=" << filter_order
     << ";phys_noise_snr_db=" << phys_noise_snr_db
     << ";phys_noise_band_hz=" << phys_noise_band_hz.first << ','
     << phys_noise_band_hz.second << ";burst_rate_hz=" << burst_rate_hz
     << ";sensor_noise_snr_db=" << sensor_noise_snr_db << ";seed=" << seed;
  return os.str();
}

std::string ChannelConfig::hash() const {
  const auto digest = sha256(canonical());
  return to_hex(std::span(digest).first(8));
}

ChannelOutput simulate_channel_detailed(const SampleBuffer& clean,
                                        const ChannelConfig& cfg) {
  const int rate = clean.sample_rate();
  cfg.validate(rate);
  const std::size_t n = clean.size();

  std::vector<double> body(clean.samples().begin(), clean.samples().end());
  for (const auto& section : dsp::butterworth_lowpass(cfg.cutoff_hz, cfg.filter_order, rate)) {
    dsp::Biquad bq(section);
    for (double& v : body) v = bq.process(v);
  }
  const double signal_power = mean_power(body);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Physiological bursts: Poisson onsets, 100-400 ms half-cosine envelopes,
  // band-limited white noise.
  std::vector<double> bursts(n, 0.0);
  if (std::isfinite(cfg.phys_noise_snr_db) && cfg.burst_rate_hz > 0.0 && signal_power > 0.0) {
    std::exponential_distribution<double> gap(cfg.burst_rate_hz);
    std::uniform_real_distribution<double> length_s(0.1, 0.4);
    double t = 0.0;
    for (;;) {
      t += gap(rng);
      const auto start = static_cast<std::size_t>(t * rate);
      if (start >= n) break;
      const auto len = std::min(static_cast<std::size_t>(length_s(rng) * rate), n - start);
      for (std::size_t i = 0; i < len; ++i) {
        const double env = std::sin(std::numbers::pi * static_cast<double>(i) /
                                    static_cast<double>(len));
        bursts[start + i] += gauss(rng) * env;
      }
    }
    dsp::Biquad hp(dsp::biquad_highpass(cfg.phys_noise_band_hz.first, std::numbers::sqrt2 / 2.0, rate));
    dsp::Biquad lp(dsp::biquad_lowpass(cfg.phys_noise_band_hz.second, std::numbers::sqrt2 / 2.0, rate));
    for (double& v : bursts) v = lp.process(hp.process(v));
    const double burst_power = mean_power(bursts);
    if (burst_power > 0.0) {
      const double gain =
          std::sqrt(signal_power / (burst_power * std::pow(10.0, cfg.phys_noise_snr_db / 10.0)));
      for (double& v : bursts) v *= gain;
    }
  }

  // Sensor self-noise: continuous white floor.
  double floor_std = 0.0;
  if (std::isfinite(cfg.sensor_noise_snr_db) && signal_power > 0.0) {
    floor_std = std::sqrt(signal_power / std::pow(10.0, cfg.sensor_noise_snr_db / 10.0));
  }

  ChannelOutput out;
  std::vector<float> mixed(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = body[i] + bursts[i];
    if (floor_std > 0.0) v += floor_std * gauss(rng);
    if (v > 1.0 || v < -1.0) {
      ++out.clamp_events;
      v = std::clamp(v, -1.0, 1.0);
    }
    mixed[i] = static_cast<float>(v);
  }
  out.signal = SampleBuffer(std::move(mixed), rate);
  return out;
}

SampleBuffer simulate_channel(const SampleBuffer& clean, const ChannelConfig& cfg) {
  return simulate_channel_detailed(clean, cfg).signal;
}

std::uint64_t derive_file_seed(std::uint64_t seed, std::size_t file_index) {
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(file_index) + 1));
}

void PairManifest::write_csv(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "clean,degraded,seed,cfg_hash\n";
  const fs::path base = path.parent_path();
  for (const auto& row : rows) {
    const auto rel = [&](const fs::path& p) {
      std::error_code ec;
      const auto r = fs::relative(p, base.empty() ? fs::path(".") : base, ec);
      return (ec || r.empty()) ? p.string() : r.generic_string();
    };
    out << csv_field(rel(row.clean)) << ',' << csv_field(rel(row.degraded)) << ','
        << row.seed << ',' << csv_field(row.cfg_hash) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

PairManifest PairManifest::read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty manifest " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "clean,degraded,seed,cfg_hash") {
    throw FormatError("unexpected manifest header in " + path.string());
  }
  const fs::path base = path.parent_path();
  PairManifest m;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw FormatError("manifest row must have 4 fields: " + line);
    PairRow row;
    const auto resolve = [&](const std::string& s) {
      fs::path p(s);
      return p.is_absolute() ? p : base / p;
    };
    row.clean = resolve(f[0]);
    row.degraded = resolve(f[1]);
    try {
      row.seed = std::stoull(f[2]);
    } catch (const std::exception&) {
      throw FormatError("bad seed in manifest row: " + line);
    }
    row.cfg_hash = f[3];
    m.rows.push_back(std::move(row));
  }
  return m;
}

PairManifest make_pairs(const fs::path& corpus_dir, const fs::path& out_dir,
                        const ChannelConfig& cfg) {
  cfg.validate(kDefaultSampleRate);
  std::vector<fs::path> inputs;
  if (fs::is_directory(corpus_dir)) {
    for (const auto& entry : fs::directory_iterator(corpus_dir)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      if (ext == ".wav") inputs.push_back(entry.path());
    }
  }
  if (inputs.empty()) {
    throw EmptyCorpusError("no WAV files found in " + corpus_dir.string());
  }
  std::sort(inputs.begin(), inputs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  fs::create_directories(out_dir / "degraded");
  PairManifest manifest;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    SampleBuffer clean = wav_read(inputs[i]);
    fs::path clean_path = fs::absolute(inputs[i]);
    if (clean.sample_rate() != kDefaultSampleRate) {
      clean = resample(clean, kDefaultSampleRate);
      fs::create_directories(out_dir / "clean");
      clean_path = out_dir / "clean" / inputs[i].filename();
      wav_write(clean, clean_path, WavEncoding::kFloat32);
    }
    ChannelConfig file_cfg = cfg;
    file_cfg.seed = derive_file_seed(cfg.seed, i);
    const fs::path degraded_path = out_dir / "degraded" / inputs[i].filename();
    wav_write(simulate_channel(clean, file_cfg), degraded_path, WavEncoding::kFloat32);
    manifest.rows.push_back({clean_path, degraded_path, file_cfg.seed, cfg.hash()});
  }
  manifest.write_csv(out_dir / "manifest.csv");
  return PairManifest::read_csv(out_dir / "manifest.csv");
}

}  // namespace throatline
