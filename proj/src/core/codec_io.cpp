#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "throatline/codec.hpp"
#include "throatline/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; add byte swapping for this host");

namespace throatline {
namespace {

constexpr char kCodecMagic[4] = {'T', 'L', 'C', '1'};
constexpr char kEnhancerMagic[4] = {'T', 'L', 'E', '1'};
constexpr std::size_t kConfigWords = 18;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void f32(float v) { bytes(&v, 4); }

  // Row-major float32.
  void matrix(const Eigen::MatrixXf& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) f32(m(r, c));
    }
  }
  void vector(const Eigen::VectorXf& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) f32(v(i));
  }
  void mlp(const Mlp& m) {
    matrix(m.w1);
    vector(m.b1);
    matrix(m.w2);
    vector(m.b2);
  }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  void bytes(void* p, std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("model file truncated");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, 4);
    if (!std::isfinite(v)) throw FormatError("model file holds a non-finite parameter");
    return v;
  }
  void matrix(Eigen::MatrixXf& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = f32();
    }
  }
  void vector(Eigen::VectorXf& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = f32();
  }
  void mlp(Mlp& m) {
    matrix(m.w1);
    vector(m.b1);
    matrix(m.w2);
    vector(m.b2);
  }
  void expect_end() const {
    if (pos_ != in_.size()) throw FormatError("trailing bytes in model file");
  }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const CodecConfig& c) {
  w.u32(c.frame_len);
  w.u32(c.embed_dim);
  w.u32(c.hidden_dim);
  w.u32(c.num_quantizers);
  w.u32(c.codebook_size);
  w.u32(static_cast<std::uint32_t>(c.seed & 0xFFFFFFFFu));
  w.u32(static_cast<std::uint32_t>(c.seed >> 32));
  w.f32(c.learn_rate);
  w.f32(c.momentum);
  w.u32(c.batch_size);
  w.u32(c.epochs);
  w.f32(c.ema_decay);
  w.u32(c.mel_bands);
  w.f32(c.mel_weight);
  w.f32(c.mel_floor);
  w.u32(c.quantizer_warmup_epochs);
  w.u32(static_cast<std::uint32_t>(c.optimizer));
  w.u32(c.sample_rate);
}

CodecConfig read_config(Reader& r) {
  CodecConfig c;
  c.frame_len = r.u32();
  c.embed_dim = r.u32();
  c.hidden_dim = r.u32();
  c.num_quantizers = r.u32();
  c.codebook_size = r.u32();
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  c.seed = lo | (hi << 32);
  c.learn_rate = r.f32();
  c.momentum = r.f32();
  c.batch_size = r.u32();
  c.epochs = r.u32();
  c.ema_decay = r.f32();
  c.mel_bands = r.u32();
  c.mel_weight = r.f32();
  c.mel_floor = r.f32();
  c.quantizer_warmup_epochs = r.u32();
  c.optimizer = static_cast<OptimizerKind>(r.u32());
  c.sample_rate = r.u32();
  try {
    c.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("model file config invalid: ") + e.what());
  }
  // Guard against absurd shapes before allocating.
  const std::uint64_t params =
      2ull * c.frame_len * c.hidden_dim + 2ull * c.hidden_dim * c.embed_dim +
      static_cast<std::uint64_t>(c.num_quantizers) * c.codebook_size * c.embed_dim;
  if (params > (1ull << 31)) throw FormatError("model file declares an implausible size");
  return c;
}

void check_magic(Reader& r, const char (&magic)[4], std::uint32_t version) {
  char m[4];
  r.bytes(m, 4);
  if (std::memcmp(m, magic, 4) != 0) throw FormatError("bad model file magic");
  const auto v = r.u32();
  if (v != version) throw FormatError("unsupported model file version " + std::to_string(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const CodecModel& model) {
  Writer w;
  w.bytes(kCodecMagic, 4);
  w.u32(CodecModel::kVersion);
  write_config(w, model.config);
  w.mlp(model.encoder);
  w.mlp(model.decoder);
  for (const auto& cb : model.codebooks) {
    // K x embed_dim row-major: one code after another.
    for (Eigen::Index k = 0; k < cb.cols(); ++k) {
      for (Eigen::Index d = 0; d < cb.rows(); ++d) w.f32(cb(d, k));
    }
  }
  return w.take();
}

CodecModel deserialize_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  check_magic(r, kCodecMagic, CodecModel::kVersion);
  CodecModel m = CodecModel::zeros(read_config(r));
  r.mlp(m.encoder);
  r.mlp(m.decoder);
  for (auto& cb : m.codebooks) {
    for (Eigen::Index k = 0; k < cb.cols(); ++k) {
      for (Eigen::Index d = 0; d < cb.rows(); ++d) cb(d, k) = r.f32();
    }
    if (!cb.col(kZeroCode).isZero(0.0f)) throw FormatError("codec file: code 0 must be the zero vector");
  }
  r.expect_end();
  return m;
}

void save_model(const CodecModel& model, const std::filesystem::path& path) {
  write_file(path, serialize_model(model));
}

CodecModel load_model(const std::filesystem::path& path) {
  return deserialize_model(read_file(path));
}

std::vector<std::uint8_t> serialize_enhancer(const EnhancerModel& enhancer) {
  if (!enhancer.base) throw ParameterError("enhancer has no base codec");
  Writer w;
  w.bytes(kEnhancerMagic, 4);
  w.u32(EnhancerModel::kVersion);
  const auto h = enhancer.base->hash();
  w.bytes(h.data(), h.size());
  write_config(w, enhancer.base->config);
  w.mlp(enhancer.encoder);
  return w.take();
}

EnhancerModel deserialize_enhancer(std::span<const std::uint8_t> bytes,
                                   std::shared_ptr<const CodecModel> base) {
  if (!base) throw ParameterError("enhancer needs a base codec");
  Reader r(bytes);
  check_magic(r, kEnhancerMagic, EnhancerModel::kVersion);
  Sha256Digest recorded;
  r.bytes(recorded.data(), recorded.size());
  if (recorded != base->hash()) {
    throw ConfigurationError("enhancer was trained against a different base codec");
  }
  const CodecConfig cfg = read_config(r);
  if (cfg.frame_len != base->config.frame_len || cfg.embed_dim != base->config.embed_dim ||
      cfg.hidden_dim != base->config.hidden_dim) {
    throw FormatError("enhancer shape does not match base codec");
  }
  EnhancerModel e = EnhancerModel::from_base(std::move(base));
  r.mlp(e.encoder);
  r.expect_end();
  return e;
}

void save_enhancer(const EnhancerModel& enhancer, const std::filesystem::path& path) {
  write_file(path, serialize_enhancer(enhancer));
}

EnhancerModel load_enhancer(const std::filesystem::path& path,
                            std::shared_ptr<const CodecModel> base) {
  return deserialize_enhancer(read_file(path), std::move(base));
}

ModelFileKind peek_model_kind(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char m[4] = {};
  in.read(m, 4);
  if (in.gcount() == 4 && std::memcmp(m, kCodecMagic, 4) == 0) return ModelFileKind::kCodec;
  if (in.gcount() == 4 && std::memcmp(m, kEnhancerMagic, 4) == 0) return ModelFileKind::kEnhancer;
  return ModelFileKind::kUnknown;
}

Sha256Digest enhancer_base_hash(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes);
  check_magic(r, kEnhancerMagic, EnhancerModel::kVersion);
  Sha256Digest h;
  r.bytes(h.data(), h.size());
  return h;
}

Sha256Digest parameter_hash(const Mlp& mlp) {
  Writer w;
  w.mlp(mlp);
  const auto bytes = w.take();
  return sha256(bytes);
}

}  // namespace throatline
