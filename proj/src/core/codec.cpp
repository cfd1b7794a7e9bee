#include <cmath>
#include <limits>
#include <random>

#include "throatline/codec.hpp"
#include "throatline/errors.hpp"

namespace throatline {
namespace {

void init_uniform(Mlp& m, std::mt19937_64& rng) {
  const auto fill = [&rng](float* data, std::size_t n, std::size_t fan_in) {
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    std::uniform_real_distribution<float> u(-bound, bound);
    for (std::size_t i = 0; i < n; ++i) data[i] = u(rng);
  };
  fill(m.w1.data(), static_cast<std::size_t>(m.w1.size()), m.in_dim());
  fill(m.b1.data(), static_cast<std::size_t>(m.b1.size()), m.in_dim());
  fill(m.w2.data(), static_cast<std::size_t>(m.w2.size()), m.hidden_dim());
  fill(m.b2.data(), static_cast<std::size_t>(m.b2.size()), m.hidden_dim());
}

}  // namespace

void CodecConfig::validate() const {
  if (frame_len == 0 || embed_dim == 0 || hidden_dim == 0 || num_quantizers == 0 ||
      codebook_size == 0 || batch_size == 0 || mel_bands == 0 || sample_rate == 0) {
    throw ParameterError("codec dimensions must be positive");
  }
  if (codebook_size < 2) throw ParameterError("codebook_size must be at least 2 (code 0 is reserved)");
  if (!(ema_decay > 0.0f && ema_decay < 1.0f)) {
    throw ParameterError("ema_decay must lie in (0, 1)");
  }
  if (!(learn_rate > 0.0f) || !std::isfinite(learn_rate)) {
    throw ParameterError("learn_rate must be positive");
  }
  if (!(momentum >= 0.0f && momentum < 1.0f)) {
    throw ParameterError("momentum must lie in [0, 1)");
  }
  if (!(mel_weight >= 0.0f) || !std::isfinite(mel_weight) || !(mel_floor > 0.0f)) {
    throw ParameterError("mel_weight must be >= 0 and mel_floor > 0");
  }
  if (optimizer != OptimizerKind::kSgdMomentum && optimizer != OptimizerKind::kAdam) {
    throw ParameterError("unknown optimizer");
  }
}

CodecModel CodecModel::zeros(const CodecConfig& cfg) {
  cfg.validate();
  CodecModel m;
  m.config = cfg;
  m.encoder = Mlp::zeros(cfg.frame_len, cfg.hidden_dim, cfg.embed_dim);
  m.decoder = Mlp::zeros(cfg.embed_dim, cfg.hidden_dim, cfg.frame_len);
  m.codebooks.assign(cfg.num_quantizers,
                     Eigen::MatrixXf::Zero(cfg.embed_dim, cfg.codebook_size));
  return m;
}

CodecModel CodecModel::random_init(const CodecConfig& cfg) {
  CodecModel m = zeros(cfg);
  std::mt19937_64 rng(cfg.seed);
  init_uniform(m.encoder, rng);
  init_uniform(m.decoder, rng);
  std::normal_distribution<float> g(0.0f, 0.1f);
  for (auto& cb : m.codebooks) {
    for (Eigen::Index i = 0; i < cb.size(); ++i) cb.data()[i] = g(rng);
    cb.col(kZeroCode).setZero();
  }
  return m;
}

Sha256Digest CodecModel::hash() const {
  const auto bytes = serialize_model(*this);
  return sha256(bytes);
}

Embedding encode(const CodecModel& model, std::span<const float> frame) {
  if (frame.size() != model.config.frame_len) {
    throw ShapeError("encode: frame length " + std::to_string(frame.size()) +
                     " != " + std::to_string(model.config.frame_len));
  }
  const Eigen::Map<const Eigen::VectorXf> x(frame.data(),
                                            static_cast<Eigen::Index>(frame.size()));
  return codec_math::mlp_forward<float>(model.encoder, x, nullptr);
}

Quantized quantize(const CodecModel& model, const Embedding& embedding,
                   std::size_t levels) {
  const std::size_t q_max = model.codebooks.size();
  const std::size_t n_levels = levels == 0 ? q_max : std::min(levels, q_max);
  if (embedding.size() != static_cast<Eigen::Index>(model.config.embed_dim)) {
    throw ShapeError("quantize: embedding dimension mismatch");
  }
  Quantized out;
  out.tokens.indices.reserve(n_levels);
  out.embedding = Embedding::Zero(embedding.size());
  Embedding residual = embedding;
  for (std::size_t q = 0; q < n_levels; ++q) {
    const Eigen::MatrixXf& cb = model.codebooks[q];
    Eigen::Index best = 0;
    float best_d = std::numeric_limits<float>::infinity();
    for (Eigen::Index k = 0; k < cb.cols(); ++k) {
      const float d = (cb.col(k) - residual).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    out.tokens.indices.push_back(static_cast<std::uint32_t>(best));
    out.embedding += cb.col(best);
    residual -= cb.col(best);
  }
  return out;
}

Embedding dequantize(const CodecModel& model, const TokenFrame& tokens) {
  if (tokens.indices.size() > model.codebooks.size()) {
    throw ShapeError("dequantize: more indices than quantizer levels");
  }
  Embedding e = Embedding::Zero(model.config.embed_dim);
  for (std::size_t q = 0; q < tokens.indices.size(); ++q) {
    const auto k = tokens.indices[q];
    if (k >= model.config.codebook_size) throw RangeError("dequantize: index out of range");
    e += model.codebooks[q].col(k);
  }
  return e;
}

std::vector<float> decode(const CodecModel& model, const Embedding& embedding) {
  if (embedding.size() != static_cast<Eigen::Index>(model.config.embed_dim)) {
    throw ShapeError("decode: embedding dimension mismatch");
  }
  const Eigen::MatrixXf y = codec_math::mlp_forward<float>(model.decoder, embedding, nullptr);
  return {y.data(), y.data() + y.size()};
}

Eigen::MatrixXf encode_batch(const Mlp& encoder, const Eigen::MatrixXf& frames) {
  if (frames.rows() != static_cast<Eigen::Index>(encoder.in_dim())) {
    throw ShapeError("encode_batch: frame length mismatch");
  }
  return codec_math::mlp_forward<float>(encoder, frames, nullptr);
}

Eigen::MatrixXf quantize_batch(const CodecModel& model, const Eigen::MatrixXf& embeddings) {
  Eigen::MatrixXf out(embeddings.rows(), embeddings.cols());
  for (Eigen::Index c = 0; c < embeddings.cols(); ++c) {
    out.col(c) = quantize(model, embeddings.col(c)).embedding;
  }
  return out;
}

Eigen::MatrixXf frames_to_matrix(const std::vector<std::vector<float>>& frames,
                                 std::size_t frame_len) {
  Eigen::MatrixXf m(static_cast<Eigen::Index>(frame_len),
                    static_cast<Eigen::Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != frame_len) throw ShapeError("frames_to_matrix: ragged frames");
    m.col(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXf>(frames[i].data(), static_cast<Eigen::Index>(frame_len));
  }
  return m;
}

EnhancerModel EnhancerModel::from_base(std::shared_ptr<const CodecModel> base) {
  if (!base) throw ParameterError("enhancer needs a base codec");
  EnhancerModel e;
  e.encoder = base->encoder;
  e.base = std::move(base);
  return e;
}

double embedding_l1(const EnhancerModel& enhancer, const Eigen::MatrixXf& degraded,
                    const Eigen::MatrixXf& clean) {
  if (degraded.cols() != clean.cols() || degraded.rows() != clean.rows()) {
    throw ShapeError("embedding_l1: degraded/clean shape mismatch");
  }
  if (clean.cols() == 0) return 0.0;
  const Eigen::MatrixXf a = encode_batch(enhancer.encoder, degraded);
  const Eigen::MatrixXf b = encode_batch(enhancer.base->encoder, clean);
  return static_cast<double>((a - b).cwiseAbs().sum()) / static_cast<double>(a.size());
}

std::vector<float> enhance_frame(const EnhancerModel& enhancer, std::span<const float> frame) {
  const CodecModel& base = *enhancer.base;
  if (frame.size() != base.config.frame_len) throw ShapeError("enhance_frame: frame length mismatch");
  const Eigen::Map<const Eigen::VectorXf> x(frame.data(), static_cast<Eigen::Index>(frame.size()));
  const Embedding z = codec_math::mlp_forward<float>(enhancer.encoder, x, nullptr);
  return decode(base, quantize(base, z).embedding);
}

}  // namespace throatline
