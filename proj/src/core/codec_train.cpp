#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "throatline/codec.hpp"
#include "throatline/errors.hpp"

namespace throatline {
namespace {

using codec_math::MlpTape;

constexpr std::size_t kMelWindow = 512;

// Per-tensor optimizer state for one MLP.
class Optimizer {
 public:
  Optimizer(const Mlp& shape, const CodecConfig& cfg)
      : cfg_(cfg),
        m1_(Mlp::zeros(shape.in_dim(), shape.hidden_dim(), shape.out_dim())),
        m2_(m1_) {}

  void step(Mlp& params, const Mlp& grad) {
    ++t_;
    std::vector<float*> p, a, b;
    std::vector<const float*> g;
    std::vector<std::size_t> n;
    params.for_each_tensor([&](float* d, std::size_t len) { p.push_back(d); n.push_back(len); });
    grad.for_each_tensor([&](const float* d, std::size_t) { g.push_back(d); });
    m1_.for_each_tensor([&](float* d, std::size_t) { a.push_back(d); });
    m2_.for_each_tensor([&](float* d, std::size_t) { b.push_back(d); });
    const float lr = cfg_.learn_rate;
    if (cfg_.optimizer == OptimizerKind::kSgdMomentum) {
      const float mu = cfg_.momentum;
      for (std::size_t t = 0; t < p.size(); ++t) {
        for (std::size_t i = 0; i < n[t]; ++i) {
          a[t][i] = mu * a[t][i] + g[t][i];
          p[t][i] -= lr * a[t][i];
        }
      }
      return;
    }
    constexpr float beta1 = 0.9f, beta2 = 0.999f, eps = 1e-8f;
    const float c1 = 1.0f - std::pow(beta1, static_cast<float>(t_));
    const float c2 = 1.0f - std::pow(beta2, static_cast<float>(t_));
    for (std::size_t t = 0; t < p.size(); ++t) {
      for (std::size_t i = 0; i < n[t]; ++i) {
        a[t][i] = beta1 * a[t][i] + (1.0f - beta1) * g[t][i];
        b[t][i] = beta2 * b[t][i] + (1.0f - beta2) * g[t][i] * g[t][i];
        p[t][i] -= lr * (a[t][i] / c1) / (std::sqrt(b[t][i] / c2) + eps);
      }
    }
  }

 private:
  CodecConfig cfg_;
  Mlp m1_;
  Mlp m2_;
  std::uint64_t t_ = 0;
};

void zero(Mlp& g) {
  g.for_each_tensor([](float* d, std::size_t n) { std::fill(d, d + n, 0.0f); });
}

void check_finite(double loss, std::uint32_t epoch) {
  if (!std::isfinite(loss)) {
    throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch));
  }
}

// Index of the closest code, lowest index on ties.
Eigen::Index argmin_code(const Eigen::MatrixXf& cb, const Eigen::Ref<const Eigen::VectorXf>& r) {
  const Eigen::RowVectorXf d = (cb.colwise() - r).colwise().squaredNorm();
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < d.size(); ++k) {
    if (d(k) < d(best)) best = k;
  }
  return best;
}

// Seeds level q from residuals of randomly chosen training embeddings.
void seed_codebooks(CodecModel& model, const Eigen::MatrixXf& embeddings, std::mt19937_64& rng) {
  std::uniform_int_distribution<Eigen::Index> pick(0, embeddings.cols() - 1);
  Eigen::MatrixXf residual = embeddings;
  for (auto& cb : model.codebooks) {
    for (Eigen::Index k = 0; k < cb.cols(); ++k) {
      if (k != kZeroCode) cb.col(k) = residual.col(pick(rng));
    }
    for (Eigen::Index c = 0; c < residual.cols(); ++c) {
      residual.col(c) -= cb.col(argmin_code(cb, residual.col(c)));
    }
  }
}

// EMA update of every level from one batch; returns the quantized batch and
// accumulates code usage.
Eigen::MatrixXf ema_quantize(CodecModel& model, const Eigen::MatrixXf& z, float decay,
                             std::vector<std::vector<std::uint32_t>>& usage) {
  Eigen::MatrixXf residual = z;
  Eigen::MatrixXf zq = Eigen::MatrixXf::Zero(z.rows(), z.cols());
  std::vector<Eigen::Index> assign(static_cast<std::size_t>(z.cols()));
  for (std::size_t q = 0; q < model.codebooks.size(); ++q) {
    Eigen::MatrixXf& cb = model.codebooks[q];
    Eigen::MatrixXf sums = Eigen::MatrixXf::Zero(cb.rows(), cb.cols());
    std::vector<std::uint32_t> counts(static_cast<std::size_t>(cb.cols()), 0);
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const Eigen::Index k = argmin_code(cb, residual.col(c));
      assign[static_cast<std::size_t>(c)] = k;
      sums.col(k) += residual.col(c);
      ++counts[static_cast<std::size_t>(k)];
    }
    for (Eigen::Index k = 0; k < cb.cols(); ++k) {
      const auto cnt = counts[static_cast<std::size_t>(k)];
      if (cnt == 0) continue;
      usage[q][static_cast<std::size_t>(k)] += cnt;
      if (k == kZeroCode) continue;
      cb.col(k) = decay * cb.col(k) + (1.0f - decay) * (sums.col(k) / static_cast<float>(cnt));
    }
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const auto k = assign[static_cast<std::size_t>(c)];
      zq.col(c) += cb.col(k);
      residual.col(c) -= cb.col(k);
    }
  }
  return zq;
}

// Replaces codes unused for a whole epoch with level residuals of random
// training frames.
void reseed_dead_codes(CodecModel& model, const Eigen::MatrixXf& clean,
                       const std::vector<std::vector<std::uint32_t>>& usage,
                       std::mt19937_64& rng) {
  bool any = false;
  for (const auto& u : usage) {
    any = any || std::find(u.begin(), u.end(), 0u) != u.end();
  }
  if (!any) return;
  Eigen::MatrixXf residual = encode_batch(model.encoder, clean);
  std::uniform_int_distribution<Eigen::Index> pick(0, residual.cols() - 1);
  for (std::size_t q = 0; q < model.codebooks.size(); ++q) {
    Eigen::MatrixXf& cb = model.codebooks[q];
    for (Eigen::Index k = 0; k < cb.cols(); ++k) {
      if (k != kZeroCode && usage[q][static_cast<std::size_t>(k)] == 0) cb.col(k) = residual.col(pick(rng));
    }
    for (Eigen::Index c = 0; c < residual.cols(); ++c) {
      residual.col(c) -= cb.col(argmin_code(cb, residual.col(c)));
    }
  }
}

Eigen::MatrixXf gather(const Eigen::MatrixXf& m, const std::vector<Eigen::Index>& order,
                       std::size_t begin, std::size_t end) {
  Eigen::MatrixXf out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) {
    out.col(static_cast<Eigen::Index>(i - begin)) = m.col(order[i]);
  }
  return out;
}

}  // namespace

CodecModel pretrain(const CodecConfig& config, const Eigen::MatrixXf& clean,
                    ProgressFn progress, void* user) {
  config.validate();
  if (clean.cols() == 0) throw EmptyCorpusError("pretrain: no training frames");
  if (clean.rows() != static_cast<Eigen::Index>(config.frame_len)) {
    throw ShapeError("pretrain: frame length mismatch");
  }
  if (config.frame_len < kMelWindow) throw ParameterError("pretrain: frame shorter than mel window");

  CodecModel model = CodecModel::random_init(config);
  std::mt19937_64 rng(config.seed ^ 0x5EEDC0DEULL);
  const codec_math::LogMelLoss<float> mel(config.frame_len, kMelWindow, config.mel_bands,
                                          config.sample_rate, config.mel_floor);
  const bool use_mel = config.mel_weight > 0.0f;
  const Eigen::MatrixXf target_mel = use_mel ? mel.features(clean) : Eigen::MatrixXf();
  const auto cols_per_frame = static_cast<Eigen::Index>(mel.columns_per_frame());

  Optimizer enc_opt(model.encoder, config);
  Optimizer dec_opt(model.decoder, config);
  Mlp enc_grad = Mlp::zeros(config.frame_len, config.hidden_dim, config.embed_dim);
  Mlp dec_grad = Mlp::zeros(config.embed_dim, config.hidden_dim, config.frame_len);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(clean.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t n = order.size();

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const bool quantized = epoch >= config.quantizer_warmup_epochs;
    if (quantized && epoch == config.quantizer_warmup_epochs) {
      seed_codebooks(model, encode_batch(model.encoder, clean), rng);
    }
    std::vector<std::vector<std::uint32_t>> usage(
        model.codebooks.size(), std::vector<std::uint32_t>(config.codebook_size, 0));
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t e = std::min(n, b + config.batch_size);
      const Eigen::MatrixXf x = gather(clean, order, b, e);

      MlpTape<float> enc_tape, dec_tape;
      const Eigen::MatrixXf z = codec_math::mlp_forward(model.encoder, x, &enc_tape);
      // Straight-through: the decoder sees quantized embeddings, the encoder
      // receives the decoder's input gradient unchanged.
      const Eigen::MatrixXf zq = quantized ? ema_quantize(model, z, config.ema_decay, usage) : z;
      const Eigen::MatrixXf y = codec_math::mlp_forward(model.decoder, zq, &dec_tape);

      Eigen::MatrixXf dy;
      double loss = codec_math::l1_loss<float>(y, x, &dy);
      if (use_mel) {
        Eigen::MatrixXf target(target_mel.rows(), cols_per_frame * x.cols());
        for (std::size_t i = b; i < e; ++i) {
          target.middleCols(static_cast<Eigen::Index>(i - b) * cols_per_frame, cols_per_frame) =
              target_mel.middleCols(order[i] * cols_per_frame, cols_per_frame);
        }
        Eigen::MatrixXf dmel;
        loss += config.mel_weight * mel.loss(y, target, &dmel);
        dy += config.mel_weight * dmel;
      }
      check_finite(loss, epoch);

      zero(enc_grad);
      zero(dec_grad);
      const Eigen::MatrixXf dz = codec_math::mlp_backward(model.decoder, dec_tape, dy, dec_grad);
      codec_math::mlp_backward(model.encoder, enc_tape, dz, enc_grad);
      dec_opt.step(model.decoder, dec_grad);
      enc_opt.step(model.encoder, enc_grad);

      epoch_loss += loss;
      ++batches;
    }
    if (quantized) reseed_dead_codes(model, clean, usage, rng);
    epoch_loss /= static_cast<double>(batches);
    check_finite(epoch_loss, epoch);
    model.loss_curve.push_back(epoch_loss);
    if (progress != nullptr) progress({epoch, epoch_loss}, user);
  }
  if (config.epochs <= config.quantizer_warmup_epochs) {
    // Never reached the quantized phase: seed so inference still has codes.
    seed_codebooks(model, encode_batch(model.encoder, clean), rng);
  }
  return model;
}

EnhancerModel finetune_encoder(std::shared_ptr<const CodecModel> base,
                               const Eigen::MatrixXf& degraded, const Eigen::MatrixXf& clean,
                               const CodecConfig& config, ProgressFn progress, void* user) {
  config.validate();
  EnhancerModel enh = EnhancerModel::from_base(std::move(base));
  const CodecModel& frozen = *enh.base;
  if (degraded.rows() != clean.rows() || degraded.cols() != clean.cols()) {
    throw ShapeError("finetune: degraded/clean shape mismatch");
  }
  if (clean.rows() != static_cast<Eigen::Index>(frozen.config.frame_len)) {
    throw ShapeError("finetune: frame length does not match base codec");
  }
  if (clean.cols() == 0) throw EmptyCorpusError("finetune: no training pairs");

  const Eigen::MatrixXf reference = encode_batch(frozen.encoder, clean);
  Optimizer opt(enh.encoder, config);
  Mlp grad = Mlp::zeros(enh.encoder.in_dim(), enh.encoder.hidden_dim(), enh.encoder.out_dim());
  std::mt19937_64 rng(config.seed ^ 0xF1E7C0DEULL);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(clean.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t n = order.size();

  for (std::uint32_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < n; b += config.batch_size) {
      const std::size_t e = std::min(n, b + config.batch_size);
      const Eigen::MatrixXf x = gather(degraded, order, b, e);
      const Eigen::MatrixXf ref = gather(reference, order, b, e);
      MlpTape<float> tape;
      const Eigen::MatrixXf z = codec_math::mlp_forward(enh.encoder, x, &tape);
      Eigen::MatrixXf dz;
      const double loss = codec_math::l1_loss<float>(z, ref, &dz);
      check_finite(loss, epoch);
      zero(grad);
      codec_math::mlp_backward(enh.encoder, tape, dz, grad);
      opt.step(enh.encoder, grad);
      epoch_loss += loss;
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    enh.loss_curve.push_back(epoch_loss);
    if (progress != nullptr) progress({epoch, epoch_loss}, user);
  }
  return enh;
}

}  // namespace throatline
