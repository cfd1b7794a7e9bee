#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "throatline/audio.hpp"
#include "throatline/codec_math.hpp"
#include "throatline/hash.hpp"

namespace throatline {

enum class OptimizerKind : std::uint32_t { kSgdMomentum = 0, kAdam = 1 };

struct CodecConfig {
  std::uint32_t frame_len = kDefaultFrameLen;
  std::uint32_t embed_dim = 64;
  std::uint32_t hidden_dim = 256;
  std::uint32_t num_quantizers = 4;
  std::uint32_t codebook_size = 256;
  std::uint64_t seed = 0;
  float learn_rate = 0.5f;
  float momentum = 0.9f;
  std::uint32_t batch_size = 32;
  std::uint32_t epochs = 200;
  float ema_decay = 0.99f;
  // Pretraining objective: L1 + mel_weight * MSE(log10(mel + mel_floor)).
  std::uint32_t mel_bands = 64;
  float mel_weight = 1.0f;
  float mel_floor = 1.0f;
  // Epochs trained with the quantizer bypassed before codebooks are seeded.
  std::uint32_t quantizer_warmup_epochs = 20;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  std::uint32_t sample_rate = kDefaultSampleRate;

  void validate() const;
};

using Mlp = codec_math::MlpT<float>;

inline constexpr Eigen::Index kZeroCode = 0;
using Embedding = Eigen::VectorXf;

struct TokenFrame {
  std::vector<std::uint32_t> indices;
};

// Encoder, residual-VQ codebooks and decoder. Immutable once trained or
// loaded; forward ops are const and safe to call concurrently.
struct CodecModel {
  static constexpr std::uint32_t kVersion = 1;

  CodecConfig config;
  Mlp encoder;
  Mlp decoder;
  // One (embed_dim x codebook_size) matrix per quantizer level; column k is
  // code k. Code kZeroCode stays the zero vector in every level, so adding a
  // level never increases the quantization error.
  std::vector<Eigen::MatrixXf> codebooks;
  // Mean pretraining loss per epoch (not serialized).
  std::vector<double> loss_curve;

  // Zero-initialized model of the configured shape.
  static CodecModel zeros(const CodecConfig& cfg);
  // PyTorch-style uniform(+-1/sqrt(fan_in)) init, deterministic in cfg.seed.
  static CodecModel random_init(const CodecConfig& cfg);

  // SHA-256 of the serialized bytes.
  Sha256Digest hash() const;
};

Embedding encode(const CodecModel& model, std::span<const float> frame);

struct Quantized {
  TokenFrame tokens;
  Embedding embedding;
};

// Residual VQ: level q takes the nearest code (squared Euclidean, ties to the
// lowest index) to the running residual. `levels` limits how many levels are
// used (0 = all).
Quantized quantize(const CodecModel& model, const Embedding& embedding,
                   std::size_t levels = 0);
Embedding dequantize(const CodecModel& model, const TokenFrame& tokens);
std::vector<float> decode(const CodecModel& model, const Embedding& embedding);

// Batched helpers: columns are frames.
Eigen::MatrixXf encode_batch(const Mlp& encoder, const Eigen::MatrixXf& frames);
Eigen::MatrixXf quantize_batch(const CodecModel& model,
                               const Eigen::MatrixXf& embeddings);

// Stacks equally sized frames as matrix columns.
Eigen::MatrixXf frames_to_matrix(const std::vector<std::vector<float>>& frames,
                                 std::size_t frame_len);

struct TrainingProgress {
  std::uint32_t epoch = 0;
  double loss = 0.0;
};
using ProgressFn = void (*)(const TrainingProgress&, void*);

// Reconstruction pretraining on clean frames (columns of `clean`).
CodecModel pretrain(const CodecConfig& config, const Eigen::MatrixXf& clean,
                    ProgressFn progress = nullptr, void* user = nullptr);

struct EnhancerModel {
  static constexpr std::uint32_t kVersion = 1;

  std::shared_ptr<const CodecModel> base;
  Mlp encoder;  // fine-tuned copy of base->encoder
  std::vector<double> loss_curve;

  // Copies base->encoder; the state before any fine-tuning step.
  static EnhancerModel from_base(std::shared_ptr<const CodecModel> base);
};

// Encoder-only regression: minimizes mean |enc'(degraded) - base.enc(clean)|
// over pre-quantization embeddings. `degraded` and `clean` hold aligned
// frames as columns. The base model is never written.
EnhancerModel finetune_encoder(std::shared_ptr<const CodecModel> base,
                               const Eigen::MatrixXf& degraded,
                               const Eigen::MatrixXf& clean,
                               const CodecConfig& config,
                               ProgressFn progress = nullptr,
                               void* user = nullptr);

// Mean L1 embedding distance between the enhancer's encoder on `degraded`
// and the frozen base encoder on `clean`.
double embedding_l1(const EnhancerModel& enhancer,
                    const Eigen::MatrixXf& degraded,
                    const Eigen::MatrixXf& clean);

// decode(base, quantize(enc'(frame))). Inference only.
std::vector<float> enhance_frame(const EnhancerModel& enhancer,
                                 std::span<const float> frame);

// --- serialization ----------------------------------------------------------
//
// Codec file:    "TLC1" | u32 version | config (u32 fields, see codec_io.cpp)
//                | encoder w1 b1 w2 b2 | decoder w1 b1 w2 b2 | codebooks q=0..Q-1
// Enhancer file: "TLE1" | u32 version | 32-byte SHA-256 of the base codec file
//                | u32 config fields of the base | encoder w1 b1 w2 b2
// Tensors are little-endian float32, row-major.

std::vector<std::uint8_t> serialize_model(const CodecModel& model);
CodecModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const CodecModel& model, const std::filesystem::path& path);
CodecModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_enhancer(const EnhancerModel& enhancer);
EnhancerModel deserialize_enhancer(std::span<const std::uint8_t> bytes,
                                   std::shared_ptr<const CodecModel> base);
void save_enhancer(const EnhancerModel& enhancer,
                   const std::filesystem::path& path);
EnhancerModel load_enhancer(const std::filesystem::path& path,
                            std::shared_ptr<const CodecModel> base);

enum class ModelFileKind { kCodec, kEnhancer, kUnknown };
ModelFileKind peek_model_kind(const std::filesystem::path& path);
// Base hash recorded in an enhancer file.
Sha256Digest enhancer_base_hash(const std::filesystem::path& path);

// SHA-256 over all parameter bytes of an MLP (freeze checks).
Sha256Digest parameter_hash(const Mlp& mlp);

}  // namespace throatline
