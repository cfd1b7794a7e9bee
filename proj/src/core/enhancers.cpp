#include <algorithm>
#include <cmath>

#include "throatline/engine.hpp"
#include "throatline/errors.hpp"

namespace throatline {

PassthroughEnhancer::PassthroughEnhancer() : desc_{"passthrough", 0, "Passthrough"} {}

void PassthroughEnhancer::process(std::span<const float> in, std::span<float> out) {
  if (in.size() != out.size()) throw ShapeError("passthrough: size mismatch");
  std::copy(in.begin(), in.end(), out.begin());
}

EqualizerEnhancer::EqualizerEnhancer(int sample_rate) : EqualizerEnhancer(sample_rate, Params{}) {}

EqualizerEnhancer::EqualizerEnhancer(int sample_rate, Params params)
    : desc_{"equalizer", 0, "Equalizer (shelf + tanh)"},
      params_(params),
      shelf_(dsp::biquad_highshelf(params.shelf_hz, params.shelf_gain_db, sample_rate)),
      norm_(1.0 / std::tanh(params.drive)) {
  if (!(params.drive > 0.0)) throw ParameterError("equalizer drive must be positive");
}

void EqualizerEnhancer::process(std::span<const float> in, std::span<float> out) {
  if (in.size() != out.size()) throw ShapeError("equalizer: size mismatch");
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double s = shelf_.process(in[i]);
    out[i] = static_cast<float>(std::tanh(params_.drive * s) * norm_);
  }
}

CodecEnhancer::CodecEnhancer(std::string id, std::shared_ptr<const EnhancerModel> model)
    : desc_{std::move(id), 0, "Codec"}, model_(std::move(model)) {
  if (!model_ || !model_->base) throw ParameterError("codec enhancer needs a model");
  desc_.display_name = "Codec (" + desc_.id.substr(desc_.id.find(':') + 1) + ")";
}

void CodecEnhancer::process(std::span<const float> in, std::span<float> out) {
  if (in.size() != out.size()) throw ShapeError("codec: size mismatch");
  const auto y = enhance_frame(*model_, in);
  std::copy(y.begin(), y.end(), out.begin());
}

std::shared_ptr<const EnhancerModel> load_enhancer_resolving_base(
    const std::filesystem::path& enhancer_path,
    const std::vector<std::filesystem::path>& candidates) {
  const Sha256Digest wanted = enhancer_base_hash(enhancer_path);
  std::vector<std::filesystem::path> search = candidates;
  const auto dir = enhancer_path.has_parent_path() ? enhancer_path.parent_path()
                                                   : std::filesystem::path(".");
  std::vector<std::filesystem::path> siblings;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file()) siblings.push_back(entry.path());
  }
  std::sort(siblings.begin(), siblings.end());
  search.insert(search.end(), siblings.begin(), siblings.end());
  for (const auto& p : search) {
    if (peek_model_kind(p) != ModelFileKind::kCodec) continue;
    auto base = std::make_shared<const CodecModel>(load_model(p));
    if (base->hash() == wanted) {
      return std::make_shared<const EnhancerModel>(load_enhancer(enhancer_path, base));
    }
  }
  throw ConfigurationError("no codec file matching the base of " + enhancer_path.string());
}

std::unique_ptr<Enhancer> make_enhancer(const std::string& id, int sample_rate) {
  if (id == "passthrough") return std::make_unique<PassthroughEnhancer>();
  if (id == "equalizer") return std::make_unique<EqualizerEnhancer>(sample_rate);
  if (id.rfind("codec:", 0) == 0) {
    const std::filesystem::path path = id.substr(6);
    std::shared_ptr<const EnhancerModel> model;
    switch (peek_model_kind(path)) {
      case ModelFileKind::kEnhancer:
        model = load_enhancer_resolving_base(path);
        break;
      case ModelFileKind::kCodec:
        model = std::make_shared<const EnhancerModel>(
            EnhancerModel::from_base(std::make_shared<const CodecModel>(load_model(path))));
        break;
      default:
        throw FormatError(path.string() + " is not a model file");
    }
    if (static_cast<int>(model->base->config.sample_rate) != sample_rate) {
      throw ConfigurationError("model sample rate does not match the engine");
    }
    return std::make_unique<CodecEnhancer>(id, std::move(model));
  }
  throw ControlError("unknown enhancer id '" + id + "'");
}

}  // namespace throatline
