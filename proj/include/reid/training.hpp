#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "reid/checkpoint.hpp"
#include "reid/cnn_mid.hpp"
#include "reid/dataset_io.hpp"
#include "reid/image.hpp"
#include "reid/metric_learning.hpp"
#include "reid/nn/optimizer.hpp"
#include "reid/win_transformer.hpp"

namespace reid {

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  Branch backbone = Branch::kCnnMid;
  nn::OptimizerKind optimizer = nn::OptimizerKind::kRmsProp;
  double momentum = 0.9;
  int lr_step_epochs = 0;  // 0 disables the step schedule
  double lr_step_gamma = 0.1;
  double cross_entropy_weight = 0.0;  // identity head loss (cnn_mid only)
  bool horizontal_flip = false;
  int steps_per_epoch = 0;  // 0 = ceil(train images / batch size)

  void validate() const;
};

/// Float model behind a common interface so the trainer and extractor do not
/// care which architecture they drive.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual Branch branch() const = 0;
  virtual int embedding_dim() const = 0;
  virtual int input_height() const = 0;
  virtual int input_width() const = 0;
  virtual nlohmann::json config_json() const = 0;
  virtual nn::Mat<float> embed(const nn::FeatureMap<float>& images) const = 0;
  virtual nn::Mat<float> forward_train(const nn::FeatureMap<float>& images) = 0;
  virtual void backward(const nn::Mat<float>& d_embedding) = 0;
  virtual nn::ParamList<float> params() = 0;

  virtual bool has_identity_head() const { return false; }
  virtual nn::Mat<float> head_logits(const nn::Mat<float>& embedding) const;
  virtual nn::Mat<float> head_backward(const nn::Mat<float>& embedding, const nn::Mat<float>& d_logits);
};

std::unique_ptr<Backbone> make_cnn_mid(const CnnMidConfig& config, std::uint64_t seed);
std::unique_ptr<Backbone> make_transformer(const WinTransformerConfig& config, std::uint64_t seed);
/// Rebuilds the model from a checkpoint's config snapshot and weights.
std::unique_ptr<Backbone> backbone_from_checkpoint(const Checkpoint& checkpoint);

/// Pixels scaled to roughly [-2, 2]; channels x (batch * H * W).
nn::FeatureMap<float> to_feature_map(std::span<const Image> images);

using ImageLoader = std::function<Image(const ImageRecord&)>;
/// Reads the record's PNG and resamples it to width x height.
ImageLoader png_loader(int width, int height);

struct LossRecord {
  int step = 0;
  int epoch = 0;
  double loss = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> history;
  int steps_per_epoch = 0;
};

struct BackboneSpec {
  Branch kind = Branch::kCnnMid;
  CnnMidConfig cnn = CnnMidConfig::toy();
  WinTransformerConfig transformer = WinTransformerConfig::toy();
};

/// Batch-hard triplet training on the manifest's train split. Throws
/// NumericError on a non-finite loss. Bit-reproducible for a fixed seed.
TrainResult train(const Manifest& manifest, const BackboneSpec& backbone,
                  const SamplerConfig& sampler, const TripletConfig& triplet,
                  const TrainConfig& config, const ImageLoader& loader = {});

std::string loss_history_csv(const std::vector<LossRecord>& history);

/// Embeds every record of `split` in manifest order.
EmbeddingSet extract_embeddings(const Backbone& model, const Manifest& manifest, Split split,
                                const ImageLoader& loader = {}, int batch_size = 16);

}  // namespace reid
