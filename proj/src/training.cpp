#include "reid/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <unordered_map>

#include "reid/config_json.hpp"
#include "reid/error.hpp"

namespace reid {

void TrainConfig::validate() const {
  require(epochs >= 1, "epochs must be >= 1");
  require(learning_rate > 0.0, "learning rate must be > 0");
  require(weight_decay >= 0.0, "weight decay must be >= 0");
  require(backbone != Branch::kFused, "cannot train the fused branch");
  require(lr_step_epochs >= 0 && lr_step_gamma > 0.0, "invalid step schedule");
  require(cross_entropy_weight >= 0.0, "cross-entropy weight must be >= 0");
  require(steps_per_epoch >= 0, "steps_per_epoch must be >= 0");
}

nn::Mat<float> Backbone::head_logits(const nn::Mat<float>&) const {
  throw ValidationError("backbone has no identity head");
}

nn::Mat<float> Backbone::head_backward(const nn::Mat<float>&, const nn::Mat<float>&) {
  throw ValidationError("backbone has no identity head");
}

namespace {

class CnnMidBackbone final : public Backbone {
 public:
  CnnMidBackbone(const CnnMidConfig& config, std::uint64_t seed) : model_(config, seed) {
    if (config.pretrained_weights) {
      const Checkpoint pre = load_checkpoint(*config.pretrained_weights);
      if (import_params(pre, model_.params(), false) == 0) {
        throw ValidationError("pretrained weights " + *config.pretrained_weights +
                              " share no arrays with this cnn_mid configuration");
      }
    }
  }
  Branch branch() const override { return Branch::kCnnMid; }
  int embedding_dim() const override { return model_.embedding_dim(); }
  int input_height() const override { return model_.config().input_height; }
  int input_width() const override { return model_.config().input_width; }
  nlohmann::json config_json() const override { return model_.config(); }
  nn::Mat<float> embed(const nn::FeatureMap<float>& images) const override { return model_.embed(images); }
  nn::Mat<float> forward_train(const nn::FeatureMap<float>& images) override {
    return model_.forward_train(images);
  }
  void backward(const nn::Mat<float>& d) override { model_.backward(d); }
  nn::ParamList<float> params() override { return model_.params(); }
  bool has_identity_head() const override { return model_.has_head(); }
  nn::Mat<float> head_logits(const nn::Mat<float>& e) const override { return model_.head_logits(e); }
  nn::Mat<float> head_backward(const nn::Mat<float>& e, const nn::Mat<float>& d) override {
    return model_.head_backward(e, d);
  }

 private:
  CnnMid<float> model_;
};

class TransformerBackbone final : public Backbone {
 public:
  TransformerBackbone(const WinTransformerConfig& config, std::uint64_t seed) : model_(config, seed) {}
  Branch branch() const override { return Branch::kTransformer; }
  int embedding_dim() const override { return model_.embedding_dim(); }
  int input_height() const override { return model_.config().input_height; }
  int input_width() const override { return model_.config().input_width; }
  nlohmann::json config_json() const override { return model_.config(); }
  nn::Mat<float> embed(const nn::FeatureMap<float>& images) const override { return model_.embed(images); }
  nn::Mat<float> forward_train(const nn::FeatureMap<float>& images) override {
    return model_.forward_train(images);
  }
  void backward(const nn::Mat<float>& d) override { model_.backward(d); }
  nn::ParamList<float> params() override { return model_.params(); }

 private:
  WinTransformer<float> model_;
};

Image flip_horizontal(const Image& in) {
  Image out(in.width, in.height);
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = in.at(in.width - 1 - x, y, c);
  return out;
}

}  // namespace

std::unique_ptr<Backbone> make_cnn_mid(const CnnMidConfig& config, std::uint64_t seed) {
  return std::make_unique<CnnMidBackbone>(config, seed);
}

std::unique_ptr<Backbone> make_transformer(const WinTransformerConfig& config, std::uint64_t seed) {
  return std::make_unique<TransformerBackbone>(config, seed);
}

std::unique_ptr<Backbone> backbone_from_checkpoint(const Checkpoint& checkpoint) {
  std::unique_ptr<Backbone> model;
  if (checkpoint.backbone == Branch::kCnnMid) {
    auto config = checkpoint.config.get<CnnMidConfig>();
    config.pretrained_weights.reset();
    model = make_cnn_mid(config, checkpoint.seed);
  } else if (checkpoint.backbone == Branch::kTransformer) {
    model = make_transformer(checkpoint.config.get<WinTransformerConfig>(), checkpoint.seed);
  } else {
    throw ValidationError("checkpoint backbone must be cnn_mid or transformer");
  }
  import_params(checkpoint, model->params(), true);
  return model;
}

nn::FeatureMap<float> to_feature_map(std::span<const Image> images) {
  require(!images.empty(), "to_feature_map: empty batch");
  const int h = images[0].height, w = images[0].width;
  nn::FeatureMap<float> fm{nn::Mat<float>(3, static_cast<Eigen::Index>(images.size()) * h * w),
                           static_cast<int>(images.size()), h, w};
  for (std::size_t b = 0; b < images.size(); ++b) {
    require(images[b].width == w && images[b].height == h, "to_feature_map: mixed image sizes");
    const Eigen::Index base = static_cast<Eigen::Index>(b) * h * w;
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(h) * w; ++p)
      for (int c = 0; c < 3; ++c) {
        fm.data(c, base + p) = (images[b].pixels[p * 3 + c] / 255.0f - 0.5f) / 0.25f;
      }
  }
  return fm;
}

ImageLoader png_loader(int width, int height) {
  return [width, height](const ImageRecord& r) { return resize_bilinear(read_png(r.path), width, height); };
}

std::vector<ImageRecord> pk_sample_batch(std::span<const ImageRecord> train_records,
                                         const SamplerConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::vector<std::string> identities;
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < train_records.size(); ++i) {
    auto [it, inserted] = members.try_emplace(train_records[i].vehicle_id);
    if (inserted) identities.push_back(train_records[i].vehicle_id);
    it->second.push_back(i);
  }
  const int p = config.identities_per_batch, k = config.instances_per_identity;
  if (static_cast<int>(identities.size()) < p) {
    throw ValidationError("need at least " + std::to_string(p) + " train identities, have " +
                          std::to_string(identities.size()));
  }
  auto draw = [&rng](std::size_t bound) {
    return std::uniform_int_distribution<std::size_t>(0, bound - 1)(rng);
  };
  // Partial Fisher-Yates: the first p slots become the chosen identities.
  for (int i = 0; i < p; ++i) std::swap(identities[i], identities[i + draw(identities.size() - i)]);

  std::vector<ImageRecord> batch;
  batch.reserve(static_cast<std::size_t>(p) * k);
  for (int i = 0; i < p; ++i) {
    std::vector<std::size_t> pool = members.at(identities[i]);
    if (static_cast<int>(pool.size()) >= k) {
      for (int j = 0; j < k; ++j) {
        std::swap(pool[j], pool[j + draw(pool.size() - j)]);
        batch.push_back(train_records[pool[j]]);
      }
    } else {
      for (int j = 0; j < k; ++j) batch.push_back(train_records[pool[draw(pool.size())]]);
    }
  }
  return batch;
}

TrainResult train(const Manifest& manifest, const BackboneSpec& backbone,
                  const SamplerConfig& sampler, const TripletConfig& triplet,
                  const TrainConfig& config, const ImageLoader& loader_in) {
  config.validate();
  sampler.validate();
  triplet.validate();
  const std::vector<ImageRecord> records = manifest.select(Split::kTrain);
  require(!records.empty(), "train split is empty");

  std::map<std::string, int> class_of;
  for (const auto& r : records) class_of.emplace(r.vehicle_id, 0);
  int next = 0;
  for (auto& [id, cls] : class_of) cls = next++;

  std::unique_ptr<Backbone> model;
  if (backbone.kind == Branch::kCnnMid) {
    CnnMidConfig c = backbone.cnn;
    if (c.num_train_identities == 0) c.num_train_identities = static_cast<int>(class_of.size());
    model = make_cnn_mid(c, config.seed);
  } else if (backbone.kind == Branch::kTransformer) {
    model = make_transformer(backbone.transformer, config.seed);
  } else {
    throw ValidationError("cannot train the fused branch");
  }
  if (config.cross_entropy_weight > 0 && !model->has_identity_head()) {
    throw ValidationError("cross-entropy weight requires the cnn_mid identity head");
  }

  const ImageLoader loader = loader_in ? loader_in : png_loader(model->input_width(), model->input_height());
  std::unordered_map<std::string, Image> cache;
  for (const auto& r : records) {
    Image img = loader(r);
    require(img.width == model->input_width() && img.height == model->input_height(),
            "loader returned an image of the wrong size for " + r.image_id);
    cache.emplace(r.image_id, std::move(img));
  }

  nn::OptimizerConfig opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;
  opt.weight_decay = config.weight_decay;
  opt.momentum = config.momentum;
  auto params = model->params();
  nn::Optimizer<float> optimizer(params, opt);
  nn::zero_grads(params);

  std::seed_seq seq{config.seed, sampler.seed};
  std::mt19937_64 rng(seq);
  const int batch_size = sampler.batch_size();
  const int steps = config.steps_per_epoch > 0
                        ? config.steps_per_epoch
                        : std::max<int>(1, (static_cast<int>(records.size()) + batch_size - 1) / batch_size);

  TrainResult result;
  result.steps_per_epoch = steps;
  int step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.lr_step_epochs > 0) {
      const int drops = (epoch - 1) / config.lr_step_epochs;
      optimizer.set_learning_rate(config.learning_rate * std::pow(config.lr_step_gamma, drops));
    }
    for (int s = 0; s < steps; ++s, ++step) {
      const auto batch = pk_sample_batch(records, sampler, rng);
      std::vector<Image> images;
      std::vector<int> labels;
      for (const auto& r : batch) {
        const Image& img = cache.at(r.image_id);
        const bool flip = config.horizontal_flip && std::bernoulli_distribution(0.5)(rng);
        images.push_back(flip ? flip_horizontal(img) : img);
        labels.push_back(class_of.at(r.vehicle_id));
      }
      const nn::Mat<float> emb = model->forward_train(to_feature_map(images));
      const auto loss = batch_hard_triplet_loss(emb.cast<double>(), labels, triplet);
      double total = loss.loss;
      nn::Mat<float> d_emb = loss.gradient.cast<float>();

      if (config.cross_entropy_weight > 0) {
        const nn::Mat<float> logits = model->head_logits(emb);
        nn::Mat<float> probs = nn::softmax_rows(logits);
        double ce = 0;
        const auto n = static_cast<float>(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) {
          ce -= std::log(std::max(1e-12, static_cast<double>(probs(i, labels[i]))));
          probs(i, labels[i]) -= 1.0f;
        }
        total += config.cross_entropy_weight * ce / n;
        d_emb += model->head_backward(emb, probs * static_cast<float>(config.cross_entropy_weight / n));
      }

      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      }
      model->backward(d_emb);
      for (auto* p : params) {
        if (!p->grad.allFinite()) throw NumericError("non-finite gradient in " + p->name);
      }
      optimizer.step();
      nn::zero_grads(params);
      result.history.push_back({step, epoch, total});
    }
  }

  result.checkpoint.backbone = model->branch();
  result.checkpoint.config = model->config_json();
  result.checkpoint.seed = config.seed;
  result.checkpoint.epoch = config.epochs;
  export_params(params, result.checkpoint);
  return result;
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
  std::ostringstream out;
  out.precision(17);
  out << "step,epoch,loss\n";
  for (const auto& h : history) out << h.step << ',' << h.epoch << ',' << h.loss << '\n';
  return out.str();
}

EmbeddingSet extract_embeddings(const Backbone& model, const Manifest& manifest, Split split,
                                const ImageLoader& loader_in, int batch_size) {
  require(batch_size >= 1, "batch size must be >= 1");
  const ImageLoader loader = loader_in ? loader_in : png_loader(model.input_width(), model.input_height());
  const auto records = manifest.select(split);
  EmbeddingSet set;
  set.branch = model.branch();
  set.matrix.resize(static_cast<Eigen::Index>(records.size()), model.embedding_dim());
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t end = std::min(records.size(), start + batch_size);
    std::vector<Image> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(loader(records[i]));
    set.matrix.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        model.embed(to_feature_map(images));
  }
  for (const auto& r : records) set.ids.push_back(r.image_id);
  set.validate();
  return set;
}

}  // namespace reid
