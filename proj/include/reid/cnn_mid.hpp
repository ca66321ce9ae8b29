#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "reid/nn/conv.hpp"

namespace reid {

/// Residual CNN whose embedding concatenates the pooled penultimate-stage
/// ("semantic") and final-stage ("global") feature maps.
struct CnnMidConfig {
  int input_height = 224;
  int input_width = 224;
  /// Stage 0 is the stride-2 stem; every later stage opens with a stride-2
  /// bottleneck block.
  std::vector<int> stage_channels{64, 256, 512, 1024, 2048};
  std::vector<int> blocks_per_stage{3, 4, 6, 3};  // one entry per non-stem stage
  int bottleneck_ratio = 4;
  std::optional<std::string> pretrained_weights;
  int num_train_identities = 0;  // identity head width, 0 disables the head

  int stages() const { return static_cast<int>(stage_channels.size()); }
  int semantic_dim() const { return stage_channels[stage_channels.size() - 2]; }
  int global_dim() const { return stage_channels.back(); }
  int embedding_dim() const { return semantic_dim() + global_dim(); }
  int downsampling() const { return 1 << stages(); }
  void validate() const;

  /// 3 stages (8, 16, 32) at 64x64.
  static CnnMidConfig toy();
};

inline void CnnMidConfig::validate() const {
  require(stage_channels.size() >= 2, "cnn_mid needs at least 2 stages");
  for (int c : stage_channels) require(c > 0, "cnn_mid stage widths must be positive");
  require(blocks_per_stage.size() + 1 == stage_channels.size(),
          "cnn_mid blocks_per_stage must have one entry per non-stem stage");
  for (int b : blocks_per_stage) require(b >= 1, "cnn_mid blocks per stage must be >= 1");
  require(bottleneck_ratio >= 1, "cnn_mid bottleneck_ratio must be >= 1");
  require(input_height > 0 && input_width > 0 && input_height % downsampling() == 0 &&
              input_width % downsampling() == 0,
          "cnn_mid input size must be divisible by " + std::to_string(downsampling()));
  require(num_train_identities >= 0, "cnn_mid num_train_identities must be >= 0");
}

inline CnnMidConfig CnnMidConfig::toy() {
  CnnMidConfig c;
  c.input_height = c.input_width = 64;
  c.stage_channels = {8, 16, 32};
  c.blocks_per_stage = {1, 1};
  c.bottleneck_ratio = 1;
  return c;
}

/// Batch outputs; one row per image.
template <typename Scalar>
struct CnnMidOutput {
  nn::Mat<Scalar> semantic;
  nn::Mat<Scalar> global;
  nn::Mat<Scalar> embedding;
};

template <typename Scalar>
class CnnMid {
  using Mat = nn::Mat<Scalar>;
  using Map = nn::FeatureMap<Scalar>;

  struct Block {
    struct Cache {
      typename nn::Conv2d<Scalar>::Cache c1, c2, c3, proj;
      Map a1, a2, out;
    };

    nn::Conv2d<Scalar> conv1, conv2, conv3, projection;
    bool has_projection = false;

    Map forward(const Map& x, Cache* cache) const {
      Cache local;
      Cache& c = cache ? *cache : local;
      Map a1 = nn::relu(conv1.forward(x, cache ? &c.c1 : nullptr));
      Map a2 = nn::relu(conv2.forward(a1, cache ? &c.c2 : nullptr));
      Map y = conv3.forward(a2, cache ? &c.c3 : nullptr);
      if (has_projection) {
        y.data += projection.forward(x, cache ? &c.proj : nullptr).data;
      } else {
        y.data += x.data;
      }
      Map out = nn::relu(y);
      if (cache) {
        c.a1 = std::move(a1);
        c.a2 = std::move(a2);
        c.out = out;
      }
      return out;
    }

    Map backward(const Cache& c, const Map& dout) {
      Map dy = nn::relu_backward(c.out, dout);
      Map da2 = conv3.backward(c.c3, dy);
      Map da1 = conv2.backward(c.c2, nn::relu_backward(c.a2, da2));
      Map dx = conv1.backward(c.c1, nn::relu_backward(c.a1, da1));
      if (has_projection) {
        dx.data += projection.backward(c.proj, dy).data;
      } else {
        dx.data += dy.data;
      }
      return dx;
    }
  };

  struct Tape {
    typename nn::Conv2d<Scalar>::Cache stem;
    Map stem_out;
    std::vector<std::vector<typename Block::Cache>> blocks;
    Map semantic_map, global_map;
  };

 public:
  CnnMid(const CnnMidConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    stem_ = nn::Conv2d<Scalar>("stem", 3, config_.stage_channels[0], 3, 2, rng);
    int in = config_.stage_channels[0];
    for (int s = 1; s < config_.stages(); ++s) {
      std::vector<Block> stage;
      const int out = config_.stage_channels[s];
      const int mid = std::max(1, out / config_.bottleneck_ratio);
      for (int b = 0; b < config_.blocks_per_stage[s - 1]; ++b) {
        const std::string name = "stage" + std::to_string(s) + ".block" + std::to_string(b);
        const int stride = b == 0 ? 2 : 1;
        Block blk;
        blk.conv1 = nn::Conv2d<Scalar>(name + ".conv1", in, mid, 1, 1, rng);
        blk.conv2 = nn::Conv2d<Scalar>(name + ".conv2", mid, mid, 3, stride, rng);
        blk.conv3 = nn::Conv2d<Scalar>(name + ".conv3", mid, out, 1, 1, rng, 0.2);
        blk.has_projection = stride != 1 || in != out;
        if (blk.has_projection) {
          blk.projection = nn::Conv2d<Scalar>(name + ".projection", in, out, 1, stride, rng);
        }
        stage.push_back(std::move(blk));
        in = out;
      }
      stages_.push_back(std::move(stage));
    }
    if (config_.num_train_identities > 0) {
      head_ = nn::Linear<Scalar>("head", config_.embedding_dim(), config_.num_train_identities,
                                 true, rng, 0.01);
    }
  }

  const CnnMidConfig& config() const { return config_; }
  int embedding_dim() const { return config_.embedding_dim(); }
  bool has_head() const { return !head_.weight.empty(); }

  /// Inference pass; does not touch training state.
  CnnMidOutput<Scalar> forward_features(const Map& images) const {
    return run(images, nullptr);
  }

  Mat embed(const Map& images) const { return run(images, nullptr).embedding; }

  /// Training pass; records activations for backward().
  Mat forward_train(const Map& images) {
    tape_ = std::make_unique<Tape>();
    return run(images, tape_.get()).embedding;
  }

  /// Accumulates gradients given dL/d(embedding) from the last forward_train.
  void backward(const Mat& d_embedding) {
    if (!tape_) throw ValidationError("cnn_mid backward without forward_train");
    const Eigen::Index ds = config_.semantic_dim();
    Map d_global = nn::global_average_pool_backward<Scalar>(
        d_embedding.rightCols(config_.global_dim()), tape_->global_map.height,
        tape_->global_map.width);
    Map d_semantic = nn::global_average_pool_backward<Scalar>(
        d_embedding.leftCols(ds), tape_->semantic_map.height, tape_->semantic_map.width);
    Map d = d_global;
    const int n = static_cast<int>(stages_.size());
    for (int s = n - 1; s >= 0; --s) {
      if (s == n - 2) d.data += d_semantic.data;
      for (int b = static_cast<int>(stages_[s].size()) - 1; b >= 0; --b) {
        d = stages_[s][b].backward(tape_->blocks[s][b], d);
      }
    }
    if (n == 1) d.data += d_semantic.data;  // semantic tap is the stem
    stem_.backward(tape_->stem, nn::relu_backward(tape_->stem_out, d));
  }

  /// Identity-head probabilities for each embedding row.
  Mat classify(const Mat& embedding) const {
    if (!has_head()) throw ValidationError("cnn_mid has no identity head");
    return nn::softmax_rows(head_.forward(embedding));
  }

  Mat head_logits(const Mat& embedding) const { return head_.forward(embedding); }
  Mat head_backward(const Mat& embedding, const Mat& d_logits) {
    return head_.backward(embedding, d_logits);
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out;
    stem_.collect(out);
    for (auto& stage : stages_)
      for (auto& blk : stage) {
        blk.conv1.collect(out);
        blk.conv2.collect(out);
        blk.conv3.collect(out);
        if (blk.has_projection) blk.projection.collect(out);
      }
    if (has_head()) head_.collect(out);
    return out;
  }

 private:
  CnnMidOutput<Scalar> run(const Map& images, Tape* tape) const {
    if (images.batch < 1) throw ValidationError("cnn_mid: empty batch");
    if (images.channels() != 3 || images.height != config_.input_height ||
        images.width != config_.input_width) {
      throw ValidationError("cnn_mid: images must be 3x" + std::to_string(config_.input_height) +
                            "x" + std::to_string(config_.input_width));
    }
    Map x = nn::relu(stem_.forward(images, tape ? &tape->stem : nullptr));
    if (tape) {
      tape->stem_out = x;
      tape->blocks.resize(stages_.size());
    }
    Map semantic_map = x;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      if (tape) tape->blocks[s].resize(stages_[s].size());
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        x = stages_[s][b].forward(x, tape ? &tape->blocks[s][b] : nullptr);
      }
      if (s + 2 == stages_.size()) semantic_map = x;
    }
    CnnMidOutput<Scalar> out;
    out.semantic = nn::global_average_pool(semantic_map);
    out.global = nn::global_average_pool(x);
    out.embedding.resize(images.batch, config_.embedding_dim());
    out.embedding << out.semantic, out.global;
    if (tape) {
      tape->semantic_map = std::move(semantic_map);
      tape->global_map = std::move(x);
    }
    return out;
  }

  CnnMidConfig config_;
  nn::Conv2d<Scalar> stem_;
  std::vector<std::vector<Block>> stages_;
  nn::Linear<Scalar> head_;
  std::unique_ptr<Tape> tape_;
};

}  // namespace reid
