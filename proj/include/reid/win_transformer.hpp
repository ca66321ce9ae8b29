#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "reid/nn/conv.hpp"

namespace reid {

/// Hierarchical windowed-attention transformer: patch partition, linear token
/// embedding, stages of (shifted) window attention blocks separated by patch
/// merging, final layer norm and token average pooling.
struct WinTransformerConfig {
  int input_height = 224;
  int input_width = 224;
  int patch_size = 4;
  int embed_dim = 96;
  std::vector<int> depths{2, 2, 18, 2};
  std::vector<int> heads{3, 6, 12, 24};
  int window = 7;
  int merge = 2;
  int merge_expansion = 2;  // token width multiplier per merge
  int mlp_ratio = 4;
  bool shifted_windows = true;

  int stages() const { return static_cast<int>(depths.size()); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  int stage_dim(int s) const {
    int d = embed_dim;
    for (int i = 0; i < s; ++i) d *= merge_expansion;
    return d;
  }
  int final_dim() const { return stage_dim(stages() - 1); }
  int stage_rows(int s) const { return input_height / patch_size / ipow(merge, s); }
  int stage_cols(int s) const { return input_width / patch_size / ipow(merge, s); }
  /// Largest window <= `window` that tiles the stage grid.
  int stage_window(int s) const {
    for (int w = window; w > 1; --w) {
      if (stage_rows(s) % w == 0 && stage_cols(s) % w == 0) return w;
    }
    return 1;
  }
  void validate() const;

  /// C=24, depths (2, 2), window 4, 64x64 input.
  static WinTransformerConfig toy();

 private:
  static int ipow(int b, int e) {
    int r = 1;
    while (e-- > 0) r *= b;
    return r;
  }
};

inline void WinTransformerConfig::validate() const {
  require(stages() >= 1, "transformer needs at least one stage");
  require(heads.size() == depths.size(), "transformer heads must have one entry per stage");
  require(patch_size >= 1 && embed_dim >= 1 && window >= 1 && merge >= 1 &&
              merge_expansion >= 1 && mlp_ratio >= 1,
          "transformer sizes must be positive");
  for (int d : depths) require(d >= 1, "transformer depths must be >= 1");
  int factor = patch_size;
  for (int s = 1; s < stages(); ++s) factor *= merge;
  require(input_height > 0 && input_width > 0 && input_height % factor == 0 &&
              input_width % factor == 0,
          "transformer input size must be divisible by " + std::to_string(factor));
  for (int s = 0; s < stages(); ++s) {
    require(heads[s] >= 1 && stage_dim(s) % heads[s] == 0,
            "transformer stage " + std::to_string(s) + " width not divisible by head count");
  }
}

inline WinTransformerConfig WinTransformerConfig::toy() {
  WinTransformerConfig c;
  c.input_height = c.input_width = 64;
  c.embed_dim = 24;
  c.depths = {2, 2};
  c.heads = {3, 6};
  c.window = 4;
  return c;
}

/// Tokens of `batch` grids laid out row-major: row (b * rows + r) * cols + c.
template <typename Scalar>
struct TokenGrid {
  nn::Mat<Scalar> tokens;
  int batch = 1;
  int rows = 0;
  int cols = 0;

  int dim() const { return static_cast<int>(tokens.cols()); }
  Eigen::Index count() const { return static_cast<Eigen::Index>(batch) * rows * cols; }
};

/// Each token is the flattened patch x patch x 3 block, pixel-major RGB.
template <typename Scalar>
TokenGrid<Scalar> patch_partition(const nn::FeatureMap<Scalar>& images, int patch) {
  if (images.channels() != 3) throw ValidationError("patch_partition expects RGB input");
  if (patch < 1 || images.height % patch != 0 || images.width % patch != 0) {
    throw ValidationError("image " + std::to_string(images.height) + "x" +
                          std::to_string(images.width) + " not divisible by patch size " +
                          std::to_string(patch));
  }
  TokenGrid<Scalar> g{nn::Mat<Scalar>(), images.batch, images.height / patch, images.width / patch};
  g.tokens.resize(g.count(), patch * patch * 3);
  for (int b = 0; b < images.batch; ++b)
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * g.rows + r) * g.cols + c;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx) {
            const Eigen::Index px =
                (static_cast<Eigen::Index>(b) * images.height + r * patch + dy) * images.width +
                c * patch + dx;
            for (int ch = 0; ch < 3; ++ch) {
              g.tokens(row, (dy * patch + dx) * 3 + ch) = images.data(ch, px);
            }
          }
      }
  return g;
}

/// Inverse of patch_partition.
template <typename Scalar>
nn::FeatureMap<Scalar> patch_unpartition(const TokenGrid<Scalar>& g, int patch) {
  nn::FeatureMap<Scalar> out{nn::Mat<Scalar>(3, g.count() * patch * patch), g.batch,
                             g.rows * patch, g.cols * patch};
  for (int b = 0; b < g.batch; ++b)
    for (int r = 0; r < g.rows; ++r)
      for (int c = 0; c < g.cols; ++c) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * g.rows + r) * g.cols + c;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx) {
            const Eigen::Index px =
                (static_cast<Eigen::Index>(b) * out.height + r * patch + dy) * out.width +
                c * patch + dx;
            for (int ch = 0; ch < 3; ++ch) out.data(ch, px) = g.tokens(row, (dy * patch + dx) * 3 + ch);
          }
      }
  return out;
}

/// Multi-head self-attention restricted to non-overlapping window x window
/// blocks of the token grid, with a learned relative position bias and an
/// optional cyclic shift (masked so attention never crosses the wrap seam).
template <typename Scalar>
class WindowAttention {
  using Mat = nn::Mat<Scalar>;

 public:
  struct Cache {
    Mat windows;   // input rows gathered window by window
    Mat qkv;
    Mat context;   // attention output before projection
    std::vector<Mat> attention;  // (window index * heads + head) -> T x T
    std::vector<Eigen::Index> order;
  };

  WindowAttention() = default;
  WindowAttention(const std::string& name, int dim, int heads, int window, std::mt19937_64& rng)
      : qkv(name + ".qkv", dim, 3 * dim, true, rng),
        proj(name + ".proj", dim, dim, true, rng, 0.5 * std::sqrt(1.0 / dim)),
        relative_bias(name + ".relative_bias", (2 * window - 1) * (2 * window - 1), heads),
        heads_(heads),
        window_(window) {
    if (dim % heads != 0) throw ValidationError(name + ": dim not divisible by heads");
    nn::fill_normal(relative_bias.value, 0.02, rng);
  }

  int heads() const { return heads_; }
  int window() const { return window_; }

  /// Row index in the input for every windowed position.
  std::vector<Eigen::Index> window_order(int batch, int rows, int cols, int shift) const {
    const int w = window_;
    std::vector<Eigen::Index> order;
    order.reserve(static_cast<std::size_t>(batch) * rows * cols);
    for (int b = 0; b < batch; ++b)
      for (int wy = 0; wy < rows / w; ++wy)
        for (int wx = 0; wx < cols / w; ++wx)
          for (int ty = 0; ty < w; ++ty)
            for (int tx = 0; tx < w; ++tx) {
              const int r = (wy * w + ty + shift) % rows;
              const int c = (wx * w + tx + shift) % cols;
              order.push_back((static_cast<Eigen::Index>(b) * rows + r) * cols + c);
            }
    return order;
  }

  /// Additive mask for window (wy, wx) of a shifted grid; empty when unshifted.
  Mat shift_mask(int rows, int cols, int shift, int wy, int wx) const {
    const int w = window_, t = w * w;
    if (shift == 0) return Mat();
    auto region = [&](int pos, int n) { return pos < n - w ? 0 : (pos < n - shift ? 1 : 2); };
    std::vector<int> label(t);
    for (int ty = 0; ty < w; ++ty)
      for (int tx = 0; tx < w; ++tx)
        label[ty * w + tx] = region(wy * w + ty, rows) * 3 + region(wx * w + tx, cols);
    Mat m(t, t);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) m(i, j) = label[i] == label[j] ? Scalar(0) : Scalar(kMasked);
    return m;
  }

  int relative_index(int i, int j) const {
    const int w = window_;
    const int dy = i / w - j / w + w - 1;
    const int dx = i % w - j % w + w - 1;
    return dy * (2 * w - 1) + dx;
  }

  TokenGrid<Scalar> forward(const TokenGrid<Scalar>& x, int shift, Cache* cache = nullptr) const {
    const int w = window_;
    if (x.rows % w != 0 || x.cols % w != 0) {
      throw ValidationError("window " + std::to_string(w) + " does not tile the " +
                            std::to_string(x.rows) + "x" + std::to_string(x.cols) + " grid");
    }
    const int dim = x.dim();
    const int hd = dim / heads_;
    const int t = w * w;
    const int per_sample = (x.rows / w) * (x.cols / w);
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(hd));

    std::vector<Eigen::Index> order = window_order(x.batch, x.rows, x.cols, shift);
    Mat windows(x.count(), dim);
    for (Eigen::Index j = 0; j < x.count(); ++j) windows.row(j) = x.tokens.row(order[j]);
    Mat qkv_out = qkv.forward(windows);

    std::vector<Mat> masks(per_sample);
    for (int k = 0; k < per_sample; ++k) masks[k] = shift_mask(x.rows, x.cols, shift, k / (x.cols / w), k % (x.cols / w));
    Mat bias_per_head(t * t, heads_);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) bias_per_head.row(i * t + j) = relative_bias.value.row(relative_index(i, j));

    Mat context(x.count(), dim);
    if (cache) cache->attention.resize(static_cast<std::size_t>(x.batch) * per_sample * heads_);
    for (int g = 0; g < x.batch * per_sample; ++g) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(g) * t;
      for (int h = 0; h < heads_; ++h) {
        auto q = qkv_out.block(r0, h * hd, t, hd);
        auto k = qkv_out.block(r0, dim + h * hd, t, hd);
        auto v = qkv_out.block(r0, 2 * dim + h * hd, t, hd);
        Mat logits = (q * k.transpose()) * scale;
        logits += bias_per_head.col(h).reshaped(t, t).transpose();
        if (shift != 0) logits += masks[g % per_sample];
        Mat attn = nn::softmax_rows(logits);
        context.block(r0, h * hd, t, hd).noalias() = attn * v;
        if (cache) cache->attention[static_cast<std::size_t>(g) * heads_ + h] = std::move(attn);
      }
    }
    Mat z = proj.forward(context);
    TokenGrid<Scalar> y{Mat(x.count(), dim), x.batch, x.rows, x.cols};
    for (Eigen::Index j = 0; j < x.count(); ++j) y.tokens.row(order[j]) = z.row(j);
    if (cache) {
      cache->windows = std::move(windows);
      cache->qkv = std::move(qkv_out);
      cache->context = std::move(context);
      cache->order = std::move(order);
    }
    return y;
  }

  Mat backward(const Cache& cache, const Mat& dy) {
    const Eigen::Index n = dy.rows();
    const int dim = static_cast<int>(dy.cols());
    const int hd = dim / heads_;
    const int t = window_ * window_;
    const Scalar scale = Scalar(1) / std::sqrt(Scalar(hd));

    Mat dz(n, dim);
    for (Eigen::Index j = 0; j < n; ++j) dz.row(j) = dy.row(cache.order[j]);
    Mat dcontext = proj.backward(cache.context, dz);

    Mat dqkv = Mat::Zero(n, 3 * dim);
    Mat dbias = Mat::Zero(t * t, heads_);
    const auto windows = static_cast<int>(n / t);
    for (int g = 0; g < windows; ++g) {
      const Eigen::Index r0 = static_cast<Eigen::Index>(g) * t;
      for (int h = 0; h < heads_; ++h) {
        const Mat& attn = cache.attention[static_cast<std::size_t>(g) * heads_ + h];
        auto q = cache.qkv.block(r0, h * hd, t, hd);
        auto k = cache.qkv.block(r0, dim + h * hd, t, hd);
        auto v = cache.qkv.block(r0, 2 * dim + h * hd, t, hd);
        auto dout = dcontext.block(r0, h * hd, t, hd);
        Mat dattn = dout * v.transpose();
        dqkv.block(r0, 2 * dim + h * hd, t, hd).noalias() = attn.transpose() * dout;
        Mat dlogits = attn.cwiseProduct(dattn);
        dlogits -= (attn.array().colwise() * dlogits.rowwise().sum().array()).matrix();
        dbias.col(h) += dlogits.transpose().reshaped();
        dqkv.block(r0, h * hd, t, hd).noalias() = (dlogits * k) * scale;
        dqkv.block(r0, dim + h * hd, t, hd).noalias() = (dlogits.transpose() * q) * scale;
      }
    }
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < t; ++j) relative_bias.grad.row(relative_index(i, j)) += dbias.row(i * t + j);

    Mat dwindows = qkv.backward(cache.windows, dqkv);
    Mat dx(n, dim);
    for (Eigen::Index j = 0; j < n; ++j) dx.row(cache.order[j]) = dwindows.row(j);
    return dx;
  }

  void collect(nn::ParamList<Scalar>& out) {
    qkv.collect(out);
    proj.collect(out);
    out.push_back(&relative_bias);
  }

  static constexpr double kMasked = -100.0;
  nn::Linear<Scalar> qkv;
  nn::Linear<Scalar> proj;
  nn::Param<Scalar> relative_bias;  // (2w-1)^2 x heads

 private:
  int heads_ = 1;
  int window_ = 1;
};

/// Pre-norm transformer block: x + attn(LN(x)), then x + MLP(LN(x)).
template <typename Scalar>
class WindowBlock {
  using Mat = nn::Mat<Scalar>;

 public:
  struct Cache {
    typename nn::LayerNorm<Scalar>::Cache ln1, ln2;
    typename WindowAttention<Scalar>::Cache attn;
    Mat ln2_out, hidden_pre, hidden_act;
  };

  WindowBlock() = default;
  WindowBlock(const std::string& name, int dim, int heads, int window, int shift, int mlp_ratio,
              std::mt19937_64& rng)
      : norm1(name + ".norm1", dim),
        attention(name + ".attn", dim, heads, window, rng),
        norm2(name + ".norm2", dim),
        fc1(name + ".fc1", dim, dim * mlp_ratio, true, rng),
        fc2(name + ".fc2", dim * mlp_ratio, dim, true, rng, 0.5 * std::sqrt(1.0 / (dim * mlp_ratio))),
        shift_(shift) {}

  int shift() const { return shift_; }

  TokenGrid<Scalar> forward(const TokenGrid<Scalar>& x, Cache* cache = nullptr) const {
    TokenGrid<Scalar> normed{norm1.forward(x.tokens, cache ? &cache->ln1 : nullptr), x.batch, x.rows, x.cols};
    TokenGrid<Scalar> y = attention.forward(normed, shift_, cache ? &cache->attn : nullptr);
    y.tokens += x.tokens;
    Mat ln2_out = norm2.forward(y.tokens, cache ? &cache->ln2 : nullptr);
    Mat hidden_pre = fc1.forward(ln2_out);
    Mat hidden_act = nn::gelu(hidden_pre);
    y.tokens += fc2.forward(hidden_act);
    if (cache) {
      cache->ln2_out = std::move(ln2_out);
      cache->hidden_pre = std::move(hidden_pre);
      cache->hidden_act = std::move(hidden_act);
    }
    return y;
  }

  Mat backward(const Cache& cache, const Mat& dy) {
    Mat dhidden = nn::gelu_backward(cache.hidden_pre, fc2.backward(cache.hidden_act, dy));
    Mat dmid = dy + norm2.backward(cache.ln2, fc1.backward(cache.ln2_out, dhidden));
    return dmid + norm1.backward(cache.ln1, attention.backward(cache.attn, dmid));
  }

  void collect(nn::ParamList<Scalar>& out) {
    norm1.collect(out);
    attention.collect(out);
    norm2.collect(out);
    fc1.collect(out);
    fc2.collect(out);
  }

  nn::LayerNorm<Scalar> norm1;
  WindowAttention<Scalar> attention;
  nn::LayerNorm<Scalar> norm2;
  nn::Linear<Scalar> fc1, fc2;

 private:
  int shift_ = 0;
};

/// Concatenates each merge x merge neighbourhood, normalizes, and projects.
template <typename Scalar>
class PatchMerging {
  using Mat = nn::Mat<Scalar>;

 public:
  struct Cache {
    Mat gathered;
    typename nn::LayerNorm<Scalar>::Cache ln;
    Mat normed;
    int rows = 0, cols = 0;
  };

  PatchMerging() = default;
  PatchMerging(const std::string& name, int in_dim, int out_dim, int merge, std::mt19937_64& rng)
      : norm(name + ".norm", in_dim * merge * merge),
        reduction(name + ".reduction", in_dim * merge * merge, out_dim, false, rng),
        merge_(merge) {}

  int merge() const { return merge_; }

  /// Gathered row layout: neighbour (di, dj) occupies columns [(di*m + dj) * C, +C).
  static Mat gather(const TokenGrid<Scalar>& x, int m) {
    if (m < 1 || x.rows % m != 0 || x.cols % m != 0) {
      throw ValidationError("merge factor " + std::to_string(m) + " does not tile the " +
                            std::to_string(x.rows) + "x" + std::to_string(x.cols) + " grid");
    }
    const int rows = x.rows / m, cols = x.cols / m, c = x.dim();
    Mat out(static_cast<Eigen::Index>(x.batch) * rows * cols, static_cast<Eigen::Index>(c) * m * m);
    for (int b = 0; b < x.batch; ++b)
      for (int r = 0; r < rows; ++r)
        for (int q = 0; q < cols; ++q)
          for (int di = 0; di < m; ++di)
            for (int dj = 0; dj < m; ++dj) {
              const Eigen::Index src = (static_cast<Eigen::Index>(b) * x.rows + r * m + di) * x.cols + q * m + dj;
              out.block((static_cast<Eigen::Index>(b) * rows + r) * cols + q, (di * m + dj) * c, 1, c) =
                  x.tokens.row(src);
            }
    return out;
  }

  TokenGrid<Scalar> forward(const TokenGrid<Scalar>& x, Cache* cache = nullptr) const {
    Mat gathered = gather(x, merge_);
    Mat normed = norm.forward(gathered, cache ? &cache->ln : nullptr);
    TokenGrid<Scalar> y{reduction.forward(normed), x.batch, x.rows / merge_, x.cols / merge_};
    if (cache) {
      cache->gathered = std::move(gathered);
      cache->normed = std::move(normed);
      cache->rows = x.rows;
      cache->cols = x.cols;
    }
    return y;
  }

  Mat backward(const Cache& cache, const Mat& dy) {
    Mat dg = norm.backward(cache.ln, reduction.backward(cache.normed, dy));
    const int m = merge_;
    const int rows = cache.rows / m, cols = cache.cols / m;
    const int c = static_cast<int>(dg.cols()) / (m * m);
    const auto batch = static_cast<int>(dg.rows() / (static_cast<Eigen::Index>(rows) * cols));
    Mat dx(static_cast<Eigen::Index>(batch) * cache.rows * cache.cols, c);
    for (int b = 0; b < batch; ++b)
      for (int r = 0; r < rows; ++r)
        for (int q = 0; q < cols; ++q)
          for (int di = 0; di < m; ++di)
            for (int dj = 0; dj < m; ++dj) {
              const Eigen::Index dst = (static_cast<Eigen::Index>(b) * cache.rows + r * m + di) * cache.cols + q * m + dj;
              dx.row(dst) = dg.block((static_cast<Eigen::Index>(b) * rows + r) * cols + q, (di * m + dj) * c, 1, c);
            }
    return dx;
  }

  void collect(nn::ParamList<Scalar>& out) {
    norm.collect(out);
    reduction.collect(out);
  }

  nn::LayerNorm<Scalar> norm;
  nn::Linear<Scalar> reduction;

 private:
  int merge_ = 2;
};

template <typename Scalar>
class WinTransformer {
  using Mat = nn::Mat<Scalar>;

  struct Stage {
    bool has_merge = false;
    PatchMerging<Scalar> merging;
    std::vector<WindowBlock<Scalar>> blocks;
  };

  struct Tape {
    Mat patches;
    typename nn::LayerNorm<Scalar>::Cache embed_ln;
    std::vector<typename PatchMerging<Scalar>::Cache> merges;
    std::vector<std::vector<typename WindowBlock<Scalar>::Cache>> blocks;
    typename nn::LayerNorm<Scalar>::Cache final_ln;
    int batch = 0, rows = 0, cols = 0;
  };

 public:
  WinTransformer(const WinTransformerConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    patch_embed_ = nn::Linear<Scalar>("patch_embed", config_.patch_dim(), config_.embed_dim, true, rng);
    embed_norm_ = nn::LayerNorm<Scalar>("patch_embed.norm", config_.embed_dim);
    for (int s = 0; s < config_.stages(); ++s) {
      Stage stage;
      const std::string prefix = "stage" + std::to_string(s);
      const int dim = config_.stage_dim(s);
      if (s > 0) {
        stage.has_merge = true;
        stage.merging = PatchMerging<Scalar>(prefix + ".merge", config_.stage_dim(s - 1), dim,
                                             config_.merge, rng);
      }
      const int w = config_.stage_window(s);
      const bool can_shift = config_.shifted_windows && w < config_.stage_rows(s) && w < config_.stage_cols(s);
      for (int b = 0; b < config_.depths[s]; ++b) {
        const int shift = (can_shift && b % 2 == 1) ? w / 2 : 0;
        stage.blocks.emplace_back(prefix + ".block" + std::to_string(b), dim, config_.heads[s], w,
                                  shift, config_.mlp_ratio, rng);
      }
      stages_.push_back(std::move(stage));
    }
    final_norm_ = nn::LayerNorm<Scalar>("final_norm", config_.final_dim());
  }

  const WinTransformerConfig& config() const { return config_; }
  int embedding_dim() const { return config_.final_dim(); }

  Mat embed(const nn::FeatureMap<Scalar>& images) const { return run(images, nullptr); }

  Mat forward_train(const nn::FeatureMap<Scalar>& images) {
    tape_ = std::make_unique<Tape>();
    return run(images, tape_.get());
  }

  void backward(const Mat& d_embedding) {
    if (!tape_) throw ValidationError("transformer backward without forward_train");
    const int s_last = config_.stages() - 1;
    const int rows = config_.stage_rows(s_last), cols = config_.stage_cols(s_last);
    const Eigen::Index per = static_cast<Eigen::Index>(rows) * cols;
    Mat dtokens(d_embedding.rows() * per, d_embedding.cols());
    for (Eigen::Index b = 0; b < d_embedding.rows(); ++b) {
      dtokens.middleRows(b * per, per).rowwise() = d_embedding.row(b) / Scalar(per);
    }
    Mat d = final_norm_.backward(tape_->final_ln, dtokens);
    for (int s = s_last; s >= 0; --s) {
      auto& stage = stages_[s];
      for (int b = static_cast<int>(stage.blocks.size()) - 1; b >= 0; --b) {
        d = stage.blocks[b].backward(tape_->blocks[s][b], d);
      }
      if (stage.has_merge) d = stage.merging.backward(tape_->merges[s], d);
    }
    Mat dembed = embed_norm_.backward(tape_->embed_ln, d);
    patch_embed_.backward(tape_->patches, dembed);
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out;
    patch_embed_.collect(out);
    embed_norm_.collect(out);
    for (auto& stage : stages_) {
      if (stage.has_merge) stage.merging.collect(out);
      for (auto& blk : stage.blocks) blk.collect(out);
    }
    final_norm_.collect(out);
    return out;
  }

  const std::vector<Stage>& stages() const { return stages_; }

 private:
  Mat run(const nn::FeatureMap<Scalar>& images, Tape* tape) const {
    if (images.batch < 1) throw ValidationError("transformer: empty batch");
    if (images.height != config_.input_height || images.width != config_.input_width) {
      throw ValidationError("transformer: images must be " + std::to_string(config_.input_height) +
                            "x" + std::to_string(config_.input_width));
    }
    TokenGrid<Scalar> patches = patch_partition(images, config_.patch_size);
    TokenGrid<Scalar> x{embed_norm_.forward(patch_embed_.forward(patches.tokens), tape ? &tape->embed_ln : nullptr),
                        patches.batch, patches.rows, patches.cols};
    if (tape) {
      tape->patches = std::move(patches.tokens);
      tape->merges.resize(stages_.size());
      tape->blocks.resize(stages_.size());
    }
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const auto& stage = stages_[s];
      if (stage.has_merge) x = stage.merging.forward(x, tape ? &tape->merges[s] : nullptr);
      const int si = static_cast<int>(s);
      if (x.rows != config_.stage_rows(si) || x.cols != config_.stage_cols(si) || x.dim() != config_.stage_dim(si)) {
        throw std::logic_error("transformer stage " + std::to_string(s) + " shape bookkeeping violated");
      }
      if (tape) tape->blocks[s].resize(stage.blocks.size());
      for (std::size_t b = 0; b < stage.blocks.size(); ++b) {
        x = stage.blocks[b].forward(x, tape ? &tape->blocks[s][b] : nullptr);
      }
    }
    Mat normed = final_norm_.forward(x.tokens, tape ? &tape->final_ln : nullptr);
    const Eigen::Index per = static_cast<Eigen::Index>(x.rows) * x.cols;
    Mat pooled(x.batch, x.dim());
    for (int b = 0; b < x.batch; ++b) pooled.row(b) = normed.middleRows(b * per, per).colwise().mean();
    return pooled;
  }

  WinTransformerConfig config_;
  nn::Linear<Scalar> patch_embed_;
  nn::LayerNorm<Scalar> embed_norm_;
  std::vector<Stage> stages_;
  nn::LayerNorm<Scalar> final_norm_;
  std::unique_ptr<Tape> tape_;
};

}  // namespace reid
