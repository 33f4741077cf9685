#pragma once

// Short-term backbone: a three-block C3D feature extractor whose output volume
// is flattened into a multi-channel time series, sampled at several temporal
// rates, encoded by one transformer per rate and fused into a fixed-size
// segment descriptor.

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/layers.hpp"
#include "facet/types.hpp"

namespace facet {

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t segment_length = 10;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<std::size_t> channels{16, 32, 64};
  std::vector<std::size_t> rates{1, 2, 5};
  std::size_t d_model = 96;
  std::size_t heads = 6;
  std::size_t ff_dim = 192;
  std::size_t attention_layers = 2;
  std::size_t scale_dim = 64;
  std::size_t descriptor_dim = 64;
  bool positional_encoding = true;
  bool share_transformers = false;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t spatial_divisor() const { return std::size_t{1} << channels.size(); }
  std::size_t volume_channels() const { return channels.back(); }
  std::size_t volume_height() const { return height / spatial_divisor(); }
  std::size_t volume_width() const { return width / spatial_divisor(); }
  std::size_t series_channels() const { return volume_channels() * volume_height() * volume_width(); }

  void validate() const {
    if (channels.empty()) throw std::invalid_argument("backbone: at least one C3D block is required");
    if (height % spatial_divisor() != 0 || width % spatial_divisor() != 0) {
      throw std::invalid_argument("backbone: frame size " + std::to_string(height) + "x" + std::to_string(width) +
                                  " is not divisible by " + std::to_string(spatial_divisor()));
    }
    if (heads == 0 || d_model % heads != 0) {
      throw std::invalid_argument("backbone: d_model " + std::to_string(d_model) + " not divisible by " +
                                  std::to_string(heads) + " heads");
    }
    if (segment_length == 0) throw std::invalid_argument("backbone: segment length must be positive");
    if (rates.empty()) throw std::invalid_argument("backbone: empty down-sampling rate list");
    for (std::size_t r : rates) {
      if (r == 0) throw std::invalid_argument("backbone: down-sampling rates must be >= 1");
    }
  }
};

// Stacks clips into [B, C, T, H, W].
template <class T>
Tensor<T> batch_clips(std::span<const SegmentClip* const> clips) {
  if (clips.empty()) throw std::invalid_argument("batch_clips: empty batch");
  const auto& first = *clips.front();
  const std::size_t Tf = first.frames, C = first.channels, H = first.height, W = first.width;
  const std::size_t plane = H * W;
  std::vector<T> data(clips.size() * C * Tf * plane);
  for (std::size_t b = 0; b < clips.size(); ++b) {
    const auto& clip = *clips[b];
    if (clip.frames != Tf || clip.channels != C || clip.height != H || clip.width != W) {
      throw ShapeError("batch_clips: clips in a batch must share geometry");
    }
    for (std::size_t t = 0; t < Tf; ++t)
      for (std::size_t c = 0; c < C; ++c) {
        const float* src = clip.pixels.data() + (t * C + c) * plane;
        T* dst = data.data() + (((b * C + c) * Tf) + t) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(src[i]);
      }
  }
  return Tensor<T>({clips.size(), C, Tf, H, W}, std::move(data));
}

template <class T>
class C3DBlock {
 public:
  C3DBlock() = default;
  C3DBlock(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    std::size_t in = cfg.in_channels;
    for (std::size_t out : cfg.channels) {
      convs_.emplace_back(in, out, Triple{3, 3, 3}, Triple{1, 2, 2}, Triple{1, 1, 1}, rng);
      norms_.emplace_back(out, static_cast<T>(cfg.bn_eps), static_cast<T>(cfg.bn_momentum));
      in = out;
    }
  }

  // [B, C_in, T, H, W] -> feature volume [B, C, T, H/8, W/8]
  Tensor<T> operator()(const Tensor<T>& clips, const ForwardContext& ctx) const {
    if (clips.rank() != 5 || clips.dim(1) != cfg_.in_channels || clips.dim(3) != cfg_.height ||
        clips.dim(4) != cfg_.width) {
      throw ShapeError("c3d_block: clip batch " + to_string(clips.shape()) + " does not match configured geometry");
    }
    Tensor<T> x = clips;
    for (std::size_t i = 0; i < convs_.size(); ++i) x = relu(norms_[i](convs_[i](x), ctx));
    return x;
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const std::string block = join_name(prefix, "block" + std::to_string(i + 1));
      convs_[i].collect(set, join_name(block, "conv"));
      norms_[i].collect(set, join_name(block, "bn"));
    }
  }

  std::vector<Conv3d<T>>& convs() { return convs_; }
  std::vector<BatchNorm3d<T>>& norms() { return norms_; }

 private:
  BackboneConfig cfg_;
  std::vector<Conv3d<T>> convs_;
  std::vector<BatchNorm3d<T>> norms_;
};

// [B, C, T, W, H] -> [B, C*W*H, T]; row c*W*H + w*H + h holds volume(c, :, w, h).
template <class T>
Tensor<T> aggregate_maps(const Tensor<T>& volume) {
  if (volume.rank() != 5) throw ShapeError("aggregate_maps: expects [B,C,T,W,H], got " + to_string(volume.shape()));
  const std::size_t B = volume.dim(0), C = volume.dim(1), Tn = volume.dim(2), W = volume.dim(3), H = volume.dim(4);
  return reshape(permute(volume, {0, 1, 3, 4, 2}), {B, C * W * H, Tn});
}

// Inverse of aggregate_maps.
template <class T>
Tensor<T> split_maps(const Tensor<T>& series, std::size_t channels, std::size_t width, std::size_t height) {
  if (series.rank() != 3 || series.dim(1) != channels * width * height) {
    throw ShapeError("split_maps: series " + to_string(series.shape()) + " does not match C*W*H");
  }
  const std::size_t B = series.dim(0), Tn = series.dim(2);
  return permute(reshape(series, {B, channels, width, height, Tn}), {0, 1, 4, 2, 3});
}

// Keeps columns {0, r, 2r, ...} of [B, CWH, T] for each rate r.
template <class T>
std::vector<Tensor<T>> temporal_downsample(const Tensor<T>& series, const std::vector<std::size_t>& rates) {
  if (rates.empty()) throw std::invalid_argument("temporal_downsample: empty rate list");
  bool has_identity = false;
  for (std::size_t r : rates) {
    if (r == 0) throw std::invalid_argument("temporal_downsample: rates must be >= 1");
    has_identity = has_identity || r == 1;
  }
  if (!has_identity) throw std::invalid_argument("temporal_downsample: rate 1 (the original scale) must be present");
  const std::size_t Tn = series.shape().back();
  std::vector<Tensor<T>> out;
  for (std::size_t r : rates) {
    if (r == 1) {
      out.push_back(series);
      continue;
    }
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < Tn; t += r) keep.push_back(t);
    out.push_back(index_select(series, -1, keep));
  }
  return out;
}

inline std::size_t downsampled_length(std::size_t length, std::size_t rate) { return (length + rate - 1) / rate; }

template <class T>
Tensor<T> sinusoidal_encoding(std::size_t length, std::size_t d_model) {
  std::vector<T> pe(length * d_model);
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d_model));
      const double angle = static_cast<double>(t) * freq;
      pe[t * d_model + i] = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return Tensor<T>({length, d_model}, std::move(pe));
}

// Per-scale encoder: shared per-time-step projection, positional encoding,
// post-norm self-attention layers each followed by a two-layer feed-forward
// block, mean pooling over time and a linear head.
template <class T>
class ScaleTransformer {
 public:
  struct Layer {
    MultiHeadAttention<T> attention;
    LayerNorm<T> attention_norm;
    Linear<T> ff_in, ff_out;
    LayerNorm<T> ff_norm;
  };

  ScaleTransformer() = default;
  ScaleTransformer(std::size_t series_channels, const BackboneConfig& cfg, Rng& rng)
      : positional_(cfg.positional_encoding), input_(series_channels, cfg.d_model, rng) {
    if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0) {
      throw std::invalid_argument("scale_transformer: d_model " + std::to_string(cfg.d_model) +
                                  " not divisible by " + std::to_string(cfg.heads) + " heads");
    }
    for (std::size_t l = 0; l < cfg.attention_layers; ++l) {
      Layer layer;
      layer.attention = MultiHeadAttention<T>(cfg.d_model, cfg.heads, rng);
      layer.attention_norm = LayerNorm<T>(cfg.d_model);
      layer.ff_in = Linear<T>(cfg.d_model, cfg.ff_dim, rng);
      layer.ff_out = Linear<T>(cfg.ff_dim, cfg.d_model, rng);
      layer.ff_norm = LayerNorm<T>(cfg.d_model);
      layers_.push_back(std::move(layer));
    }
    output_ = Linear<T>(cfg.d_model, cfg.scale_dim, rng);
  }

  // [B, CWH, T_k] -> [B, scale_dim]
  Tensor<T> operator()(const Tensor<T>& series) const {
    if (series.rank() != 3 || series.dim(1) != input_.in_features()) {
      throw ShapeError("scale_transformer: series " + to_string(series.shape()) + " does not have " +
                       std::to_string(input_.in_features()) + " channels");
    }
    const std::size_t steps = series.dim(2);
    auto x = input_(permute(series, {0, 2, 1}));
    if (positional_) x = add(x, sinusoidal_encoding<T>(steps, input_.out_features()));
    for (const auto& layer : layers_) {
      x = layer.attention_norm(add(x, layer.attention(x)));
      x = layer.ff_norm(add(x, layer.ff_out(relu(layer.ff_in(x)))));
    }
    return output_(mean_axis(x, 1));
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    input_.collect(set, join_name(prefix, "input"));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const std::string p = join_name(prefix, "layer" + std::to_string(l + 1));
      layers_[l].attention.collect(set, join_name(p, "attention"));
      layers_[l].attention_norm.collect(set, join_name(p, "attention_norm"));
      layers_[l].ff_in.collect(set, join_name(p, "ff_in"));
      layers_[l].ff_out.collect(set, join_name(p, "ff_out"));
      layers_[l].ff_norm.collect(set, join_name(p, "ff_norm"));
    }
    output_.collect(set, join_name(prefix, "output"));
  }

  void set_positional_encoding(bool on) { positional_ = on; }

 private:
  bool positional_ = true;
  Linear<T> input_;
  std::vector<Layer> layers_;
  Linear<T> output_;
};

// Concatenation of the per-scale vectors followed by a linear map to the
// descriptor size.
template <class T>
class ScaleFusion {
 public:
  ScaleFusion() = default;
  ScaleFusion(std::size_t scales, std::size_t scale_dim, std::size_t descriptor_dim, Rng& rng)
      : scales_(scales), proj_(scales * scale_dim, descriptor_dim, rng) {}

  Tensor<T> operator()(const std::vector<Tensor<T>>& per_scale) const {
    if (per_scale.size() != scales_) {
      throw std::invalid_argument("fuse_scales: expected " + std::to_string(scales_) + " scale vectors, got " +
                                  std::to_string(per_scale.size()));
    }
    return proj_(concat(per_scale, -1));
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const { proj_.collect(set, prefix); }
  Linear<T>& projection() { return proj_; }

 private:
  std::size_t scales_ = 0;
  Linear<T> proj_;
};

template <class T>
struct BackboneOutput {
  Tensor<T> volume;                  // [B, C, T, W, H]
  std::vector<Tensor<T>> per_scale;  // K x [B, scale_dim]
  Tensor<T> descriptor;              // [B, descriptor_dim]
};

template <class T>
class C3DTransformer {
 public:
  C3DTransformer() = default;
  C3DTransformer(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    c3d_ = C3DBlock<T>(cfg, rng);
    const std::size_t n_transformers = cfg.share_transformers ? 1 : cfg.rates.size();
    for (std::size_t k = 0; k < n_transformers; ++k) transformers_.emplace_back(cfg.series_channels(), cfg, rng);
    fusion_ = ScaleFusion<T>(cfg.rates.size(), cfg.scale_dim, cfg.descriptor_dim, rng);
  }

  const BackboneConfig& config() const { return cfg_; }

  BackboneOutput<T> operator()(const Tensor<T>& clips, const ForwardContext& ctx) const {
    BackboneOutput<T> out;
    out.volume = c3d_(clips, ctx);
    auto scales = temporal_downsample(aggregate_maps(out.volume), cfg_.rates);
    for (std::size_t k = 0; k < scales.size(); ++k) {
      out.per_scale.push_back(transformers_[cfg_.share_transformers ? 0 : k](scales[k]));
    }
    out.descriptor = fusion_(out.per_scale);
    return out;
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    c3d_.collect(set, join_name(prefix, "c3d"));
    for (std::size_t k = 0; k < transformers_.size(); ++k) {
      transformers_[k].collect(set, join_name(prefix, "transformer" + std::to_string(k + 1)));
    }
    fusion_.collect(set, join_name(prefix, "fusion"));
  }

  void collect_c3d(ParameterSet<T>& set, const std::string& prefix) const {
    c3d_.collect(set, join_name(prefix, "c3d"));
  }

  const C3DBlock<T>& c3d() const { return c3d_; }
  C3DBlock<T>& c3d() { return c3d_; }
  std::vector<ScaleTransformer<T>>& transformers() { return transformers_; }

 private:
  BackboneConfig cfg_;
  C3DBlock<T> c3d_;
  std::vector<ScaleTransformer<T>> transformers_;
  ScaleFusion<T> fusion_;
};

}  // namespace facet
