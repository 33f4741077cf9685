#pragma once

// Video-level prediction model. Five single-trait branches of 1-D convolutions
// read the heatmap (frequencies as the sequence axis) and each is supervised by
// its own two-layer regressor; a multi-trait module fuses the five branch
// feature maps through residual 1-D convolutions and predicts all traits.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/layers.hpp"
#include "facet/spectral.hpp"
#include "facet/types.hpp"

namespace facet {

struct HeadConfig {
  std::size_t descriptor_dim = 64;  // D
  std::size_t frequencies = 32;     // M
  std::vector<std::size_t> branch_channels{64, 64, 64};
  std::size_t kernel = 3;
  double dropout = 0.5;
  std::size_t regressor_hidden = 64;
  std::size_t residual_channels = 128;
  std::vector<std::size_t> fc_dims{64, 32};
  // false ablates the multi-trait module; the single-trait regressors are
  // then the reported predictions.
  bool multi_task = true;

  std::size_t input_channels() const { return 2 * descriptor_dim; }
  std::size_t branch_width() const { return branch_channels.back(); }
};

// Per-element standardization fitted on training heatmaps.
template <class T>
struct HeatmapNormalizer {
  Tensor<T> mean;    // [2*D*M]
  Tensor<T> stddev;  // [2*D*M]

  HeatmapNormalizer() = default;
  explicit HeatmapNormalizer(std::size_t n) : mean(Tensor<T>::zeros({n})), stddev(Tensor<T>::full({n}, T(1))) {}

  void fit(const std::vector<SpectralHeatmap>& maps) {
    if (maps.empty()) throw std::invalid_argument("heatmap normalizer: no training heatmaps");
    const std::size_t n = mean.size();
    std::vector<double> s(n, 0.0), ss(n, 0.0);
    for (const auto& h : maps) {
      if (2 * h.amplitude.size() != n) throw ShapeError("heatmap normalizer: heatmap size mismatch");
      for (std::size_t i = 0; i < n; ++i) {
        const double v = i < n / 2 ? h.amplitude[i] : h.phase[i - n / 2];
        s[i] += v;
        ss[i] += v * v;
      }
    }
    const double count = static_cast<double>(maps.size());
    auto mv = mean.data();
    auto sv = stddev.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double m = s[i] / count;
      const double var = std::max(0.0, ss[i] / count - m * m);
      mv[i] = static_cast<T>(m);
      sv[i] = static_cast<T>(std::sqrt(var) + 1e-6);
    }
  }

  // [B, 2, D, M] -> same shape, constant transform (no gradient to stats).
  Tensor<T> operator()(const Tensor<T>& x) const {
    const std::size_t n = mean.size();
    if (x.size() % n != 0) throw ShapeError("heatmap normalizer: input size mismatch");
    std::vector<T> v(x.values());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mean.values()[i % n]) / stddev.values()[i % n];
    return Tensor<T>(x.shape(), std::move(v));
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    set.add(join_name(prefix, "mean"), mean, false);
    set.add(join_name(prefix, "stddev"), stddev, false);
  }
};

template <class T>
struct HeadOutputs {
  Tensor<T> single;  // [B, 5]
  Tensor<T> multi;   // [B, 5]; undefined when the multi-trait module is ablated
  std::vector<Tensor<T>> branch_features;

  // Final reported prediction.
  const Tensor<T>& reported() const { return multi.defined() ? multi : single; }
};

// Mean over the batch of sum_i (single_i - label_i)^2 + sum_i (multi_i - label_i)^2.
template <class T>
Tensor<T> head_loss(const Tensor<T>& single, const Tensor<T>& multi, const Tensor<T>& labels) {
  if (labels.rank() != 2 || labels.dim(1) != kTraitCount) throw ShapeError("head_loss: labels must be [B,5]");
  const T inv_batch = T(1) / static_cast<T>(labels.dim(0));
  auto total = mse(single, labels, Reduction::Sum);
  if (multi.defined()) total = add(total, mse(multi, labels, Reduction::Sum));
  return scale(total, inv_batch);
}

template <class T>
Tensor<T> head_loss(const HeadOutputs<T>& out, const Tensor<T>& labels) {
  return head_loss(out.single, out.multi, labels);
}

template <class T>
class MultiTaskHead {
 public:
  struct Branch {
    std::vector<Conv1d<T>> convs;
    Linear<T> fc1, fc2;
  };
  struct ResidualBlock {
    Conv1d<T> conv1, conv2;
    Conv1d<T> skip;  // 1x1 projection, only when channel counts differ
    bool projected = false;
  };

  MultiTaskHead() = default;
  MultiTaskHead(const HeadConfig& cfg, Rng& rng)
      : cfg_(cfg), normalizer_(2 * cfg.descriptor_dim * cfg.frequencies) {
    const std::size_t pad = cfg.kernel / 2;
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      Branch b;
      std::size_t in = cfg.input_channels();
      for (std::size_t out : cfg.branch_channels) {
        b.convs.emplace_back(in, out, cfg.kernel, 1, pad, rng);
        in = out;
      }
      b.fc1 = Linear<T>(cfg.branch_width() * cfg.frequencies, cfg.regressor_hidden, rng);
      b.fc2 = Linear<T>(cfg.regressor_hidden, 1, rng);
      branches_.push_back(std::move(b));
    }
    std::size_t in = kTraitCount * cfg.branch_width();
    for (int r = 0; r < 2; ++r) {
      ResidualBlock block;
      block.conv1 = Conv1d<T>(in, cfg.residual_channels, cfg.kernel, 1, pad, rng);
      block.conv2 = Conv1d<T>(cfg.residual_channels, cfg.residual_channels, cfg.kernel, 1, pad, rng);
      block.projected = in != cfg.residual_channels;
      if (block.projected) block.skip = Conv1d<T>(in, cfg.residual_channels, 1, 1, 0, rng);
      residual_.push_back(std::move(block));
      in = cfg.residual_channels;
    }
    for (std::size_t width : cfg.fc_dims) {
      fcs_.emplace_back(in, width, rng);
      in = width;
    }
    fcs_.emplace_back(in, kTraitCount, rng);
  }

  const HeadConfig& config() const { return cfg_; }
  HeatmapNormalizer<T>& normalizer() { return normalizer_; }
  void set_multi_task(bool on) { cfg_.multi_task = on; }

  // [B, 2, D, M] -> [B, C_b, M] for one trait (1-based).
  Tensor<T> branch_forward(const Tensor<T>& heatmaps, std::size_t trait_index, const ForwardContext& ctx) const {
    check_trait(trait_index);
    auto x = as_sequence(heatmaps);
    for (const auto& conv : branches_[trait_index - 1].convs) x = relu(dropout(conv(x), cfg_.dropout, ctx));
    return x;
  }

  // [B, C_b, M] -> [B, 1] in [0,1].
  Tensor<T> single_trait_head(const Tensor<T>& feature, std::size_t trait_index) const {
    check_trait(trait_index);
    const auto& b = branches_[trait_index - 1];
    auto flat = reshape(feature, {feature.dim(0), feature.size() / feature.dim(0)});
    return sigmoid(b.fc2(relu(b.fc1(flat))));
  }

  // Five [B, C_b, M] maps -> [B, 5] in [0,1].
  Tensor<T> multi_trait_forward(const std::vector<Tensor<T>>& features) const {
    if (features.size() != kTraitCount) {
      throw std::invalid_argument("multi_trait_forward: expected 5 branch features, got " +
                                  std::to_string(features.size()));
    }
    for (const auto& f : features) {
      if (f.shape() != features.front().shape()) throw ShapeError("multi_trait_forward: branch features differ in shape");
    }
    auto x = concat(features, 1);
    for (const auto& block : residual_) {
      auto skip = block.projected ? block.skip(x) : x;
      x = relu(add(block.conv2(relu(block.conv1(x))), skip));
    }
    x = global_avg_pool(x);
    for (std::size_t i = 0; i + 1 < fcs_.size(); ++i) x = relu(fcs_[i](x));
    return sigmoid(fcs_.back()(x));
  }

  // Unnormalized heatmaps in; the fitted standardization is applied first.
  HeadOutputs<T> operator()(const Tensor<T>& heatmaps, const ForwardContext& ctx) const {
    auto x = normalizer_(heatmaps);
    HeadOutputs<T> out;
    std::vector<Tensor<T>> singles;
    for (std::size_t i = 1; i <= kTraitCount; ++i) {
      out.branch_features.push_back(branch_forward(x, i, ctx));
      singles.push_back(single_trait_head(out.branch_features.back(), i));
    }
    out.single = concat(singles, 1);
    if (cfg_.multi_task) out.multi = multi_trait_forward(out.branch_features);
    return out;
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    normalizer_.collect(set, join_name(prefix, "input_norm"));
    for (std::size_t i = 0; i < kTraitCount; ++i) collect_branch(set, prefix, i + 1);
    for (std::size_t r = 0; r < residual_.size(); ++r) {
      const std::string p = join_name(prefix, "multi.res" + std::to_string(r + 1));
      residual_[r].conv1.collect(set, join_name(p, "conv1"));
      residual_[r].conv2.collect(set, join_name(p, "conv2"));
      if (residual_[r].projected) residual_[r].skip.collect(set, join_name(p, "skip"));
    }
    for (std::size_t i = 0; i < fcs_.size(); ++i) fcs_[i].collect(set, join_name(prefix, "multi.fc" + std::to_string(i + 1)));
  }

  void collect_branch(ParameterSet<T>& set, const std::string& prefix, std::size_t trait_index) const {
    const auto& b = branches_[trait_index - 1];
    const std::string p = join_name(prefix, "branch" + std::to_string(trait_index));
    for (std::size_t c = 0; c < b.convs.size(); ++c) b.convs[c].collect(set, join_name(p, "conv" + std::to_string(c + 1)));
    b.fc1.collect(set, join_name(p, "fc1"));
    b.fc2.collect(set, join_name(p, "fc2"));
  }

 private:
  // [B, 2, D, M] -> [B, 2D, M]; channel s*D + d.
  Tensor<T> as_sequence(const Tensor<T>& heatmaps) const {
    if (heatmaps.rank() != 4 || heatmaps.dim(1) != 2 || heatmaps.dim(2) != cfg_.descriptor_dim ||
        heatmaps.dim(3) != cfg_.frequencies) {
      throw ShapeError("multitask head: heatmaps must be [B,2," + std::to_string(cfg_.descriptor_dim) + "," +
                       std::to_string(cfg_.frequencies) + "], got " + to_string(heatmaps.shape()));
    }
    return reshape(heatmaps, {heatmaps.dim(0), cfg_.input_channels(), cfg_.frequencies});
  }

  static void check_trait(std::size_t trait_index) {
    if (trait_index < 1 || trait_index > kTraitCount) {
      throw std::out_of_range("trait index must be in 1..5, got " + std::to_string(trait_index));
    }
  }

  HeadConfig cfg_;
  HeatmapNormalizer<T> normalizer_;
  std::vector<Branch> branches_;
  std::vector<ResidualBlock> residual_;
  std::vector<Linear<T>> fcs_;
};

}  // namespace facet
