#pragma once

// Domain-specific learning: for each trait a personality encoder and a noise
// encoder split the segment representation in two; a classifier reads the
// personality half, an orthogonality penalty keeps the halves apart and a
// decoder must rebuild the representation from both.

#include <stdexcept>
#include <string>
#include <vector>

#include "facet/layers.hpp"
#include "facet/types.hpp"

namespace facet {

enum class Orthogonality { PerSample, BatchMatrix };
enum class DecoderCombine { Concat, Sum };

struct DSLossWeights {
  double alpha = 1.0;
  double beta = 0.05;
  double gamma = 0.5;

  void validate() const {
    if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) throw std::invalid_argument("DS loss weights must be non-negative");
    if (!(alpha > 0.0)) throw std::invalid_argument("DS loss weight alpha must be positive");
  }
};

struct DSConfig {
  bool enabled = true;
  DSLossWeights weights;
  std::size_t input_dim = 64;
  std::size_t dim = 32;
  std::size_t decoder_hidden = 64;
  double dropout = 0.2;
  bool per_scale = false;
  Orthogonality orthogonality = Orthogonality::PerSample;
  DecoderCombine decoder_combine = DecoderCombine::Concat;
  // Each classifier predicts all five traits; the trait estimate is the mean
  // over classifiers.
  bool joint_heads = false;
};

template <class T>
struct DSFeaturePair {
  Tensor<T> personality;  // [B, dim]
  Tensor<T> noise;        // [B, dim]
  std::size_t trait_index = 1;
};

// Two fully connected layers with ReLU and dropout between them.
template <class T>
struct DSEncoder {
  Linear<T> first, second;
  double dropout_p = 0.0;

  DSEncoder() = default;
  DSEncoder(std::size_t in, std::size_t dim, double p, Rng& rng) : first(in, dim, rng), second(dim, dim, rng), dropout_p(p) {}

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
    return second(dropout(relu(first(x)), dropout_p, ctx));
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    first.collect(set, join_name(prefix, "fc1"));
    second.collect(set, join_name(prefix, "fc2"));
  }
};

// Squared error summed over traits and batch. predictions/labels: [B, 5].
template <class T>
Tensor<T> loss_supervision(const Tensor<T>& predictions, const Tensor<T>& labels) {
  if (labels.rank() != 2 || labels.dim(1) != kTraitCount) throw ShapeError("loss_supervision: labels must be [B,5]");
  for (T v : labels.values()) {
    if (!(v >= T(0) && v <= T(1))) throw std::domain_error("loss_supervision: label outside [0,1]");
  }
  return mse(predictions, labels, Reduction::Sum);
}

// Sum over traits of the squared per-sample inner products (PerSample), or of
// ||P^T N||_F^2 over the batch matrices (BatchMatrix).
template <class T>
Tensor<T> loss_orthogonality(const std::vector<DSFeaturePair<T>>& pairs,
                             Orthogonality mode = Orthogonality::PerSample) {
  if (pairs.empty()) throw std::invalid_argument("loss_orthogonality: no feature pairs");
  std::vector<Tensor<T>> terms;
  for (const auto& pair : pairs) {
    if (pair.personality.shape() != pair.noise.shape()) {
      throw ShapeError("loss_orthogonality: personality " + to_string(pair.personality.shape()) + " vs noise " +
                       to_string(pair.noise.shape()) + " for trait " + std::to_string(pair.trait_index));
    }
    if (mode == Orthogonality::PerSample) {
      terms.push_back(sum(square(rowwise_dot(pair.personality, pair.noise))));
    } else {
      terms.push_back(sum(square(matmul(transpose(pair.personality), pair.noise))));
    }
  }
  return sum(concat(terms, 0));
}

// Mean over traits, batch and feature dimension of the squared reconstruction
// error.
template <class T>
Tensor<T> reconstruction_loss(const std::vector<Tensor<T>>& reconstructions, const std::vector<Tensor<T>>& originals) {
  if (reconstructions.size() != originals.size() || reconstructions.empty()) {
    throw std::invalid_argument("reconstruction_loss: need one original per reconstruction");
  }
  std::vector<Tensor<T>> terms;
  std::size_t count = 0;
  for (std::size_t i = 0; i < reconstructions.size(); ++i) {
    if (reconstructions[i].shape() != originals[i].shape()) {
      throw ShapeError("reconstruction_loss: decoder output " + to_string(reconstructions[i].shape()) +
                       " does not match original " + to_string(originals[i].shape()));
    }
    terms.push_back(mse(reconstructions[i], originals[i], Reduction::Sum));
    count += originals[i].size();
  }
  return scale(sum(concat(terms, 0)), T(1) / static_cast<T>(count));
}

template <class T>
Tensor<T> loss_overall(const Tensor<T>& l1, const Tensor<T>& l2, const Tensor<T>& l3, const DSLossWeights& w) {
  w.validate();
  for (const auto* l : {&l1, &l2, &l3}) {
    if (l->size() != 1) throw ShapeError("loss_overall: component losses must be scalars");
    if (l->item() < T(0)) throw std::domain_error("loss_overall: component losses must be non-negative");
  }
  auto total = scale(l1, static_cast<T>(w.alpha));
  if (w.beta != 0.0) total = add(total, scale(l2, static_cast<T>(w.beta)));
  if (w.gamma != 0.0) total = add(total, scale(l3, static_cast<T>(w.gamma)));
  return total;
}

template <class T>
struct DSLosses {
  Tensor<T> supervision;
  Tensor<T> orthogonality;
  Tensor<T> reconstruction;
  Tensor<T> overall;
  Tensor<T> predictions;  // [B, 5]
};

template <class T>
class DomainSpecificModule {
 public:
  DomainSpecificModule() = default;
  DomainSpecificModule(const DSConfig& cfg, Rng& rng) : cfg_(cfg) {
    const std::size_t head_out = cfg.joint_heads ? kTraitCount : 1;
    const std::size_t dec_in = cfg.decoder_combine == DecoderCombine::Concat ? 2 * cfg.dim : cfg.dim;
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      personality_.emplace_back(cfg.input_dim, cfg.dim, cfg.dropout, rng);
      noise_.emplace_back(cfg.input_dim, cfg.dim, cfg.dropout, rng);
      heads_.emplace_back(cfg.dim, head_out, rng);
      decoder_in_.emplace_back(dec_in, cfg.decoder_hidden, rng);
      decoder_out_.emplace_back(cfg.decoder_hidden, cfg.input_dim, rng);
    }
  }

  const DSConfig& config() const { return cfg_; }
  std::size_t encoder_count() const { return personality_.size() + noise_.size(); }

  // trait_index is 1-based. With with_noise unset the noise encoder is not
  // evaluated and the pair's noise tensor is left undefined.
  DSFeaturePair<T> encode(const Tensor<T>& input, std::size_t trait_index, const ForwardContext& ctx,
                          bool with_noise = true) const {
    check_trait(trait_index);
    if (input.rank() != 2 || input.dim(1) != cfg_.input_dim) {
      throw ShapeError("ds_encode: input must be [B," + std::to_string(cfg_.input_dim) + "], got " +
                       to_string(input.shape()));
    }
    DSFeaturePair<T> pair;
    pair.trait_index = trait_index;
    pair.personality = personality_[trait_index - 1](input, ctx);
    if (with_noise) pair.noise = noise_[trait_index - 1](input, ctx);
    return pair;
  }

  std::vector<DSFeaturePair<T>> encode_all(const Tensor<T>& input, const ForwardContext& ctx,
                                           bool with_noise = true) const {
    std::vector<DSFeaturePair<T>> pairs;
    for (std::size_t i = 1; i <= kTraitCount; ++i) pairs.push_back(encode(input, i, ctx, with_noise));
    return pairs;
  }

  // The noise branch only matters when one of its loss terms is weighted in.
  bool uses_noise_branch() const {
    return cfg_.enabled && (cfg_.weights.beta != 0.0 || cfg_.weights.gamma != 0.0);
  }

  // [B, 5] in [0,1].
  Tensor<T> predict(const std::vector<DSFeaturePair<T>>& pairs) const {
    check_pairs(pairs);
    std::vector<Tensor<T>> outs;
    for (std::size_t i = 0; i < kTraitCount; ++i) outs.push_back(sigmoid(heads_[i](pairs[i].personality)));
    if (!cfg_.joint_heads) return concat(outs, 1);
    auto acc = outs[0];
    for (std::size_t i = 1; i < kTraitCount; ++i) acc = add(acc, outs[i]);
    return scale(acc, T(1) / static_cast<T>(kTraitCount));
  }

  Tensor<T> supervision(const std::vector<DSFeaturePair<T>>& pairs, const Tensor<T>& labels) const {
    check_pairs(pairs);
    if (!cfg_.joint_heads) return loss_supervision(predict(pairs), labels);
    std::vector<Tensor<T>> terms;
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      terms.push_back(loss_supervision(sigmoid(heads_[i](pairs[i].personality)), labels));
    }
    return sum(concat(terms, 0));
  }

  std::vector<Tensor<T>> reconstruct(const std::vector<DSFeaturePair<T>>& pairs, const ForwardContext& ctx) const {
    check_pairs(pairs);
    std::vector<Tensor<T>> out;
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      auto joined = cfg_.decoder_combine == DecoderCombine::Concat
                        ? concat<T>({pairs[i].personality, pairs[i].noise}, 1)
                        : add(pairs[i].personality, pairs[i].noise);
      auto rec = decoder_out_[i](dropout(relu(decoder_in_[i](joined)), cfg_.dropout, ctx));
      if (rec.dim(1) != cfg_.input_dim) throw ShapeError("ds_decode: decoder output dimension mismatch");
      out.push_back(rec);
    }
    return out;
  }

  // All three terms plus their weighted sum. The reconstruction target is the
  // module input with its graph history cut. When neither the orthogonality
  // nor the reconstruction term is weighted in (or DS is disabled) the noise
  // encoders and decoders are skipped, which makes the computation identical
  // to plain MSE training on the classifier heads.
  DSLosses<T> losses(const Tensor<T>& input, const Tensor<T>& labels, const ForwardContext& ctx) const {
    DSLosses<T> out;
    const bool noise = uses_noise_branch();
    auto pairs = encode_all(input, ctx, noise);
    out.predictions = predict(pairs);
    out.supervision = cfg_.joint_heads ? supervision(pairs, labels) : loss_supervision(out.predictions, labels);
    if (!noise) {
      out.orthogonality = Tensor<T>::scalar(T(0));
      out.reconstruction = Tensor<T>::scalar(T(0));
      out.overall = scale(out.supervision, static_cast<T>(cfg_.weights.alpha));
      return out;
    }
    out.orthogonality = loss_orthogonality(pairs, cfg_.orthogonality);
    auto target = input.detach();
    out.reconstruction = reconstruction_loss(reconstruct(pairs, ctx), std::vector<Tensor<T>>(kTraitCount, target));
    out.overall = loss_overall(out.supervision, out.orthogonality, out.reconstruction, cfg_.weights);
    return out;
  }

  // Segment-level trait estimate, evaluation mode.
  std::vector<TraitVector> predict_traits(const Tensor<T>& input) const {
    ForwardContext eval;
    auto preds = predict(encode_all(input, eval, false));
    std::vector<TraitVector> out(input.dim(0));
    for (std::size_t b = 0; b < out.size(); ++b)
      for (std::size_t i = 0; i < kTraitCount; ++i) out[b][i] = static_cast<double>(preds.values()[b * kTraitCount + i]);
    return out;
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      const std::string t = join_name(prefix, "trait" + std::to_string(i + 1));
      personality_[i].collect(set, join_name(t, "personality"));
      heads_[i].collect(set, join_name(t, "classifier"));
    }
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      const std::string t = join_name(prefix, "trait" + std::to_string(i + 1));
      noise_[i].collect(set, join_name(t, "noise"));
      decoder_in_[i].collect(set, join_name(t, "decoder.fc1"));
      decoder_out_[i].collect(set, join_name(t, "decoder.fc2"));
    }
  }

  // Only the encoders and classifiers that the supervision term touches.
  void collect_supervised(ParameterSet<T>& set, const std::string& prefix) const {
    for (std::size_t i = 0; i < kTraitCount; ++i) {
      const std::string t = join_name(prefix, "trait" + std::to_string(i + 1));
      personality_[i].collect(set, join_name(t, "personality"));
      heads_[i].collect(set, join_name(t, "classifier"));
    }
  }

 private:
  static void check_trait(std::size_t trait_index) {
    if (trait_index < 1 || trait_index > kTraitCount) {
      throw std::out_of_range("trait index must be in 1..5, got " + std::to_string(trait_index));
    }
  }
  static void check_pairs(const std::vector<DSFeaturePair<T>>& pairs) {
    if (pairs.size() != kTraitCount) throw std::invalid_argument("expected one feature pair per trait");
  }

  DSConfig cfg_;
  std::vector<DSEncoder<T>> personality_, noise_;
  std::vector<Linear<T>> heads_;
  std::vector<Linear<T>> decoder_in_, decoder_out_;
};

}  // namespace facet
