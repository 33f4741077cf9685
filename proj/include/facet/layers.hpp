#pragma once

// Parameter-owning layers. Every layer registers its tensors under a dotted
// name path so that optimizers and checkpoints address them uniformly.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/attention.hpp"
#include "facet/conv.hpp"
#include "facet/norm.hpp"
#include "facet/ops.hpp"
#include "facet/rng.hpp"

namespace facet {

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for buffers such as running statistics
};

template <class T>
class ParameterSet {
 public:
  void add(std::string name, Tensor<T> tensor, bool trainable = true) {
    if (!names_.emplace(name, items_.size()).second) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    items_.push_back({std::move(name), std::move(tensor), trainable});
  }

  const std::vector<Parameter<T>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = names_.find(name);
    return it == names_.end() ? nullptr : &items_[it->second];
  }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : items_) {
      if (p.trainable) out.push_back(p.tensor);
    }
    return out;
  }

  void zero_grad() const {
    for (const auto& p : items_) {
      if (p.trainable) {
        auto t = p.tensor;
        t.zero_grad();
      }
    }
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p.tensor.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> items_;
  std::map<std::string, std::size_t> names_;
};

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;

  Rng& generator() const {
    if (!rng) throw std::logic_error("training-mode forward pass needs a random generator");
    return *rng;
  }
};

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, const ForwardContext& ctx) {
  if (!ctx.training || p == 0.0) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout: probability must lie in [0, 1)");
    return x;
  }
  return dropout(x, p, true, ctx.generator());
}

// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(std::size_t d_in, std::size_t d_out, Rng& rng)
      : weight(fan_in_uniform<T>({d_out, d_in}, d_in, rng)), bias(fan_in_uniform<T>({d_out}, d_in, rng)) {}

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    set.add(join_name(prefix, "weight"), weight);
    set.add(join_name(prefix, "bias"), bias);
  }
};

template <class T>
struct Conv3d {
  Tensor<T> weight;
  Tensor<T> bias;
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};

  Conv3d() = default;
  Conv3d(std::size_t in_ch, std::size_t out_ch, Triple kernel, Triple stride_, Triple padding_, Rng& rng)
      : stride(stride_), padding(padding_) {
    const std::size_t fan_in = in_ch * kernel[0] * kernel[1] * kernel[2];
    weight = fan_in_uniform<T>({out_ch, in_ch, kernel[0], kernel[1], kernel[2]}, fan_in, rng);
    bias = fan_in_uniform<T>({out_ch}, fan_in, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv3d(x, weight, bias, stride, padding); }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    set.add(join_name(prefix, "weight"), weight);
    set.add(join_name(prefix, "bias"), bias);
  }
};

template <class T>
struct Conv1d {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv1d() = default;
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride_, std::size_t padding_,
         Rng& rng)
      : weight(fan_in_uniform<T>({out_ch, in_ch, kernel}, in_ch * kernel, rng)),
        bias(fan_in_uniform<T>({out_ch}, in_ch * kernel, rng)),
        stride(stride_),
        padding(padding_) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv1d(x, weight, bias, stride, padding); }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    set.add(join_name(prefix, "weight"), weight);
    set.add(join_name(prefix, "bias"), bias);
  }
};

template <class T>
struct BatchNorm3d {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm3d() = default;
  explicit BatchNorm3d(std::size_t channels, T eps_ = T(1e-5), T momentum_ = T(0.1))
      : gamma(Tensor<T>::full({channels}, T(1), true)),
        beta(Tensor<T>::zeros({channels}, true)),
        running_mean(Tensor<T>::zeros({channels})),
        running_var(Tensor<T>::full({channels}, T(1))),
        eps(eps_),
        momentum(momentum_) {}

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext& ctx) const {
    auto rm = running_mean;
    auto rv = running_var;
    return batchnorm3d(x, gamma, beta, eps, ctx.training, RunningStats<T>{rm.data(), rv.data(), momentum});
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    set.add(join_name(prefix, "gamma"), gamma);
    set.add(join_name(prefix, "beta"), beta);
    set.add(join_name(prefix, "running_mean"), running_mean, false);
    set.add(join_name(prefix, "running_var"), running_var, false);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gamma(Tensor<T>::full({d}, T(1), true)), beta(Tensor<T>::zeros({d}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    set.add(join_name(prefix, "gamma"), gamma);
    set.add(join_name(prefix, "beta"), beta);
  }
};

// Self-attention with separate query/key/value projections and an output
// projection over the concatenated heads.
template <class T>
struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear<T> query, key, value, output;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t heads_, Rng& rng) : heads(heads_) {
    if (heads_ == 0 || d_model % heads_ != 0) {
      throw std::invalid_argument("attention: d_model " + std::to_string(d_model) + " is not divisible by " +
                                  std::to_string(heads_) + " heads");
    }
    query = Linear<T>(d_model, d_model, rng);
    key = Linear<T>(d_model, d_model, rng);
    value = Linear<T>(d_model, d_model, rng);
    output = Linear<T>(d_model, d_model, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, std::vector<T>* weights_out = nullptr) const {
    auto mixed = attention_core(query(x), key(x), value(x), heads, weights_out);
    return output(mixed);
  }

  void collect(ParameterSet<T>& set, const std::string& prefix) const {
    query.collect(set, join_name(prefix, "query"));
    key.collect(set, join_name(prefix, "key"));
    value.collect(set, join_name(prefix, "value"));
    output.collect(set, join_name(prefix, "output"));
  }
};

}  // namespace facet
