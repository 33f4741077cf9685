#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "facet/ops.hpp"

namespace facet {

// Non-owning view onto a layer's running mean/variance buffers.
template <class T>
struct RunningStats {
  std::span<T> mean;
  std::span<T> var;
  T momentum = T(0.1);
};

// Per-channel normalization of [B,C,...] over every axis except C. Train mode
// normalizes with the batch statistics and folds them into `stats` (unbiased
// variance, as is conventional); eval mode uses `stats` as constants.
template <class T>
Tensor<T> batchnorm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps, bool training,
                    RunningStats<T> stats) {
  if (input.rank() < 2) throw ShapeError("batchnorm: input must be [B,C,...]");
  const std::size_t B = input.dim(0), C = input.dim(1);
  if (gamma.size() != C || beta.size() != C || stats.mean.size() != C || stats.var.size() != C) {
    throw ShapeError("batchnorm: channel axis (dim 1) is " + std::to_string(C) +
                     " but affine/running parameters disagree");
  }
  if (!all_finite<T>(input.data())) throw std::domain_error("batchnorm: non-finite input");
  const std::size_t inner = input.size() / (B * C);
  const std::size_t count = B * inner;
  if (training && count < 2) {
    throw std::invalid_argument("batchnorm: training needs at least two values per channel");
  }
  const auto& x = input.values();
  std::vector<T> mu(C), inv_std(C);
  if (training) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double v = ss / static_cast<double>(count);
      mu[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
      const T unbiased = static_cast<T>(ss / static_cast<double>(count - 1));
      stats.mean[c] = (T(1) - stats.momentum) * stats.mean[c] + stats.momentum * mu[c];
      stats.var[c] = (T(1) - stats.momentum) * stats.var[c] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = stats.mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.var[c] + eps);
    }
  }
  std::vector<T> xhat(x.size()), out(x.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * inner;
      const T g = gamma.values()[c], be = beta.values()[c];
      for (std::size_t i = 0; i < inner; ++i) {
        xhat[base + i] = (x[base + i] - mu[c]) * inv_std[c];
        out[base + i] = g * xhat[base + i] + be;
      }
    }
  }
  return Tensor<T>::from_op(
      input.shape(), std::move(out), {input, gamma, beta},
      [B, C, inner, count, training, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& g = self.grad;
        for (std::size_t c = 0; c < C; ++c) {
          T sum_g = T(0), sum_gx = T(0);
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              sum_g += g[base + i];
              sum_gx += g[base + i] * xhat[base + i];
            }
          }
          if (pg.requires_grad) pg.grad[c] += sum_gx;
          if (pb.requires_grad) pb.grad[c] += sum_g;
          if (!px.requires_grad) continue;
          const T scale_c = pg.data[c] * inv_std[c];
          const T mean_g = sum_g / static_cast<T>(count);
          const T mean_gx = sum_gx / static_cast<T>(count);
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t base = (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
              if (training) {
                px.grad[base + i] += scale_c * (g[base + i] - mean_g - xhat[base + i] * mean_gx);
              } else {
                px.grad[base + i] += scale_c * g[base + i];
              }
            }
          }
        }
      });
}

template <class T>
Tensor<T> batchnorm3d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps, bool training,
                      RunningStats<T> stats) {
  if (input.rank() != 5) throw ShapeError("batchnorm3d: input must be [B,C,T,H,W], got " + to_string(input.shape()));
  return batchnorm(input, gamma, beta, eps, training, stats);
}

// Normalization over the trailing axis with a learned affine transform.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  if (input.rank() == 0) throw ShapeError("layer_norm: empty shape");
  const std::size_t d = input.shape().back();
  if (gamma.size() != d || beta.size() != d) throw ShapeError("layer_norm: trailing axis does not match gamma/beta");
  const std::size_t rows = input.size() / d;
  const auto& x = input.values();
  std::vector<T> xhat(x.size()), out(x.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * d;
    T m = T(0);
    for (std::size_t j = 0; j < d; ++j) m += p[j];
    m /= static_cast<T>(d);
    T v = T(0);
    for (std::size_t j = 0; j < d; ++j) v += (p[j] - m) * (p[j] - m);
    v /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(v + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (p[j] - m) * inv_std[r];
      out[r * d + j] = gamma.values()[j] * xhat[r * d + j] + beta.values()[j];
    }
  }
  return Tensor<T>::from_op(input.shape(), std::move(out), {input, gamma, beta},
                            [rows, d, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pg = *self.parents[1];
                              auto& pb = *self.parents[2];
                              for (std::size_t r = 0; r < rows; ++r) {
                                const T* g = self.grad.data() + r * d;
                                const T* xh = xhat.data() + r * d;
                                T sum_gy = T(0), sum_gyx = T(0);
                                for (std::size_t j = 0; j < d; ++j) {
                                  if (pg.requires_grad) pg.grad[j] += g[j] * xh[j];
                                  if (pb.requires_grad) pb.grad[j] += g[j];
                                  const T gy = g[j] * pg.data[j];
                                  sum_gy += gy;
                                  sum_gyx += gy * xh[j];
                                }
                                if (!px.requires_grad) continue;
                                const T inv_d = T(1) / static_cast<T>(d);
                                for (std::size_t j = 0; j < d; ++j) {
                                  const T gy = g[j] * pg.data[j];
                                  px.grad[r * d + j] += inv_std[r] * (gy - sum_gy * inv_d - xh[j] * sum_gyx * inv_d);
                                }
                              }
                            });
}

}  // namespace facet
