#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "facet/ops.hpp"

namespace facet {

// Multi-head scaled dot-product attention over already-projected queries, keys
// and values, each [B,L,d]. Head h uses feature slice [h*dh, (h+1)*dh). The
// result has the heads concatenated back into [B,L,d]. When `weights_out` is
// given it receives the softmax matrices laid out as [B,heads,L,L].
template <class T>
Tensor<T> attention_core(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                         std::vector<T>* weights_out = nullptr) {
  if (q.rank() != 3) throw ShapeError("attention: expects [B,L,d] inputs, got " + to_string(q.shape()));
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  const std::size_t B = q.dim(0), L = q.dim(1), d = q.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw std::invalid_argument("attention: d_model " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& Q = q.values();
  const auto& K = k.values();
  const auto& V = v.values();
  std::vector<T> probs(B * heads * L * L);
  std::vector<T> out(B * L * d, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* P = probs.data() + (b * heads + h) * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = Q.data() + (b * L + i) * d + h * dh;
        T row_max = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          const T* kj = K.data() + (b * L + j) * d + h * dh;
          T s = T(0);
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_sqrt;
          P[i * L + j] = s;
          row_max = std::max(row_max, s);
        }
        T z = T(0);
        for (std::size_t j = 0; j < L; ++j) {
          P[i * L + j] = std::exp(P[i * L + j] - row_max);
          z += P[i * L + j];
        }
        for (std::size_t j = 0; j < L; ++j) P[i * L + j] /= z;
        T* oi = out.data() + (b * L + i) * d + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          const T pij = P[i * L + j];
          const T* vj = V.data() + (b * L + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += pij * vj[c];
        }
      }
    }
  }
  if (weights_out) *weights_out = probs;
  return Tensor<T>::from_op(
      q.shape(), std::move(out), {q, k, v},
      [B, L, d, heads, dh, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
        auto& pq = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pv = *self.parents[2];
        std::vector<T> dP(L * L);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const T* P = probs.data() + (b * heads + h) * L * L;
            // dP = dO V^T, dV = P^T dO
            for (std::size_t i = 0; i < L; ++i) {
              const T* gi = self.grad.data() + (b * L + i) * d + h * dh;
              for (std::size_t j = 0; j < L; ++j) {
                const T* vj = pv.data.data() + (b * L + j) * d + h * dh;
                T s = T(0);
                for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                dP[i * L + j] = s;
                if (pv.requires_grad) {
                  T* gvj = pv.grad.data() + (b * L + j) * d + h * dh;
                  const T pij = P[i * L + j];
                  for (std::size_t c = 0; c < dh; ++c) gvj[c] += pij * gi[c];
                }
              }
            }
            // softmax backward, then dS = dScores * inv_sqrt
            for (std::size_t i = 0; i < L; ++i) {
              T dot = T(0);
              for (std::size_t j = 0; j < L; ++j) dot += dP[i * L + j] * P[i * L + j];
              for (std::size_t j = 0; j < L; ++j) dP[i * L + j] = P[i * L + j] * (dP[i * L + j] - dot) * inv_sqrt;
            }
            for (std::size_t i = 0; i < L; ++i) {
              const T* qi = pq.data.data() + (b * L + i) * d + h * dh;
              T* gqi = pq.requires_grad ? pq.grad.data() + (b * L + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < L; ++j) {
                const T ds = dP[i * L + j];
                if (ds == T(0)) continue;
                const T* kj = pk.data.data() + (b * L + j) * d + h * dh;
                if (gqi) {
                  for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
                }
                if (pk.requires_grad) {
                  T* gkj = pk.grad.data() + (b * L + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

}  // namespace facet
