#pragma once

// Elementwise, shape, reduction and dense-algebra primitives with backward
// rules. Layer-level primitives (convolution, normalization, attention) live in
// their own headers and build on the gemm kernels here.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "facet/rng.hpp"
#include "facet/tensor.hpp"

namespace facet {

enum class Reduction { Sum, Mean };

namespace detail {

// Panel sizes keep a kBlockK x kBlockN tile of B resident in cache while every
// row of A streams past it.
inline constexpr std::size_t kBlockN = 256;
inline constexpr std::size_t kBlockK = 128;

// C[m,n] += A[m,k] * B[k,n]; A is addressed as a[i*a_row + p*a_col].
template <class T>
void gemm_strided(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t a_row, std::size_t a_col,
                  const T* b, T* c) {
  for (std::size_t j0 = 0; j0 < n; j0 += kBlockN) {
    const std::size_t nb = std::min(kBlockN, n - j0);
    for (std::size_t p0 = 0; p0 < k; p0 += kBlockK) {
      const std::size_t pe = std::min(k, p0 + kBlockK);
      for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n + j0;
        for (std::size_t p = p0; p < pe; ++p) {
          const T av = a[i * a_row + p * a_col];
          if (av == T(0)) continue;
          const T* brow = b + p * n + j0;
          for (std::size_t j = 0; j < nb; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_strided(m, n, k, a, k, 1, b, c);
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if (m < 4) {
    for (std::size_t i = 0; i < m; ++i) {
      const T* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = T(0);
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
    }
    return;
  }
  // Transposing B first turns the inner loop into a contiguous axpy.
  std::vector<T> bt(k * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(m, n, k, a, bt.data(), c);
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  gemm_strided(m, n, k, a, 1, m, b, c);
}

inline std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

template <class T>
std::size_t normalize_axis(const Tensor<T>& t, long axis, const char* op) {
  const long r = static_cast<long>(t.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError(std::string(op) + ": axis out of range for shape " + to_string(t.shape()));
  }
  return static_cast<std::size_t>(axis);
}

}  // namespace detail

// a + b, where b may also be broadcast along the leading axes of a (b's shape a
// suffix of a's shape).
template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!detail::is_suffix(b.shape(), a.shape())) {
    throw ShapeError("add: shape " + to_string(b.shape()) + " does not broadcast onto " +
                     to_string(a.shape()));
  }
  const std::size_t n = a.size(), m = b.size();
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i) out[i] += bv[i % m];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [n, m](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) pb.grad[i % m] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  const std::size_t n = a.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] - b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  const std::size_t n = a.size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= s;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [s](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += s * self.grad[i];
  });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= v;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += T(2) * pa.data[i] * self.grad[i];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  return Tensor<T>::from_op({1}, {acc}, {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (auto& g : pa.grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) {
      if (pa.data[i] > T(0)) pa.grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.values());
  for (auto& v : out) v = T(1) / (T(1) + std::exp(-v));
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) {
      const T y = self.data[i];
      pa.grad[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

// Inverted dropout: survivors are scaled by 1/(1-p) in training so that
// evaluation is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw std::invalid_argument("dropout: probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return a;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(a.size());
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : T(0);
    out[i] = a.values()[i] * mask[i];
  }
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [mask = std::move(mask)](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += self.grad[i] * mask[i];
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  return Tensor<T>::from_op(std::move(shape), a.values(), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

// out.shape[i] = a.shape[perm[i]]
template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) throw ShapeError("permute: permutation rank does not match tensor rank");
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) throw ShapeError("permute: invalid permutation");
    used[p] = true;
  }
  const auto in_strides = detail::strides_of(a.shape());
  Shape out_shape(r);
  std::vector<std::size_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = a.shape()[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // map[out_flat] = in_flat
  const std::size_t n = a.size();
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      src += src_stride[ax];
      if (idx[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  std::vector<T> out(n);
  for (std::size_t o = 0; o < n; ++o) out[o] = a.values()[map[o]];
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {a},
                            [map = std::move(map)](Node<T>& self) {
                              auto& pa = *self.parents[0];
                              for (std::size_t o = 0; o < map.size(); ++o) pa.grad[map[o]] += self.grad[o];
                            });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expects a rank-2 tensor");
  return permute(a, {1, 0});
}

// Concatenates tensors that agree on every axis except `axis`.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis_arg) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t axis = detail::normalize_axis(parts[0], axis_arg, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.shape()[d] != parts[0].shape()[d]) {
        throw ShapeError("concat: axis " + std::to_string(d) + " differs: " + to_string(p.shape()) +
                         " vs " + to_string(parts[0].shape()));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  const std::size_t out_axis = out_shape[axis];
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(p.values().data() + o * len * inner, len * inner,
                  out.data() + (o * out_axis + off) * inner);
    }
    off += len;
  }
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), parts,
                            [outer, inner, out_axis, offsets](Node<T>& self) {
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                auto& p = *self.parents[k];
                                if (!p.requires_grad) continue;
                                const std::size_t len = p.data.size() / (outer * inner);
                                for (std::size_t o = 0; o < outer; ++o) {
                                  const T* g = self.grad.data() + (o * out_axis + offsets[k]) * inner;
                                  T* dst = p.grad.data() + o * len * inner;
                                  for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                                }
                              }
                            });
}

// Gathers the given positions along `axis`.
template <class T>
Tensor<T> index_select(const Tensor<T>& a, long axis_arg, const std::vector<std::size_t>& indices) {
  const std::size_t axis = detail::normalize_axis(a, axis_arg, "index_select");
  if (indices.empty()) throw ShapeError("index_select: empty index list");
  const std::size_t len = a.shape()[axis];
  for (std::size_t i : indices) {
    if (i >= len) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
  Shape out_shape = a.shape();
  out_shape[axis] = indices.size();
  const std::size_t k = indices.size();
  std::vector<T> out(numel(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < k; ++j) {
      std::copy_n(a.values().data() + (o * len + indices[j]) * inner, inner,
                  out.data() + (o * k + j) * inner);
    }
  }
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {a},
                            [outer, inner, len, indices](Node<T>& self) {
                              auto& pa = *self.parents[0];
                              const std::size_t k = indices.size();
                              for (std::size_t o = 0; o < outer; ++o) {
                                for (std::size_t j = 0; j < k; ++j) {
                                  const T* g = self.grad.data() + (o * k + j) * inner;
                                  T* dst = pa.grad.data() + (o * len + indices[j]) * inner;
                                  for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
                                }
                              }
                            });
}

// Mean over one axis; the axis is removed from the result.
template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, long axis_arg) {
  const std::size_t axis = detail::normalize_axis(a, axis_arg, "mean_axis");
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (std::size_t d = axis + 1; d < a.rank(); ++d) inner *= a.shape()[d];
  const std::size_t len = a.shape()[axis];
  Shape out_shape;
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (d != axis) out_shape.push_back(a.shape()[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);
  const T inv = T(1) / static_cast<T>(len);
  std::vector<T> out(outer * inner, T(0));
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < len; ++j) {
      const T* src = a.values().data() + (o * len + j) * inner;
      T* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  for (auto& v : out) v *= inv;
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {a},
                            [outer, inner, len, inv](Node<T>& self) {
                              auto& pa = *self.parents[0];
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* g = self.grad.data() + o * inner;
                                for (std::size_t j = 0; j < len; ++j) {
                                  T* dst = pa.grad.data() + (o * len + j) * inner;
                                  for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i] * inv;
                                }
                              }
                            });
}

// [B, C, L] -> [B, C]
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool: expects [B,C,L], got " + to_string(x.shape()));
  return mean_axis(x, 2);
}

// [m,k] x [k,n] -> [m,n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: expects rank-2 operands");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  detail::gemm_nn(m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor<T>::from_op({m, n}, std::move(out), {a, b}, [m, n, k](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) detail::gemm_nt(m, k, n, self.grad.data(), pb.data.data(), pa.grad.data());
    if (pb.requires_grad) detail::gemm_tn(k, n, m, pa.data.data(), self.grad.data(), pb.grad.data());
  });
}

// Per-row inner products of two [B, d] tensors -> [B].
template <class T>
Tensor<T> rowwise_dot(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2) throw ShapeError("rowwise_dot: expects [B,d] operands");
  detail::require_same_shape(a, b, "rowwise_dot");
  const std::size_t rows = a.dim(0), d = a.dim(1);
  std::vector<T> out(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < d; ++j) out[r] += a.values()[r * d + j] * b.values()[r * d + j];
  }
  return Tensor<T>::from_op({rows}, std::move(out), {a, b}, [rows, d](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t r = 0; r < rows; ++r) {
      const T g = self.grad[r];
      for (std::size_t j = 0; j < d; ++j) {
        if (pa.requires_grad) pa.grad[r * d + j] += g * pb.data[r * d + j];
        if (pb.requires_grad) pb.grad[r * d + j] += g * pa.data[r * d + j];
      }
    }
  });
}

// Affine map over the trailing axis: y = x W^T + b, W is [d_out, d_in].
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [d_out, d_in]");
  const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
  if (x.rank() == 0 || x.shape().back() != d_in) {
    throw ShapeError("linear: trailing dimension of input " + to_string(x.shape()) + " does not match d_in=" +
                     std::to_string(d_in));
  }
  if (bias.rank() != 1 || bias.dim(0) != d_out) throw ShapeError("linear: bias must be [d_out]");
  const std::size_t rows = x.size() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  std::vector<T> out(rows * d_out);
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias.values().begin(), bias.values().end(), out.begin() + r * d_out);
  detail::gemm_nt(rows, d_out, d_in, x.values().data(), weight.values().data(), out.data());
  return Tensor<T>::from_op(std::move(out_shape), std::move(out), {x, weight, bias},
                            [rows, d_in, d_out](Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pw = *self.parents[1];
                              auto& pb = *self.parents[2];
                              if (px.requires_grad) {
                                detail::gemm_nn(rows, d_in, d_out, self.grad.data(), pw.data.data(), px.grad.data());
                              }
                              if (pw.requires_grad) {
                                detail::gemm_tn(d_out, d_in, rows, self.grad.data(), px.data.data(), pw.grad.data());
                              }
                              if (pb.requires_grad) {
                                for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t j = 0; j < d_out; ++j) pb.grad[j] += self.grad[r * d_out + j];
                                }
                              }
                            });
}

template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target, Reduction reduction = Reduction::Mean) {
  detail::require_same_shape(pred, target, "mse");
  auto total = sum(square(sub(pred, target)));
  return reduction == Reduction::Sum ? total : scale(total, T(1) / static_cast<T>(pred.size()));
}

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace facet
