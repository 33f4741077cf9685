#pragma once

#include <array>
#include <string>
#include <vector>

#include "facet/ops.hpp"

namespace facet {

using Triple = std::array<std::size_t, 3>;

namespace detail {

struct Conv3dGeometry {
  std::size_t batch, in_ch, out_ch;
  Triple in, kernel, stride, pad, out;
  std::size_t patch() const { return in_ch * kernel[0] * kernel[1] * kernel[2]; }
  std::size_t out_positions() const { return out[0] * out[1] * out[2]; }
  std::size_t in_positions() const { return in[0] * in[1] * in[2]; }
};

// col[(c,kt,kh,kw), (ot,oh,ow)] for one batch element; rows are ld apart.
template <class T>
void im2col3d(const Conv3dGeometry& g, const T* src, T* col, std::size_t ld) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* plane = src + c * g.in_positions();
    for (std::size_t kt = 0; kt < g.kernel[0]; ++kt)
      for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
        for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          T* dst = col + row * ld;
          std::size_t p = 0;
          for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
            const long t = static_cast<long>(ot * g.stride[0] + kt) - static_cast<long>(g.pad[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long h = static_cast<long>(oh * g.stride[1] + kh) - static_cast<long>(g.pad[1]);
              const bool row_ok = t >= 0 && t < static_cast<long>(g.in[0]) && h >= 0 &&
                                  h < static_cast<long>(g.in[1]);
              for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++p) {
                const long w = static_cast<long>(ow * g.stride[2] + kw) - static_cast<long>(g.pad[2]);
                dst[p] = (row_ok && w >= 0 && w < static_cast<long>(g.in[2]))
                             ? plane[(static_cast<std::size_t>(t) * g.in[1] + static_cast<std::size_t>(h)) * g.in[2] +
                                     static_cast<std::size_t>(w)]
                             : T(0);
              }
            }
          }
        }
  }
}

template <class T>
void col2im3d(const Conv3dGeometry& g, const T* col, T* dst_img, std::size_t ld) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* plane = dst_img + c * g.in_positions();
    for (std::size_t kt = 0; kt < g.kernel[0]; ++kt)
      for (std::size_t kh = 0; kh < g.kernel[1]; ++kh)
        for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          const T* src = col + row * ld;
          std::size_t p = 0;
          for (std::size_t ot = 0; ot < g.out[0]; ++ot) {
            const long t = static_cast<long>(ot * g.stride[0] + kt) - static_cast<long>(g.pad[0]);
            for (std::size_t oh = 0; oh < g.out[1]; ++oh) {
              const long h = static_cast<long>(oh * g.stride[1] + kh) - static_cast<long>(g.pad[1]);
              const bool row_ok = t >= 0 && t < static_cast<long>(g.in[0]) && h >= 0 &&
                                  h < static_cast<long>(g.in[1]);
              for (std::size_t ow = 0; ow < g.out[2]; ++ow, ++p) {
                const long w = static_cast<long>(ow * g.stride[2] + kw) - static_cast<long>(g.pad[2]);
                if (row_ok && w >= 0 && w < static_cast<long>(g.in[2])) {
                  plane[(static_cast<std::size_t>(t) * g.in[1] + static_cast<std::size_t>(h)) * g.in[2] +
                        static_cast<std::size_t>(w)] += src[p];
                }
              }
            }
          }
        }
  }
}

inline std::size_t conv_out_len(const char* op, const char* axis_name, std::size_t in, std::size_t k,
                                std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError(std::string(op) + ": stride along " + axis_name + " axis must be >= 1");
  if (k > in + 2 * pad) {
    throw ShapeError(std::string(op) + ": zero-size output, kernel " + std::to_string(k) + " exceeds padded input " +
                     std::to_string(in + 2 * pad) + " along " + axis_name + " axis");
  }
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace detail

// input [B,C,T,H,W], weight [C',C,kt,kh,kw], bias [C'] -> [B,C',T',H',W'].
// Cross-correlation, as in every deep-learning framework.
template <class T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Triple stride,
                 Triple padding) {
  if (input.rank() != 5) throw ShapeError("conv3d: input must be [B,C,T,H,W], got " + to_string(input.shape()));
  if (weight.rank() != 5) throw ShapeError("conv3d: weight must be [C',C,kt,kh,kw], got " + to_string(weight.shape()));
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv3d: channel axis (dim 1) of input is " + std::to_string(input.dim(1)) +
                     " but weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv3d: bias must have " + std::to_string(weight.dim(0)) + " entries (output channel axis)");
  }
  detail::Conv3dGeometry g{};
  g.batch = input.dim(0);
  g.in_ch = input.dim(1);
  g.out_ch = weight.dim(0);
  g.in = {input.dim(2), input.dim(3), input.dim(4)};
  g.kernel = {weight.dim(2), weight.dim(3), weight.dim(4)};
  g.stride = stride;
  g.pad = padding;
  static constexpr const char* names[3] = {"T", "H", "W"};
  for (int a = 0; a < 3; ++a) g.out[a] = detail::conv_out_len("conv3d", names[a], g.in[a], g.kernel[a], stride[a], padding[a]);

  // One gemm over the whole batch: cols is [K, B*P], the product [C', B*P].
  const std::size_t K = g.patch(), P = g.out_positions(), BP = g.batch * P;
  const std::size_t in_sample = g.in_ch * g.in_positions();
  const std::size_t out_sample = g.out_ch * P;
  std::vector<T> cols(K * BP);
  for (std::size_t b = 0; b < g.batch; ++b) {
    detail::im2col3d(g, input.values().data() + b * in_sample, cols.data() + b * P, BP);
  }
  std::vector<T> prod(g.out_ch * BP, T(0));
  detail::gemm_nn(g.out_ch, BP, K, weight.values().data(), cols.data(), prod.data());
  std::vector<T> out(g.batch * out_sample);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t co = 0; co < g.out_ch; ++co) {
      const T bv = bias.values()[co];
      const T* src = prod.data() + co * BP + b * P;
      T* dst = out.data() + b * out_sample + co * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bv;
    }
  const bool keep_cols = grad_enabled() && weight.requires_grad();
  if (!keep_cols) cols = {};
  return Tensor<T>::from_op(
      {g.batch, g.out_ch, g.out[0], g.out[1], g.out[2]}, std::move(out), {input, weight, bias},
      [g, cols = std::move(cols), in_sample, out_sample](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        const std::size_t K = g.patch(), P = g.out_positions(), BP = g.batch * P;
        std::vector<T> gout(g.out_ch * BP);
        for (std::size_t b = 0; b < g.batch; ++b)
          for (std::size_t co = 0; co < g.out_ch; ++co)
            std::copy_n(self.grad.data() + b * out_sample + co * P, P, gout.data() + co * BP + b * P);
        if (pb.requires_grad) {
          for (std::size_t co = 0; co < g.out_ch; ++co) {
            T acc = T(0);
            for (std::size_t p = 0; p < BP; ++p) acc += gout[co * BP + p];
            pb.grad[co] += acc;
          }
        }
        if (pw.requires_grad) detail::gemm_nt(g.out_ch, K, BP, gout.data(), cols.data(), pw.grad.data());
        if (px.requires_grad) {
          std::vector<T> dcol(K * BP, T(0));
          detail::gemm_tn(K, BP, g.out_ch, pw.data.data(), gout.data(), dcol.data());
          for (std::size_t b = 0; b < g.batch; ++b) {
            detail::col2im3d(g, dcol.data() + b * P, px.grad.data() + b * in_sample, BP);
          }
        }
      });
}

// input [B,C,L], weight [C',C,k], bias [C'] -> [B,C',L'].
template <class T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (input.rank() != 3) throw ShapeError("conv1d: input must be [B,C,L], got " + to_string(input.shape()));
  if (weight.rank() != 3) throw ShapeError("conv1d: weight must be [C',C,k], got " + to_string(weight.shape()));
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv1d: channel axis (dim 1) of input is " + std::to_string(input.dim(1)) +
                     " but weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv1d: bias must have " + std::to_string(weight.dim(0)) + " entries (output channel axis)");
  }
  const std::size_t len_out = detail::conv_out_len("conv1d", "L", input.dim(2), weight.dim(2), stride, padding);
  auto x5 = reshape(input, {input.dim(0), input.dim(1), 1, 1, input.dim(2)});
  auto w5 = reshape(weight, {weight.dim(0), weight.dim(1), 1, 1, weight.dim(2)});
  auto y5 = conv3d(x5, w5, bias, {1, 1, stride}, {0, 0, padding});
  return reshape(y5, {input.dim(0), weight.dim(0), len_out});
}

}  // namespace facet
