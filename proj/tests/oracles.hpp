#pragma once

// Independent reference implementations used only by the tests. Each one is the
// most literal loop form of its definition and shares no code with the library
// kernels it checks.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "facet/rng.hpp"

namespace oracle {

inline std::vector<double> random_vector(facet::Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Six nested loops over (b, co, t', h', w') x (c, kt, kh, kw).
inline std::vector<double> conv3d(const std::vector<double>& x, std::size_t B, std::size_t C, std::size_t T,
                                  std::size_t H, std::size_t W, const std::vector<double>& w, std::size_t Co,
                                  std::size_t kt, std::size_t kh, std::size_t kw, const std::vector<double>& bias,
                                  std::size_t st, std::size_t sh, std::size_t sw, std::size_t pt, std::size_t ph,
                                  std::size_t pw, std::size_t& To, std::size_t& Ho, std::size_t& Wo) {
  To = (T + 2 * pt - kt) / st + 1;
  Ho = (H + 2 * ph - kh) / sh + 1;
  Wo = (W + 2 * pw - kw) / sw + 1;
  std::vector<double> out(B * Co * To * Ho * Wo, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t ot = 0; ot < To; ++ot)
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            double acc = bias[o];
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t a = 0; a < kt; ++a)
                for (std::size_t i = 0; i < kh; ++i)
                  for (std::size_t j = 0; j < kw; ++j) {
                    const long t = long(ot * st + a) - long(pt);
                    const long h = long(oh * sh + i) - long(ph);
                    const long ww = long(ow * sw + j) - long(pw);
                    if (t < 0 || h < 0 || ww < 0 || t >= long(T) || h >= long(H) || ww >= long(W)) continue;
                    acc += x[(((b * C + c) * T + t) * H + h) * W + ww] * w[(((o * C + c) * kt + a) * kh + i) * kw + j];
                  }
            out[(((b * Co + o) * To + ot) * Ho + oh) * Wo + ow] = acc;
          }
  return out;
}

inline std::vector<double> conv1d(const std::vector<double>& x, std::size_t B, std::size_t C, std::size_t L,
                                  const std::vector<double>& w, std::size_t Co, std::size_t k,
                                  const std::vector<double>& bias, std::size_t stride, std::size_t pad,
                                  std::size_t& Lo) {
  Lo = (L + 2 * pad - k) / stride + 1;
  std::vector<double> out(B * Co * Lo);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Co; ++o)
      for (std::size_t l = 0; l < Lo; ++l) {
        double acc = bias[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t j = 0; j < k; ++j) {
            const long pos = long(l * stride + j) - long(pad);
            if (pos < 0 || pos >= long(L)) continue;
            acc += x[(b * C + c) * L + pos] * w[(o * C + c) * k + j];
          }
        out[(b * Co + o) * Lo + l] = acc;
      }
  return out;
}

// Y = X W^T + b with X [n, din], W [dout, din].
inline std::vector<double> affine(const std::vector<double>& x, std::size_t n, std::size_t din,
                                  const std::vector<double>& w, std::size_t dout, const std::vector<double>& b) {
  std::vector<double> y(n * dout);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < din; ++i) acc += x[r * din + i] * w[o * din + i];
      y[r * dout + o] = acc;
    }
  return y;
}

// Multi-head self-attention for a single sequence X [L, d] with explicit
// projection matrices, written with small dense matrices.
struct AttentionWeights {
  std::vector<double> wq, bq, wk, bk, wv, bv, wo, bo;
};

inline std::vector<double> attention(const std::vector<double>& x, std::size_t L, std::size_t d, std::size_t heads,
                                     const AttentionWeights& p, std::vector<double>* probs = nullptr) {
  auto q = affine(x, L, d, p.wq, d, p.bq);
  auto k = affine(x, L, d, p.wk, d, p.bk);
  auto v = affine(x, L, d, p.wv, d, p.bv);
  const std::size_t dh = d / heads;
  std::vector<double> concat(L * d, 0.0);
  if (probs) probs->assign(heads * L * L, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> s(L);
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dh; ++c) dot += q[i * d + h * dh + c] * k[j * d + h * dh + c];
        s[j] = std::exp(dot / std::sqrt(double(dh)));
        z += s[j];
      }
      for (std::size_t j = 0; j < L; ++j) {
        s[j] /= z;
        if (probs) (*probs)[(h * L + i) * L + j] = s[j];
        for (std::size_t c = 0; c < dh; ++c) concat[i * d + h * dh + c] += s[j] * v[j * d + h * dh + c];
      }
    }
  }
  return affine(concat, L, d, p.wo, d, p.bo);
}

// Naive DFT straight from X[k] = sum_n x[n] exp(-i 2 pi k n / N).
inline std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  const std::size_t N = x.size();
  std::vector<std::complex<double>> X(N);
  for (std::size_t k = 0; k < N; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double angle = -2.0 * std::numbers::pi * double(k) * double(n) / double(N);
      acc += x[n] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    X[k] = acc;
  }
  return X;
}

}  // namespace oracle
