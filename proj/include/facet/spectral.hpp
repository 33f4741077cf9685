#pragma once

// Video-level spectral encoding: the N segment descriptors of a video form a
// D-channel signal; each channel is transformed with a DFT and only the M
// lowest frequencies (DC included) of the amplitude and phase spectra are
// kept, giving a two-channel D x M heatmap.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/binary_io.hpp"
#include "facet/tensor.hpp"

namespace facet {

inline constexpr double kPhaseEpsilon = 1e-9;

struct Spectrum {
  std::vector<double> amplitude;
  std::vector<double> phase;
};

namespace detail {

// cos/sin of 2*pi*j/N for j in [0,N); the quarter-period points are exact so
// that DC and Nyquist bins of real signals have exactly zero imaginary part.
struct TwiddleTable {
  std::vector<double> cos_v, sin_v;
  explicit TwiddleTable(std::size_t n) : cos_v(n), sin_v(n) {
    for (std::size_t j = 0; j < n; ++j) {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
      cos_v[j] = std::cos(angle);
      sin_v[j] = std::sin(angle);
      if (4 * j % n == 0) {
        const std::size_t quarter = 4 * j / n;
        cos_v[j] = quarter == 0 ? 1.0 : quarter == 2 ? -1.0 : 0.0;
        sin_v[j] = quarter == 1 ? 1.0 : quarter == 3 ? -1.0 : 0.0;
      }
    }
  }
};

inline double wrap_phase(double re, double im, double amplitude) {
  if (amplitude < kPhaseEpsilon) return 0.0;
  double p = std::atan2(im, re);
  if (p <= -std::numbers::pi) p = std::numbers::pi;
  return p;
}

}  // namespace detail

// Amplitude and phase of X[k] = sum_n x[n] exp(-i 2 pi k n / N) for
// k < bins (default: all N bins).
inline Spectrum dft_channel(std::span<const double> signal, std::size_t bins = 0) {
  const std::size_t n = signal.size();
  if (n == 0) throw std::invalid_argument("dft_channel: empty signal");
  for (double v : signal) {
    if (!std::isfinite(v)) throw std::domain_error("dft_channel: non-finite input");
  }
  if (bins == 0) bins = n;
  if (bins > n) throw std::invalid_argument("dft_channel: more bins requested than signal length");
  const detail::TwiddleTable tw(n);
  Spectrum s;
  s.amplitude.resize(bins);
  s.phase.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    std::size_t idx = 0;  // (k*m) mod N
    for (std::size_t m = 0; m < n; ++m) {
      re += signal[m] * tw.cos_v[idx];
      im -= signal[m] * tw.sin_v[idx];
      idx += k;
      if (idx >= n) idx -= n;
    }
    s.amplitude[k] = std::hypot(re, im);
    s.phase[k] = detail::wrap_phase(re, im, s.amplitude[k]);
  }
  return s;
}

// D channels x N time stamps, row-major.
struct DescriptorSequence {
  std::int64_t video_id = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> values;

  // rows: one descriptor per segment, in temporal order.
  static DescriptorSequence from_rows(std::int64_t video_id, const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) throw std::invalid_argument("descriptor sequence: video has no segments");
    DescriptorSequence seq;
    seq.video_id = video_id;
    seq.length = rows.size();
    seq.channels = rows.front().size();
    seq.values.resize(seq.channels * seq.length);
    for (std::size_t n = 0; n < rows.size(); ++n) {
      if (rows[n].size() != seq.channels) throw ShapeError("descriptor sequence: ragged descriptor rows");
      for (std::size_t d = 0; d < seq.channels; ++d) seq.values[d * seq.length + n] = rows[n][d];
    }
    return seq;
  }

  std::span<const double> channel(std::size_t d) const { return {values.data() + d * length, length}; }
};

struct SpectralHeatmap {
  std::int64_t video_id = 0;
  std::size_t channels = 0;     // D
  std::size_t frequencies = 0;  // M
  std::vector<double> amplitude;  // D x M
  std::vector<double> phase;      // D x M

  bool operator==(const SpectralHeatmap&) const = default;
};

// Keeps frequency indices 0..M-1 of every channel. Sequences shorter than M are
// zero-padded to length M first so every heatmap is exactly D x M.
inline SpectralHeatmap build_heatmap(const DescriptorSequence& seq, std::size_t m) {
  if (m == 0) throw std::invalid_argument("build_heatmap: M must be at least 1");
  if (seq.length == 0 || seq.channels == 0) throw std::invalid_argument("build_heatmap: empty sequence");
  if (seq.values.size() != seq.channels * seq.length) throw ShapeError("build_heatmap: sequence size mismatch");
  SpectralHeatmap h;
  h.video_id = seq.video_id;
  h.channels = seq.channels;
  h.frequencies = m;
  h.amplitude.resize(seq.channels * m);
  h.phase.resize(seq.channels * m);
  std::vector<double> padded(std::max(seq.length, m), 0.0);
  for (std::size_t d = 0; d < seq.channels; ++d) {
    auto ch = seq.channel(d);
    std::copy(ch.begin(), ch.end(), padded.begin());
    auto spec = dft_channel(padded, m);
    std::copy(spec.amplitude.begin(), spec.amplitude.end(), h.amplitude.begin() + d * m);
    std::copy(spec.phase.begin(), spec.phase.end(), h.phase.begin() + d * m);
  }
  return h;
}

// [2, D, M]: channel 0 amplitude, channel 1 phase.
template <class T>
Tensor<T> stack_two_channel(const SpectralHeatmap& h) {
  std::vector<T> v;
  v.reserve(2 * h.amplitude.size());
  for (double a : h.amplitude) v.push_back(static_cast<T>(a));
  for (double p : h.phase) v.push_back(static_cast<T>(p));
  return Tensor<T>({2, h.channels, h.frequencies}, std::move(v));
}

template <class T>
SpectralHeatmap split_two_channel(const Tensor<T>& stacked, std::int64_t video_id = 0) {
  if (stacked.rank() != 3 || stacked.dim(0) != 2) throw ShapeError("split_two_channel: expects [2,D,M]");
  SpectralHeatmap h;
  h.video_id = video_id;
  h.channels = stacked.dim(1);
  h.frequencies = stacked.dim(2);
  const std::size_t n = h.channels * h.frequencies;
  h.amplitude.assign(stacked.values().begin(), stacked.values().begin() + n);
  h.phase.assign(stacked.values().begin() + n, stacked.values().end());
  return h;
}

// Heatmap file: i64 video_id | u32 D | u32 M | D*M f32 amplitude (row-major)
// | D*M f32 phase; little-endian.
inline std::vector<std::uint8_t> encode_heatmap(const SpectralHeatmap& h) {
  io::Writer w;
  w.i64(h.video_id);
  w.u32(static_cast<std::uint32_t>(h.channels));
  w.u32(static_cast<std::uint32_t>(h.frequencies));
  for (double a : h.amplitude) w.f32(static_cast<float>(a));
  for (double p : h.phase) w.f32(static_cast<float>(p));
  return w.bytes();
}

inline SpectralHeatmap decode_heatmap(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  SpectralHeatmap h;
  h.video_id = r.i64();
  h.channels = r.u32();
  h.frequencies = r.u32();
  const std::size_t n = h.channels * h.frequencies;
  h.amplitude.resize(n);
  h.phase.resize(n);
  for (auto& a : h.amplitude) a = r.f32();
  for (auto& p : h.phase) p = r.f32();
  if (!r.at_end()) throw io::FormatError("trailing bytes after heatmap payload");
  return h;
}

inline void save_heatmap(const std::string& path, const SpectralHeatmap& h) { io::write_file(path, encode_heatmap(h)); }
inline SpectralHeatmap load_heatmap(const std::string& path) { return decode_heatmap(io::read_file(path)); }

// Human-readable dump: one row per (map, channel), frequencies as columns.
inline void write_heatmap_csv(std::ostream& os, const SpectralHeatmap& h) {
  os << "video_id,map,channel";
  for (std::size_t k = 0; k < h.frequencies; ++k) os << ",f" << k;
  os << '\n';
  for (int map = 0; map < 2; ++map) {
    const auto& values = map == 0 ? h.amplitude : h.phase;
    for (std::size_t d = 0; d < h.channels; ++d) {
      os << h.video_id << ',' << (map == 0 ? "amplitude" : "phase") << ',' << d;
      for (std::size_t k = 0; k < h.frequencies; ++k) os << ',' << static_cast<float>(values[d * h.frequencies + k]);
      os << '\n';
    }
  }
}

}  // namespace facet
