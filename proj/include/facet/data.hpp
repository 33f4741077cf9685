#pragma once

// Synthetic identity-confounded video corpus.
//
// Every identity owns a static texture (the appearance confound). A video is a
// Gaussian blob moving over that texture; how it moves is driven by the five
// latent traits:
//   Extraversion       amplitude of the horizontal oscillation
//   Agreeableness      blob colour (red/blue balance)
//   Conscientiousness  steadiness: the vertical resting level wanders from
//                      segment to segment with volatility (1 - z)
//   Neuroticism        depth of a fast intensity flicker
//   Openness           oscillation frequency
// Conscientiousness is only visible across segments, never within one.
// Labels are a blend of a per-identity trait profile and a per-video draw, so
// appearance predicts labels on training identities but not on new ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "facet/binary_io.hpp"
#include "facet/config.hpp"
#include "facet/rng.hpp"
#include "facet/types.hpp"

namespace facet {

struct FrameGeometry {
  std::size_t frames = 90;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t frame_size() const { return channels * height * width; }
  std::size_t size() const { return frames * frame_size(); }
};

struct SyntheticVideo {
  std::int64_t video_id = 0;
  std::int64_t identity = 0;
  TraitVector traits;
  FrameGeometry geometry;
  std::vector<std::uint8_t> pixels;  // [frames, C, H, W], value / 255

  std::size_t segment_count(std::size_t length) const { return geometry.frames / length; }

  // Window s of the consecutive non-overlapping windows of `length` frames.
  SegmentClip segment(std::size_t s, std::size_t length) const {
    if (length == 0 || length > geometry.frames) throw std::invalid_argument("segments: bad segment length");
    if (s >= segment_count(length)) throw std::out_of_range("segments: index past the last full window");
    const std::size_t fs = geometry.frame_size();
    SegmentClip clip;
    clip.frames = length;
    clip.channels = geometry.channels;
    clip.height = geometry.height;
    clip.width = geometry.width;
    clip.pixels.resize(length * fs);
    const std::uint8_t* src = pixels.data() + s * length * fs;
    for (std::size_t i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = static_cast<float>(src[i]) / 255.0f;
    clip.labels = traits;
    clip.identity = identity;
    clip.video_id = video_id;
    clip.segment_index = s;
    return clip;
  }

  // Trailing frames that do not fill a window are dropped.
  std::vector<SegmentClip> segments(std::size_t length) const {
    if (length == 0 || length > geometry.frames) throw std::invalid_argument("segments: bad segment length");
    std::vector<SegmentClip> out;
    for (std::size_t s = 0; s < segment_count(length); ++s) out.push_back(segment(s, length));
    return out;
  }
};

struct Dataset {
  std::vector<SyntheticVideo> train, val, test;
};

// Static appearance of one identity, [C, H, W] in [0,1].
struct IdentityTexture {
  std::vector<double> values;
};

// Per-video randomness; all-zero gives the canonical rendering.
struct MotionNoise {
  double phase = 0.0;
  double flicker_phase = 0.0;
  double offset_x = 0.0;
  double offset_y = 0.0;
  std::vector<double> level_shocks;  // one per segment, N(0,1)
  double pixel_noise = 0.0;
  std::uint64_t pixel_seed = 0;
};

namespace synth {

inline constexpr double kBlobSigma = 2.0;
inline constexpr double kFlickerFrequency = 0.35;  // cycles per frame

inline IdentityTexture identity_texture(std::uint64_t seed, std::int64_t identity, const FrameGeometry& g) {
  Rng rng = Rng(seed ^ 0x1D3A7E5ULL).fork(static_cast<std::uint64_t>(identity));
  IdentityTexture tex;
  tex.values.resize(g.channels * g.height * g.width);
  std::vector<double> base(g.channels);
  for (auto& b : base) b = rng.uniform(0.25, 0.75);
  struct Grating {
    double fx, fy, phase, amp;
    std::vector<double> weight;
  };
  std::vector<Grating> gratings(3);
  for (auto& gr : gratings) {
    const double angle = rng.uniform(0.0, std::numbers::pi);
    const double freq = rng.uniform(0.08, 0.35);
    gr.fx = freq * std::cos(angle);
    gr.fy = freq * std::sin(angle);
    gr.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    gr.amp = 0.12;
    gr.weight.resize(g.channels);
    for (auto& w : gr.weight) w = rng.uniform(-1.0, 1.0);
  }
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t y = 0; y < g.height; ++y)
      for (std::size_t x = 0; x < g.width; ++x) {
        double v = base[c];
        for (const auto& gr : gratings) {
          v += gr.amp * gr.weight[c] * std::sin(2.0 * std::numbers::pi * (gr.fx * x + gr.fy * y) + gr.phase);
        }
        v += rng.uniform(-0.05, 0.05);
        tex.values[(c * g.height + y) * g.width + x] = std::clamp(v, 0.0, 1.0);
      }
  return tex;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Resting vertical level of every segment: AR(1) driven by the shocks, scaled
// by (1 - Conscientiousness).
inline std::vector<double> vertical_levels(const TraitVector& z, const MotionNoise& noise) {
  std::vector<double> levels(noise.level_shocks.size());
  double y = 0.0;
  for (std::size_t s = 0; s < levels.size(); ++s) {
    y = 0.5 * y + (1.0 - z[2]) * 2.5 * noise.level_shocks[s];
    levels[s] = y;
  }
  return levels;
}

inline std::vector<std::uint8_t> render(const IdentityTexture& tex, const TraitVector& z, const MotionNoise& noise,
                                        const FrameGeometry& g, std::size_t segment_length) {
  const double amp = 1.0 + 4.0 * z[0];
  const double freq = 0.04 + 0.16 * z[4];
  const double flicker = 0.6 * z[3];
  const std::array<double, 3> colour{0.3 + 0.7 * z[1], 0.5, 1.0 - 0.7 * z[1]};
  const auto levels = vertical_levels(z, noise);
  const double cx0 = (static_cast<double>(g.width) - 1.0) / 2.0 + noise.offset_x;
  const double cy0 = (static_cast<double>(g.height) - 1.0) / 2.0 + noise.offset_y;
  Rng pix(noise.pixel_seed);
  std::vector<std::uint8_t> out(g.size());
  for (std::size_t t = 0; t < g.frames; ++t) {
    const std::size_t seg = std::min(t / segment_length, levels.empty() ? 0 : levels.size() - 1);
    const double cx = cx0 + amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(t) + noise.phase);
    const double cy = cy0 + (levels.empty() ? 0.0 : levels[seg]);
    const double k =
        1.0 + flicker * std::sin(2.0 * std::numbers::pi * kFlickerFrequency * static_cast<double>(t) + noise.flicker_phase);
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t y = 0; y < g.height; ++y)
        for (std::size_t x = 0; x < g.width; ++x) {
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          const double blob = std::exp(-(dx * dx + dy * dy) / (2.0 * kBlobSigma * kBlobSigma));
          double v = (1.0 - blob) * tex.values[(c * g.height + y) * g.width + x] +
                     blob * std::min(1.0, 0.7 * k * colour[c % 3]);
          if (noise.pixel_noise > 0.0) v += noise.pixel_noise * pix.normal();
          out[((t * g.channels + c) * g.height + y) * g.width + x] = quantize(v);
        }
  }
  return out;
}

}  // namespace synth

inline FrameGeometry geometry_of(const RunConfig& cfg) {
  return {cfg.data.frames_per_video, cfg.backbone.in_channels, cfg.backbone.height, cfg.backbone.width};
}

// Identity counts per split, proportional to the split's video count.
inline std::array<std::size_t, 3> identity_partition(const DataConfig& d) {
  const std::size_t total = d.train_videos + d.val_videos + d.test_videos;
  if (total == 0) throw std::invalid_argument("dataset: no videos requested");
  const double per = static_cast<double>(d.identities) / static_cast<double>(total);
  const std::size_t val = static_cast<std::size_t>(std::lround(per * static_cast<double>(d.val_videos)));
  const std::size_t test = static_cast<std::size_t>(std::lround(per * static_cast<double>(d.test_videos)));
  if (val + test >= d.identities) throw std::invalid_argument("dataset: not enough identities for three splits");
  std::array<std::size_t, 3> counts{d.identities - val - test, val, test};
  const std::array<std::size_t, 3> videos{d.train_videos, d.val_videos, d.test_videos};
  const char* names[3] = {"train", "val", "test"};
  for (int s = 0; s < 3; ++s) {
    if (counts[s] < 3) {
      throw std::invalid_argument(std::string("dataset: split '") + names[s] + "' would get " +
                                  std::to_string(counts[s]) + " identities; at least 3 are required");
    }
    if (videos[s] < counts[s]) {
      throw std::invalid_argument(std::string("dataset: split '") + names[s] + "' has fewer videos than identities");
    }
  }
  return counts;
}

// Throws if any identity appears in more than one split.
inline void check_split_hygiene(const Dataset& ds) {
  std::map<std::int64_t, int> owner;
  const std::vector<const std::vector<SyntheticVideo>*> splits{&ds.train, &ds.val, &ds.test};
  for (int s = 0; s < 3; ++s) {
    for (const auto& v : *splits[s]) {
      auto [it, inserted] = owner.emplace(v.identity, s);
      if (!inserted && it->second != s) {
        throw std::logic_error("split hygiene violated: identity " + std::to_string(v.identity) +
                               " appears in more than one split");
      }
    }
  }
}

// Identity 0, every trait 0.5, no per-video noise: the reference rendering.
inline SyntheticVideo canonical_video(const RunConfig& cfg, std::uint64_t seed) {
  const FrameGeometry g = geometry_of(cfg);
  SyntheticVideo v;
  v.geometry = g;
  for (double& t : v.traits.values) t = 0.5;
  MotionNoise noise;
  noise.level_shocks.assign(v.segment_count(cfg.backbone.segment_length), 0.0);
  v.pixels = synth::render(synth::identity_texture(seed, 0, g), v.traits, noise, g, cfg.backbone.segment_length);
  return v;
}

inline Dataset generate_dataset(const RunConfig& cfg, std::uint64_t seed) {
  const auto& d = cfg.data;
  const auto counts = identity_partition(d);
  const FrameGeometry g = geometry_of(cfg);
  const std::size_t L = cfg.backbone.segment_length;

  Rng root(seed);
  Rng id_rng = root.fork(1);
  std::vector<std::int64_t> ids(d.identities);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
  id_rng.shuffle(ids);
  std::vector<TraitVector> profiles(d.identities);
  for (auto& p : profiles)
    for (std::size_t i = 0; i < kTraitCount; ++i) p[i] = id_rng.uniform();
  std::vector<IdentityTexture> textures;
  for (std::size_t i = 0; i < d.identities; ++i) textures.push_back(synth::identity_texture(seed, static_cast<std::int64_t>(i), g));

  Dataset ds;
  std::vector<SyntheticVideo>* out[3] = {&ds.train, &ds.val, &ds.test};
  const std::size_t videos[3] = {d.train_videos, d.val_videos, d.test_videos};
  std::size_t id_offset = 0;
  std::int64_t next_video = 0;
  for (int s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < videos[s]; ++k) {
      const std::int64_t identity = ids[id_offset + k % counts[s]];
      Rng vr = root.fork(1000 + static_cast<std::uint64_t>(next_video));
      SyntheticVideo v;
      v.video_id = next_video++;
      v.identity = identity;
      v.geometry = g;
      for (std::size_t i = 0; i < kTraitCount; ++i) {
        v.traits[i] = d.identity_trait_share * profiles[identity][i] + (1.0 - d.identity_trait_share) * vr.uniform();
      }
      MotionNoise noise;
      noise.phase = vr.uniform(0.0, 2.0 * std::numbers::pi);
      noise.flicker_phase = vr.uniform(0.0, 2.0 * std::numbers::pi);
      noise.offset_x = vr.uniform(-1.5, 1.5);
      noise.offset_y = vr.uniform(-1.5, 1.5);
      noise.level_shocks.resize(v.segment_count(L));
      for (auto& e : noise.level_shocks) e = vr.normal();
      noise.pixel_noise = d.pixel_noise;
      noise.pixel_seed = vr.next_u64();
      v.pixels = synth::render(textures[identity], v.traits, noise, g, L);
      out[s]->push_back(std::move(v));
    }
    id_offset += counts[s];
  }
  check_split_hygiene(ds);
  return ds;
}

// Video file: "FCV1" | u32 count | per video: i64 video_id | i64 identity |
// 5 x f32 traits | u32 frames | u32 C | u32 H | u32 W | frames*C*H*W u8.
inline std::vector<std::uint8_t> encode_videos(const std::vector<SyntheticVideo>& videos) {
  io::Writer w;
  w.raw("FCV1");
  w.u32(static_cast<std::uint32_t>(videos.size()));
  for (const auto& v : videos) {
    w.i64(v.video_id);
    w.i64(v.identity);
    for (double t : v.traits.values) w.f32(static_cast<float>(t));
    w.u32(static_cast<std::uint32_t>(v.geometry.frames));
    w.u32(static_cast<std::uint32_t>(v.geometry.channels));
    w.u32(static_cast<std::uint32_t>(v.geometry.height));
    w.u32(static_cast<std::uint32_t>(v.geometry.width));
    w.raw(std::string(v.pixels.begin(), v.pixels.end()));
  }
  return w.bytes();
}

inline std::vector<SyntheticVideo> decode_videos(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  if (r.raw(4) != "FCV1") throw io::FormatError("not a video file (bad magic)");
  std::vector<SyntheticVideo> out(r.u32());
  for (auto& v : out) {
    v.video_id = r.i64();
    v.identity = r.i64();
    // Traits are stored as f32; widen exactly.
    for (double& t : v.traits.values) t = r.f32();
    v.traits.validate("video file");
    v.geometry.frames = r.u32();
    v.geometry.channels = r.u32();
    v.geometry.height = r.u32();
    v.geometry.width = r.u32();
    const std::string px = r.raw(v.geometry.size());
    v.pixels.assign(px.begin(), px.end());
  }
  if (!r.at_end()) throw io::FormatError("trailing bytes after video payload");
  return out;
}

// Labels go through f32 in the video file, so in-memory datasets use the same
// rounding to make saved and regenerated data interchangeable.
inline void round_labels_to_f32(Dataset& ds) {
  for (auto* split : {&ds.train, &ds.val, &ds.test})
    for (auto& v : *split)
      for (double& t : v.traits.values) t = static_cast<float>(t);
}

inline std::string dataset_hash(const Dataset& ds) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* split : {&ds.train, &ds.val, &ds.test}) {
    const auto bytes = encode_videos(*split);
    h = io::fnv1a(bytes.data(), bytes.size(), h);
  }
  return io::hex64(h);
}

inline void save_dataset(const std::string& dir, const Dataset& ds) {
  io::write_file(dir + "/train.fcv", encode_videos(ds.train));
  io::write_file(dir + "/val.fcv", encode_videos(ds.val));
  io::write_file(dir + "/test.fcv", encode_videos(ds.test));
}

inline Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.train = decode_videos(io::read_file(dir + "/train.fcv"));
  ds.val = decode_videos(io::read_file(dir + "/val.fcv"));
  ds.test = decode_videos(io::read_file(dir + "/test.fcv"));
  check_split_hygiene(ds);
  return ds;
}

}  // namespace facet
