#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace facet {

inline constexpr std::size_t kTraitCount = 5;
inline constexpr std::array<const char*, kTraitCount> kTraitNames{"Extraversion", "Agreeableness",
                                                                  "Conscientiousness", "Neuroticism", "Openness"};
// Column headers used by every ACC table.
inline constexpr std::array<const char*, kTraitCount> kTraitShortNames{"Extra", "Agree", "Consc", "Neuro", "Open"};

// Big-Five scores, each in [0,1].
struct TraitVector {
  std::array<double, kTraitCount> values{};

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool valid() const {
    for (double v : values) {
      if (!(v >= 0.0 && v <= 1.0)) return false;
    }
    return true;
  }

  void validate(const char* what = "trait vector") const {
    if (!valid()) throw std::domain_error(std::string(what) + ": trait values must lie in [0,1]");
  }

  bool operator==(const TraitVector&) const = default;
};

// One short window of video frames, stored [frames, channels, height, width]
// with pixel values in [0,1].
struct SegmentClip {
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  TraitVector labels;
  std::int64_t identity = 0;
  std::int64_t video_id = 0;
  std::size_t segment_index = 0;

  float at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[((t * channels + c) * height + y) * width + x];
  }
  float& at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) {
    return pixels[((t * channels + c) * height + y) * width + x];
  }
};

}  // namespace facet
