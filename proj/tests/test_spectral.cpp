#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "facet/spectral.hpp"
#include "oracles.hpp"

using namespace facet;

namespace {

const std::string kFixtureDir = FACET_FIXTURE_DIR;

void expect_matches_oracle(std::span<const double> signal, const Spectrum& s, std::size_t bins) {
  const auto ref = oracle::dft(std::vector<double>(signal.begin(), signal.end()));
  for (std::size_t k = 0; k < bins; ++k) {
    EXPECT_NEAR(s.amplitude[k], std::abs(ref[k]), 1e-9) << "k=" << k;
    const auto rebuilt = std::polar(s.amplitude[k], s.phase[k]);
    EXPECT_NEAR(std::abs(rebuilt - ref[k]), 0.0, 1e-9) << "k=" << k;
    EXPECT_GT(s.phase[k], -std::numbers::pi);
    EXPECT_LE(s.phase[k], std::numbers::pi);
    if (s.amplitude[k] < kPhaseEpsilon) EXPECT_EQ(s.phase[k], 0.0);
  }
}

}  // namespace

TEST(Dft, ConstantSignalIsDcOnly) {
  std::vector<double> x(10, 0.7);
  auto s = dft_channel(x);
  EXPECT_NEAR(s.amplitude[0], 7.0, 1e-12);
  EXPECT_EQ(s.phase[0], 0.0);
  for (std::size_t k = 1; k < 10; ++k) {
    EXPECT_NEAR(s.amplitude[k], 0.0, 1e-12);
    EXPECT_EQ(s.phase[k], 0.0);
  }
}

TEST(Dft, CosinePeaks) {
  std::vector<double> x(8);
  for (std::size_t n = 0; n < 8; ++n) x[n] = std::cos(2.0 * std::numbers::pi * n / 8.0);
  auto s = dft_channel(x);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(s.amplitude[k], k == 1 || k == 7 ? 4.0 : 0.0, 1e-12) << k;
  expect_matches_oracle(x, s, 8);
}

TEST(Dft, MatchesNaiveOracleAndConjugateSymmetry) {
  Rng rng(1);
  for (std::size_t n = 1; n <= 256; n += (n < 40 ? 1 : 17)) {
    auto x = oracle::random_vector(rng, n, -3.0, 3.0);
    auto s = dft_channel(x);
    expect_matches_oracle(x, s, n);
    for (std::size_t k = 1; k < n; ++k) EXPECT_NEAR(s.amplitude[k], s.amplitude[n - k], 1e-9) << n << " " << k;
  }
}

TEST(Dft, Errors) {
  EXPECT_THROW(dft_channel(std::vector<double>{}), std::invalid_argument);
  EXPECT_THROW(dft_channel(std::vector<double>{1.0, NAN}), std::domain_error);
  EXPECT_THROW(dft_channel(std::vector<double>{1.0, 2.0}, 3), std::invalid_argument);
}

TEST(Heatmap, PaperSizes) {
  Rng rng(2);
  std::vector<std::vector<double>> rows(90);
  for (auto& r : rows) r = oracle::random_vector(rng, 64);
  auto h = build_heatmap(DescriptorSequence::from_rows(7, rows), 32);
  EXPECT_EQ(h.channels, 64u);
  EXPECT_EQ(h.frequencies, 32u);
  EXPECT_EQ(h.amplitude.size(), 64u * 32u);
  EXPECT_EQ(h.phase.size(), 64u * 32u);
  EXPECT_EQ(stack_two_channel<float>(h).shape(), (Shape{2, 64, 32}));
}

TEST(Heatmap, ZeroChannelGivesZeroRows) {
  Rng rng(3);
  std::vector<std::vector<double>> rows(12);
  for (auto& r : rows) {
    r = oracle::random_vector(rng, 3);
    r[1] = 0.0;
  }
  auto h = build_heatmap(DescriptorSequence::from_rows(0, rows), 5);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(h.amplitude[5 + k], 0.0);
    EXPECT_EQ(h.phase[5 + k], 0.0);
  }
}

TEST(Heatmap, MatchesOracleOnRandomSequences) {
  Rng rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t D = 1 + rng.below(64);
    const std::size_t N = 1 + rng.below(256);
    const std::size_t M = 1 + rng.below(N);
    std::vector<std::vector<double>> rows(N);
    for (auto& r : rows) r = oracle::random_vector(rng, D);
    auto seq = DescriptorSequence::from_rows(trial, rows);
    auto h = build_heatmap(seq, M);
    ASSERT_EQ(h.amplitude.size(), D * M);
    for (std::size_t d = 0; d < D; ++d) {
      Spectrum s;
      s.amplitude.assign(h.amplitude.begin() + d * M, h.amplitude.begin() + (d + 1) * M);
      s.phase.assign(h.phase.begin() + d * M, h.phase.begin() + (d + 1) * M);
      expect_matches_oracle(seq.channel(d), s, M);
    }
  }
}

TEST(Heatmap, ShortSequencesAreZeroPadded) {
  std::vector<std::vector<double>> rows{{1.0, 2.0}, {3.0, -1.0}, {0.5, 0.0}};
  auto h = build_heatmap(DescriptorSequence::from_rows(1, rows), 6);
  ASSERT_EQ(h.amplitude.size(), 12u);
  const auto ref = oracle::dft({1.0, 3.0, 0.5, 0.0, 0.0, 0.0});
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(h.amplitude[k], std::abs(ref[k]), 1e-12);
}

TEST(Heatmap, AmplitudeScalesLinearlyAndPhaseIsStable) {
  Rng rng(5);
  std::vector<std::vector<double>> rows(20), scaled(20);
  for (std::size_t n = 0; n < 20; ++n) {
    rows[n] = oracle::random_vector(rng, 4);
    for (double v : rows[n]) scaled[n].push_back(2.5 * v);
  }
  auto a = build_heatmap(DescriptorSequence::from_rows(0, rows), 8);
  auto b = build_heatmap(DescriptorSequence::from_rows(0, scaled), 8);
  for (std::size_t i = 0; i < a.amplitude.size(); ++i) {
    EXPECT_NEAR(b.amplitude[i], 2.5 * a.amplitude[i], 1e-9);
    if (a.amplitude[i] > 1e-6) EXPECT_NEAR(b.phase[i], a.phase[i], 1e-9);
  }
}

TEST(Heatmap, DeterministicAndErrors) {
  Rng rng(6);
  std::vector<std::vector<double>> rows(9);
  for (auto& r : rows) r = oracle::random_vector(rng, 5);
  auto seq = DescriptorSequence::from_rows(3, rows);
  EXPECT_EQ(build_heatmap(seq, 4), build_heatmap(seq, 4));
  EXPECT_THROW(build_heatmap(seq, 0), std::invalid_argument);
  EXPECT_THROW(DescriptorSequence::from_rows(0, {}), std::invalid_argument);
  EXPECT_THROW(DescriptorSequence::from_rows(0, {{1.0, 2.0}, {1.0}}), ShapeError);
}

TEST(TwoChannel, RoundTrip) {
  Rng rng(7);
  std::vector<std::vector<double>> rows(11);
  for (auto& r : rows) r = oracle::random_vector(rng, 6);
  auto h = build_heatmap(DescriptorSequence::from_rows(9, rows), 5);
  auto t = stack_two_channel<double>(h);
  EXPECT_EQ(t.shape(), (Shape{2, 6, 5}));
  EXPECT_EQ(t.at({0, 2, 3}), h.amplitude[2 * 5 + 3]);
  EXPECT_EQ(t.at({1, 2, 3}), h.phase[2 * 5 + 3]);
  EXPECT_EQ(split_two_channel(t, 9), h);
}

// The fixture is produced by numpy's FFT (see fixtures/make_heatmap_fixture.py).
TEST(HeatmapFile, MatchesIndependentFixture) {
  const std::size_t D = 3, N = 12, M = 4;
  std::vector<std::vector<double>> rows(N, std::vector<double>(D));
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t d = 0; d < D; ++d)
      rows[n][d] = std::sin(0.7 * (d + 1) * n) + 0.1 * d + std::cos(0.3 * n);
  auto h = build_heatmap(DescriptorSequence::from_rows(42, rows), M);
  auto fixture = load_heatmap(kFixtureDir + "/heatmap_small.bin");
  EXPECT_EQ(fixture.video_id, 42);
  ASSERT_EQ(fixture.channels, D);
  ASSERT_EQ(fixture.frequencies, M);
  auto mine = decode_heatmap(encode_heatmap(h));
  for (std::size_t i = 0; i < D * M; ++i) {
    EXPECT_NEAR(mine.amplitude[i], fixture.amplitude[i], 1e-5 * std::max(1.0, fixture.amplitude[i]));
    EXPECT_NEAR(mine.phase[i], fixture.phase[i], 1e-5);
  }
}

TEST(HeatmapFile, RoundTripIsBitExact) {
  Rng rng(8);
  std::vector<std::vector<double>> rows(30);
  for (auto& r : rows) r = oracle::random_vector(rng, 64);
  auto h = build_heatmap(DescriptorSequence::from_rows(-5, rows), 32);
  const auto bytes = encode_heatmap(h);
  EXPECT_EQ(bytes.size(), 8u + 4u + 4u + 2u * 64u * 32u * 4u);
  const auto path = (std::filesystem::temp_directory_path() / "facet_heatmap_test.bin").string();
  save_heatmap(path, h);
  auto loaded = load_heatmap(path);
  EXPECT_EQ(encode_heatmap(loaded), bytes);
  EXPECT_EQ(loaded.video_id, -5);
  std::filesystem::remove(path);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_heatmap(truncated), io::FormatError);
  auto extended = bytes;
  extended.push_back(0);
  EXPECT_THROW(decode_heatmap(extended), io::FormatError);
}

TEST(HeatmapFile, CsvDump) {
  SpectralHeatmap h{4, 2, 3, {1, 2, 3, 4, 5, 6}, {0, 0.5, 0, 0, 0, -1}};
  std::ostringstream os;
  write_heatmap_csv(os, h);
  EXPECT_EQ(os.str(),
            "video_id,map,channel,f0,f1,f2\n"
            "4,amplitude,0,1,2,3\n"
            "4,amplitude,1,4,5,6\n"
            "4,phase,0,0,0.5,0\n"
            "4,phase,1,0,0,-1\n");
}
