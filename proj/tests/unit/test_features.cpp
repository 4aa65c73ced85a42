#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <string>

#include "support/oracles.hpp"
#include "uflow/binary_io.hpp"
#include "uflow/errors.hpp"
#include "uflow/features.hpp"
#include "uflow/rng.hpp"

using namespace uflow;

namespace {

Image random_image(int h, int w, std::uint64_t seed, int channels = 1) {
  Rng rng(seed);
  Image img(h, w, channels);
  for (double& p : img.pixels) p = rng.uniform();
  return img;
}

ExtractorConfig config(int levels, int patch, std::vector<int> channels) {
  ExtractorConfig c;
  c.levels = levels;
  c.patch = patch;
  c.channels_per_level = std::move(channels);
  return c;
}

std::string error_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_ufv(bytes);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Extractor, LevelShapes) {
  const auto p = extract_multiscale(random_image(64, 64, 1), config(2, 4, {16, 24}));
  ASSERT_EQ(p.num_levels(), 2);
  EXPECT_EQ(p.levels[0].shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(p.levels[1].shape(), (Shape{24, 8, 8}));
  EXPECT_NO_THROW(p.validate());
}

TEST(Extractor, DyadicForEveryConfig) {
  for (int levels = 1; levels <= 3; ++levels) {
    for (int patch : {1, 2, 4}) {
      const int size = patch << (levels + 1);
      std::vector<int> ch(levels, 9);
      const auto p = extract_multiscale(random_image(size, 2 * size, 5), config(levels, patch, ch));
      EXPECT_NO_THROW(p.validate());
      EXPECT_EQ(p.levels[0].height(), size / patch);
      EXPECT_EQ(p.levels[0].width(), 2 * size / patch);
    }
  }
}

TEST(Extractor, Deterministic) {
  const auto img = random_image(32, 32, 2);
  const auto c = config(2, 4, {16, 16});
  EXPECT_EQ(extract_multiscale(img, c), extract_multiscale(img, c));
  auto other = c;
  other.seed = 8;
  EXPECT_NE(extract_multiscale(img, c), extract_multiscale(img, other));
}

TEST(Extractor, ConstantImage) {
  Image img(16, 16, 1, 0.3);
  const auto c = config(2, 4, {8, 8});
  const auto raw = extract_multiscale_raw(img, c);
  for (const auto& level : raw.levels) {
    for (double v : level.channel(0)) EXPECT_NEAR(v, 0.3, 1e-15);
    for (int ch = 1; ch < kHandcraftedFeatures; ++ch) {
      for (double v : level.channel(ch)) EXPECT_NEAR(v, 0.0, 1e-15);
    }
  }
  const auto std = extract_multiscale(img, c);
  for (const auto& level : std.levels) {
    for (double v : level.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Extractor, Standardized) {
  const auto p = extract_multiscale(random_image(32, 32, 3), config(2, 2, {12, 12}));
  for (const auto& level : p.levels) {
    for (int c = 0; c < level.channels(); ++c) {
      const auto ch = level.channel(c);
      double mean = 0.0;
      for (double v : ch) mean += v;
      mean /= ch.size();
      double var = 0.0;
      for (double v : ch) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / ch.size());
      EXPECT_LT(std::abs(mean), 1e-6);
      EXPECT_LT(std::abs(sd - 1.0), 1e-6);
    }
  }
}

TEST(Extractor, TranslationCovariantAtPatchGranularity) {
  const int patch = 4;
  const auto img = random_image(32, 32, 4);
  Image shifted(32, 32, 1);
  for (int i = 0; i < 32; ++i) {
    for (int j = 0; j < 32; ++j) shifted.at(i, j) = img.at(i, (j + 32 - patch) % 32);
  }
  const auto c = config(1, patch, {12});
  const auto a = extract_multiscale_raw(img, c).levels[0];
  const auto b = extract_multiscale_raw(shifted, c).levels[0];
  for (int ch = 0; ch < a.channels(); ++ch) {
    for (int i = 0; i < a.height(); ++i) {
      for (int j = 0; j + 1 < a.width(); ++j) EXPECT_EQ(b(ch, i, j + 1), a(ch, i, j));
    }
  }
}

TEST(Extractor, RgbAveragedToLuminance) {
  auto rgb = random_image(16, 16, 6, 3);
  Image gray(16, 16, 1);
  for (int i = 0; i < 16; ++i) {
    for (int j = 0; j < 16; ++j) gray.at(i, j) = (rgb.at(i, j, 0) + rgb.at(i, j, 1) + rgb.at(i, j, 2)) / 3;
  }
  const auto c = config(2, 2, {8, 8});
  const auto a = extract_multiscale(rgb, c);
  const auto b = extract_multiscale(gray, c);
  for (int l = 0; l < 2; ++l) EXPECT_LT(max_abs_diff(a.levels[l], b.levels[l]), 1e-12);
}

TEST(Extractor, Errors) {
  EXPECT_THROW(extract_multiscale(random_image(30, 32, 1), config(2, 4, {8, 8})), ShapeError);
  EXPECT_THROW(extract_multiscale(random_image(36, 36, 1), config(2, 4, {8, 8})), ShapeError);
  EXPECT_THROW(extract_multiscale(random_image(32, 32, 1, 2), config(1, 4, {8})), ShapeError);
  EXPECT_THROW(extract_multiscale(random_image(32, 32, 1), config(2, 4, {8})), ParameterError);
  EXPECT_THROW(extract_multiscale(random_image(32, 32, 1), config(1, 0, {8})), ParameterError);
}

TEST(Ufv, RoundTripBitExact) {
  Rng rng(9);
  auto p = oracle::random_pyramid({3, 5, 2}, 8, 12, rng);
  for (auto& v : p.levels) {
    for (double& x : v.data()) x = static_cast<float>(x);
  }
  const auto bytes = encode_ufv(p);
  EXPECT_EQ(decode_ufv(bytes), p);
  EXPECT_EQ(encode_ufv(decode_ufv(bytes)), bytes);
  const auto path = std::filesystem::temp_directory_path() / "uflow_test_roundtrip.ufv";
  write_ufv(p, path);
  EXPECT_EQ(read_ufv(path), p);
  std::filesystem::remove(path);
}

TEST(Ufv, HeaderLayout) {
  Rng rng(1);
  const auto p = oracle::random_pyramid({2}, 1, 3, rng);
  const auto bytes = encode_ufv(p);
  ASSERT_EQ(bytes.size(), 4u + 4u + 12u + 6u * 4u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "UFV1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 2);
  EXPECT_EQ(bytes[12], 1);
  EXPECT_EQ(bytes[16], 3);
}

TEST(Ufv, ParseErrors) {
  Rng rng(2);
  const auto p = oracle::random_pyramid({2, 4}, 4, 4, rng);
  auto good = encode_ufv(p);

  auto bad_magic = good;
  bad_magic[0] = bad_magic[1] = bad_magic[2] = bad_magic[3] = 'X';
  EXPECT_NE(error_of(bad_magic).find("bad magic"), std::string::npos);

  auto truncated = good;
  truncated.resize(truncated.size() - 4);
  EXPECT_NE(error_of(truncated).find("truncated payload"), std::string::npos);

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_NE(error_of(trailing).find("trailing"), std::string::npos);

  auto header_only = good;
  header_only.resize(10);
  EXPECT_NE(error_of(header_only).find("truncated"), std::string::npos);

  auto bad_height = good;
  bad_height[8 + 12 + 4] = 3;  // level 1 height 3, level 0 height 4
  EXPECT_NE(error_of(bad_height).find("height"), std::string::npos);

  auto zero_channels = good;
  zero_channels[8] = 0;
  EXPECT_NE(error_of(zero_channels).find("channels"), std::string::npos);
}

TEST(Ufv, ReadErrorNamesPath) {
  const auto path = std::filesystem::temp_directory_path() / "uflow_test_bad.ufv";
  binary::write_file(path, std::vector<std::uint8_t>{'X', 'X', 'X', 'X'});
  try {
    read_ufv(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  std::filesystem::remove(path);
}
