#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support/oracles.hpp"
#include "uflow/errors.hpp"
#include "uflow/scoring.hpp"

using namespace uflow;

namespace {

// Per-pixel evaluation of the printed score with explicit loops.
Raster brute_score(const LatentPyramid& lat, double factor) {
  const int h = lat.z[0].height();
  const int w = lat.z[0].width();
  Raster out(h, w, 0.0);
  for (const auto& z : lat.z) {
    Raster e(z.height(), z.width());
    for (int i = 0; i < z.height(); ++i) {
      for (int j = 0; j < z.width(); ++j) {
        double s = 0.0;
        for (int c = 0; c < z.channels(); ++c) s += z(c, i, j) * z(c, i, j);
        e.at(i, j) = std::exp(-factor * s / z.channels());
      }
    }
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) out.at(i, j) -= oracle::bilinear_at(e, i, j, h, w) / lat.z.size();
    }
  }
  return out;
}

LatentPyramid single(double v) {
  LatentPyramid lat;
  lat.z.push_back(Volume(1, 1, 1, v));
  return lat;
}

}  // namespace

TEST(Score, Examples) {
  LatentPyramid zero;
  zero.z.push_back(Volume(3, 4, 4));
  zero.z.push_back(Volume(2, 2, 2));
  for (double v : likelihood_score_map(zero).values) EXPECT_EQ(v, -1.0);

  const auto far = likelihood_score_map(single(1e3));
  EXPECT_LE(far.values[0], 0.0);
  EXPECT_GT(far.values[0], -1e-12);

  EXPECT_NEAR(likelihood_score_map(single(std::sqrt(2.0))).values[0], -std::exp(-0.5), 1e-12);
  EXPECT_NEAR(likelihood_score_map(single(std::sqrt(2.0)), ScoreFormula::single_half).values[0],
              -std::exp(-1.0), 1e-12);
}

TEST(Score, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int levels = 1 + static_cast<int>(rng.below(3));
    std::vector<int> ch;
    for (int l = 0; l < levels; ++l) ch.push_back(1 + static_cast<int>(rng.below(5)));
    const int h = 8;
    const int w = 4 << static_cast<int>(rng.below(2));
    const auto lat = oracle::random_latents(ch, h, w, rng);
    const auto a = likelihood_score_map(lat);
    const auto b = brute_score(lat, 0.25);
    ASSERT_EQ(a.height, h);
    ASSERT_EQ(a.width, w);
    for (std::size_t p = 0; p < a.size(); ++p) EXPECT_NEAR(a.values[p], b.values[p], 1e-6);
    const auto c = likelihood_score_map(lat, ScoreFormula::single_half);
    const auto d = brute_score(lat, 0.5);
    for (std::size_t p = 0; p < c.size(); ++p) EXPECT_NEAR(c.values[p], d.values[p], 1e-6);
  }
}

TEST(Score, RangeAndMonotonicity) {
  Rng rng(2);
  auto lat = oracle::random_latents({4, 3}, 8, 8, rng);
  const auto base = likelihood_score_map(lat);
  for (double v : base.values) {
    EXPECT_GE(v, -1.0);
    EXPECT_LT(v, 0.0);
  }
  auto fine = lat;
  fine.z[0](1, 3, 5) *= 3.0;
  fine.z[0](1, 3, 5) += 0.5;
  const auto after = likelihood_score_map(fine);
  EXPECT_GT(after.at(3, 5), base.at(3, 5));
  for (std::size_t p = 0; p < base.size(); ++p) EXPECT_GE(after.values[p], base.values[p]);

  auto coarse = lat;
  coarse.z[1](0, 1, 1) = 10.0;
  const auto c = likelihood_score_map(coarse);
  for (std::size_t p = 0; p < base.size(); ++p) EXPECT_GE(c.values[p], base.values[p] - 1e-15);
}

TEST(Score, EmptyLatents) {
  EXPECT_THROW(likelihood_score_map(LatentPyramid{}), ShapeError);
  EXPECT_THROW(image_score(Raster{}), ShapeError);
}

TEST(ImageScore, Max) {
  Raster r(3, 4, -0.7);
  EXPECT_EQ(image_score(r), -0.7);
  r.at(2, 1) = -0.2;
  EXPECT_EQ(image_score(r), -0.2);
  Rng rng(3);
  for (double& v : r.values) v = rng.normal();
  EXPECT_EQ(image_score(r), *std::max_element(r.values.begin(), r.values.end()));
}

TEST(Upsample, Examples) {
  Raster m(2, 2);
  m.values = {0, 1, 0, 1};
  const auto u = upsample_bilinear(m, 2, 4);
  const std::vector<double> row{0, 1.0 / 3, 2.0 / 3, 1};
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(u.at(i, j), row[j], 1e-15);
  }
  Rng rng(4);
  Raster r(3, 5);
  for (double& v : r.values) v = rng.normal();
  EXPECT_EQ(upsample_bilinear(r, 3, 5), r);
  const auto c = upsample_bilinear(Raster(3, 2, 0.7), 9, 7);
  for (double v : c.values) EXPECT_NEAR(v, 0.7, 1e-15);
}

TEST(Upsample, MatchesPointwiseFormula) {
  Rng rng(5);
  Raster r(4, 3);
  for (double& v : r.values) v = rng.normal();
  const auto u = upsample_bilinear(r, 8, 11);
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 11; ++j) EXPECT_NEAR(u.at(i, j), oracle::bilinear_at(r, i, j, 8, 11), 1e-12);
  }
  const auto one = upsample_bilinear(Raster(1, 1, 2.5), 4, 4);
  for (double v : one.values) EXPECT_EQ(v, 2.5);
}

TEST(Upsample, RejectsShrinking) {
  EXPECT_THROW(upsample_bilinear(Raster(4, 4), 2, 4), ParameterError);
  EXPECT_THROW(upsample_bilinear(Raster(4, 4), 4, 3), ParameterError);
}
