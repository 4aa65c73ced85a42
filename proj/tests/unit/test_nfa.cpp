#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support/oracles.hpp"
#include "uflow/errors.hpp"
#include "uflow/nfa.hpp"
#include "uflow/numerics.hpp"

using namespace uflow;

namespace {

LatentPyramid random_mixture(const std::vector<int>& ch, int h, Rng& rng) {
  auto lat = oracle::random_latents(ch, h, h, rng);
  const double boost = 1.0 + 2.0 * rng.uniform();
  for (auto& z : lat.z) {
    for (double& v : z.data()) {
      if (rng.uniform() < 0.3) v *= boost;
    }
  }
  return lat;
}

NfaConfig config_for(int levels) {
  NfaConfig c;
  c.windows = levels == 1 ? std::vector<int>{5} : std::vector<int>{5, 3};
  return c;
}

}  // namespace

TEST(NfaConfig, TauIsChiSquaredQuantile) {
  NfaConfig c;
  EXPECT_NEAR(c.tau(), 2.70554, 1e-4);
  EXPECT_EQ(c.tau(), chi2_quantile(0.9));
}

TEST(Candidates, Examples) {
  LatentPyramid lat;
  lat.z.push_back(Volume(2, 3, 3));
  for (const auto& m : candidate_mask(lat, 2.70554)) {
    for (double v : m.data()) EXPECT_EQ(v, 0.0);
  }
  lat.z[0](1, 2, 0) = 2.0;
  lat.z[0](0, 1, 1) = -1.5;
  lat.z[0](0, 0, 0) = 1.6;
  const auto m = candidate_mask(lat, 2.70554)[0];
  EXPECT_EQ(m(1, 2, 0), 1.0);
  EXPECT_EQ(m(0, 1, 1), 0.0);
  EXPECT_EQ(m(0, 0, 0), 0.0);
  const auto all = candidate_mask(lat, 0.0)[0];
  for (std::size_t p = 0; p < all.size(); ++p) EXPECT_EQ(all.data()[p], lat.z[0].data()[p] != 0.0 ? 1.0 : 0.0);
}

TEST(LogNfa, NoCandidatesGivesLogTests) {
  LatentPyramid lat;
  lat.z.push_back(Volume(4, 8, 8));
  lat.z.push_back(Volume(2, 4, 4));
  const auto r = log_nfa_map(lat, config_for(2));
  EXPECT_EQ(r.n_tests, 80);
  for (double v : r.map.values) EXPECT_NEAR(v, std::log(80.0), 1e-12);
  EXPECT_EQ(auto_segment(r).count(), 0u);
}

TEST(LogNfa, FullBlockExample) {
  LatentPyramid lat;
  lat.z.push_back(Volume(3, 8, 8, 10.0));
  NfaConfig c;
  c.windows = {3};
  const auto r = log_nfa_map(lat, c);
  EXPECT_EQ(r.n_tests, 64);
  EXPECT_NEAR(r.map.at(4, 4), std::log(64.0) + 9 * std::log(0.1), 1e-9);
  EXPECT_NEAR(r.map.at(4, 4), -16.56, 5e-3);
  EXPECT_NEAR(r.map.at(0, 0), std::log(64.0) + 4 * std::log(0.1), 1e-9);
  EXPECT_EQ(auto_segment(r).count(), 64u);
}

TEST(LogNfa, MatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 40; ++trial) {
    const int levels = 1 + static_cast<int>(rng.below(2));
    std::vector<int> ch;
    for (int l = 0; l < levels; ++l) ch.push_back(1 + static_cast<int>(rng.below(4)));
    const auto lat = random_mixture(ch, 8, rng);
    auto cfg = config_for(levels);
    if (rng.uniform() < 0.5) cfg.windows[0] = 3;
    const auto got = log_nfa_map(lat, cfg);
    const auto want = oracle::log_nfa_brute_force(lat, cfg.p, cfg.tau(), cfg.windows);
    for (std::size_t p = 0; p < want.size(); ++p) EXPECT_NEAR(got.map.values[p], want.values[p], 1e-8);
  }
}

TEST(LogNfa, HighPrecisionAgrees) {
  Rng rng(2);
  const auto lat = random_mixture({4, 4}, 8, rng);
  auto cfg = config_for(2);
  const auto a = log_nfa_map(lat, cfg);
  cfg.high_precision = true;
  const auto b = log_nfa_map(lat, cfg);
  for (std::size_t p = 0; p < a.map.size(); ++p) EXPECT_NEAR(a.map.values[p], b.map.values[p], 1e-9);
}

TEST(LogNfa, RaisingAValueNeverIncreasesLogNfa) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto lat = random_mixture({3, 2}, 8, rng);
    const auto before = log_nfa_map(lat, config_for(2));
    const int l = static_cast<int>(rng.below(2));
    auto& z = lat.z[l];
    double& v = z(static_cast<int>(rng.below(z.channels())), static_cast<int>(rng.below(z.height())),
                  static_cast<int>(rng.below(z.width())));
    v = (std::abs(v) + 1.0 + 3.0 * rng.uniform()) * (v < 0 ? -1.0 : 1.0);
    const auto after = log_nfa_map(lat, config_for(2));
    for (std::size_t p = 0; p < before.map.size(); ++p) {
      EXPECT_LE(after.map.values[p], before.map.values[p] + 1e-12);
    }
  }
}

TEST(AutoSegment, Examples) {
  LogNfaMap m{Raster(3, 3, std::log(9.0)), 9};
  EXPECT_EQ(auto_segment(m).count(), 0u);
  m.map.at(1, 2) = -1.0;
  const auto one = auto_segment(m);
  EXPECT_EQ(one.count(), 1u);
  EXPECT_EQ(one.at(1, 2), 1);
  EXPECT_EQ(auto_segment(m, std::numeric_limits<double>::infinity()).count(), 9u);
}

TEST(AutoSegment, LowerThresholdsNest) {
  Rng rng(4);
  const auto r = log_nfa_map(random_mixture({4, 4}, 8, rng), config_for(2));
  Mask prev = auto_segment(r, 10.0);
  for (double t = 8.0; t >= -40.0; t -= 2.0) {
    const auto m = auto_segment(r, t);
    for (std::size_t p = 0; p < m.size(); ++p) EXPECT_LE(m.values[p], prev.values[p]);
    prev = m;
  }
}

TEST(NfaConfig, Validation) {
  LatentPyramid lat;
  lat.z.push_back(Volume(2, 4, 4));
  lat.z.push_back(Volume(2, 2, 2));
  NfaConfig c;
  EXPECT_NO_THROW(log_nfa_map(lat, c));
  c.windows = {5, 5};
  EXPECT_THROW(validate(c, lat), ParameterError);
  c.windows = {4, 3};
  EXPECT_THROW(validate(c, lat), ParameterError);
  c.windows = {5};
  EXPECT_THROW(validate(c, lat), ParameterError);
  c.windows = {7, 3};
  EXPECT_NO_THROW(validate(c, lat));
  c.p = 1.0;
  EXPECT_THROW(validate(c, lat), ParameterError);
  c.p = 0.0;
  EXPECT_THROW(validate(c, lat), ParameterError);
}

TEST(LogNfa, CalibratedOnWhiteNoise) {
  Rng rng(5);
  NfaConfig c;
  double detections = 0.0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const auto lat = oracle::random_latents({8, 8}, 28, 28, rng);
    const auto r = log_nfa_map(lat, c);
    EXPECT_EQ(r.n_tests, 28 * 28 + 14 * 14);
    detections += static_cast<double>(auto_segment(r).count());
  }
  EXPECT_LE(detections / n, 1.0);
}
