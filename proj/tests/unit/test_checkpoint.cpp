#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "support/oracles.hpp"
#include "uflow/checkpoint.hpp"
#include "uflow/errors.hpp"

using namespace uflow;

namespace {

std::vector<std::vector<double>> parameters(const UFlowGraph& g) {
  std::vector<std::vector<double>> out;
  g.visit_parameters([&](const std::string&, std::span<const double> v) {
    out.emplace_back(v.begin(), v.end());
  });
  return out;
}

std::string error_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_ufm(bytes);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripBitExact) {
  auto g = oracle::random_graph(GraphConfig{{3, 7, 8}, 3, 1.5}, 4);
  g.round_to_float32();
  const auto bytes = encode_ufm(g);
  const auto back = decode_ufm(bytes);
  EXPECT_EQ(back.config().feature_channels, g.config().feature_channels);
  EXPECT_EQ(back.config().steps_per_stage, 3);
  EXPECT_EQ(back.config().clamp, 1.5);
  EXPECT_TRUE(back.actnorm_initialized());
  EXPECT_EQ(parameters(back), parameters(g));
  for (std::size_t s = 0; s < g.stages().size(); ++s) {
    for (std::size_t t = 0; t < g.stages()[s].size(); ++t) {
      EXPECT_EQ(back.stages()[s][t].mixing.permutation, g.stages()[s][t].mixing.permutation);
      EXPECT_EQ(back.stages()[s][t].mixing.sign, g.stages()[s][t].mixing.sign);
    }
  }
  EXPECT_EQ(encode_ufm(back), bytes);

  Rng rng(1);
  const auto x = oracle::random_pyramid({3, 7, 8}, 8, 8, rng);
  const auto a = g.forward(x);
  const auto b = back.forward(x);
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.logdet, b.logdet);
}

TEST(Checkpoint, FileRoundTrip) {
  UFlowGraph g(GraphConfig{{8, 16}, 4, 2.0}, 9);
  g.round_to_float32();
  const auto path = std::filesystem::temp_directory_path() / "uflow_test_model.ufm";
  save_checkpoint(g, path);
  const auto back = load_checkpoint(path);
  EXPECT_FALSE(back.actnorm_initialized());
  EXPECT_EQ(parameters(back), parameters(g));
  std::filesystem::remove(path);
}

TEST(Checkpoint, ParseErrors) {
  auto g = oracle::random_graph(GraphConfig{{4}, 2, 2.0}, 2);
  const auto good = encode_ufm(g);

  auto magic = good;
  magic[0] = 'X';
  EXPECT_NE(error_of(magic).find("bad magic"), std::string::npos);

  auto version = good;
  version[4] = 2;
  EXPECT_NE(error_of(version).find("version"), std::string::npos);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_NE(error_of(truncated).find("truncated"), std::string::npos);

  auto trailing = good;
  trailing.push_back(1);
  EXPECT_NE(error_of(trailing).find("trailing"), std::string::npos);

  auto odd = good;
  odd[24] = 5;  // level 0 channel count
  EXPECT_NE(error_of(odd).find("inconsistent graph"), std::string::npos);

  auto perm = good;
  perm[28] = 9;  // first permutation entry out of range
  EXPECT_NE(error_of(perm).find("permutation"), std::string::npos);
}

TEST(Checkpoint, LoadErrorNamesPath) {
  const auto path = std::filesystem::temp_directory_path() / "uflow_missing_model.ufm";
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}
