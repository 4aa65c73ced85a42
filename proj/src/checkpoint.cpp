#include "uflow/checkpoint.hpp"

#include <cmath>
#include <string>

#include "uflow/binary_io.hpp"
#include "uflow/errors.hpp"

namespace uflow {

namespace {

constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_ufm(const UFlowGraph& graph) {
  binary::Writer w;
  const auto& config = graph.config();
  w.bytes("UFM1");
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(graph.num_levels()));
  w.u32(static_cast<std::uint32_t>(config.steps_per_stage));
  w.f32(static_cast<float>(config.clamp));
  w.u32(graph.actnorm_initialized() ? 1 : 0);
  for (int c : config.feature_channels) w.u32(static_cast<std::uint32_t>(c));
  for (const auto& stage : graph.stages()) {
    for (const auto& step : stage) {
      for (int p : step.mixing.permutation) w.u32(static_cast<std::uint32_t>(p));
      for (double s : step.mixing.sign) w.f32(static_cast<float>(s));
      const_cast<FlowStep&>(step).visit([&](const std::string&, std::span<double> values) {
        for (double v : values) w.f32(static_cast<float>(v));
      });
    }
  }
  return std::move(w.buffer());
}

UFlowGraph decode_ufm(const std::vector<std::uint8_t>& bytes) {
  binary::Reader r(bytes);
  if (r.remaining() < 4 || r.bytes(4, "magic") != "UFM1") throw ParseError("bad magic");
  const std::uint32_t version = r.u32("header (version)");
  if (version != kVersion) throw ParseError("unsupported version " + std::to_string(version));
  const std::uint32_t levels = r.u32("header (levels)");
  const std::uint32_t steps = r.u32("header (steps per stage)");
  const float clamp = r.f32("header (clamp)");
  const std::uint32_t initialized = r.u32("header (actnorm flag)");
  if (levels == 0 || levels > 16) throw ParseError("implausible level count " + std::to_string(levels));
  if (steps == 0 || steps > 1024) throw ParseError("implausible step count " + std::to_string(steps));
  if (!(clamp > 0.0f) || !std::isfinite(clamp)) throw ParseError("clamp must be positive");
  if (initialized > 1) throw ParseError("actnorm flag must be 0 or 1");

  GraphConfig config;
  config.steps_per_stage = static_cast<int>(steps);
  config.clamp = clamp;
  for (std::uint32_t l = 0; l < levels; ++l) {
    const std::uint32_t c = r.u32("header (feature channels)");
    if (c == 0 || c > 4096) throw ParseError("implausible channel count at level " + std::to_string(l));
    config.feature_channels.push_back(static_cast<int>(c));
  }
  UFlowGraph graph = [&] {
    try {
      return UFlowGraph::identity(config);
    } catch (const ShapeError& e) {
      throw ParseError(std::string("inconsistent graph: ") + e.what());
    }
  }();
  for (auto& stage : graph.stages()) {
    for (auto& step : stage) {
      const int d = step.actnorm.channels();
      std::vector<bool> seen(d, false);
      for (int i = 0; i < d; ++i) {
        const std::uint32_t p = r.u32("permutation");
        if (p >= static_cast<std::uint32_t>(d) || seen[p]) throw ParseError("invalid permutation");
        seen[p] = true;
        step.mixing.permutation[i] = static_cast<int>(p);
      }
      for (int i = 0; i < d; ++i) {
        const float s = r.f32("sign");
        if (s != 1.0f && s != -1.0f) throw ParseError("mixing sign must be +-1");
        step.mixing.sign[i] = s;
      }
      step.visit([&](const std::string& name, std::span<double> values) {
        for (double& v : values) {
          const float f = r.f32(name.c_str());
          if (!std::isfinite(f)) throw ParseError("non-finite value in " + name);
          v = f;
        }
      });
    }
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after payload");
  graph.set_actnorm_initialized(initialized == 1);
  return graph;
}

void save_checkpoint(const UFlowGraph& graph, const std::filesystem::path& path) {
  binary::write_file(path, encode_ufm(graph));
}

UFlowGraph load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_ufm(binary::read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + std::string(e.what()).substr(13));
  }
}

}  // namespace uflow
