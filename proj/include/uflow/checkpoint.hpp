#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "uflow/flow.hpp"

namespace uflow {

// UFM v1 model file; layout in docs/FORMATS.md. Values are stored as float32,
// so a graph whose parameters are already float32-representable (see
// UFlowGraph::round_to_float32) round-trips bit-exactly.
std::vector<std::uint8_t> encode_ufm(const UFlowGraph& graph);
UFlowGraph decode_ufm(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const UFlowGraph& graph, const std::filesystem::path& path);
UFlowGraph load_checkpoint(const std::filesystem::path& path);

}  // namespace uflow
