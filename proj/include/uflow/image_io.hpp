#pragma once

#include <filesystem>

#include "uflow/features.hpp"
#include "uflow/scoring.hpp"

namespace uflow {

// Binary PGM (P5), maxval up to 65535; values are scaled to [0, 1].
Image read_pgm(const std::filesystem::path& path);
// 8-bit PGM of an image in [0, 1] (out-of-range values are clamped).
void write_pgm(const Image& image, const std::filesystem::path& path);

// 0 / 255 PGM; any nonzero pixel reads back as 1.
void write_mask_pgm(const Mask& mask, const std::filesystem::path& path);
Mask read_mask_pgm(const std::filesystem::path& path);

// Grayscale little-endian PFM ("Pf", scale -1), rows stored bottom to top.
void write_pfm(const Raster& map, const std::filesystem::path& path);
Raster read_pfm(const std::filesystem::path& path);

// 16-bit PGM of a map affinely rescaled from [min, max] to [0, 65535]. The
// sidecar `<path>.scale` holds "min <v>" and "max <v>" lines so that
// value = min + (max - min) * pixel / 65535.
void write_pgm16_scaled(const Raster& map, const std::filesystem::path& path);

}  // namespace uflow
