#include "uflow/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "uflow/binary_io.hpp"
#include "uflow/errors.hpp"

namespace uflow {

namespace binary {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace binary

namespace {

struct PgmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t offset = 0;
};

// Netpbm header: magic, width, height, maxval separated by whitespace with
// '#' comments, then exactly one whitespace byte.
PgmHeader parse_pgm_header(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') t += static_cast<char>(bytes[pos++]);
    if (t.empty()) throw ParseError(name + ": truncated PGM header");
    return t;
  };
  if (token() != "P5") throw ParseError(name + ": not a binary PGM");
  PgmHeader h;
  try {
    h.width = std::stoi(token());
    h.height = std::stoi(token());
    h.maxval = std::stoi(token());
  } catch (const std::logic_error&) {
    throw ParseError(name + ": malformed PGM header");
  }
  if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
    throw ParseError(name + ": invalid PGM dimensions or maxval");
  }
  h.offset = pos + 1;
  const std::size_t bpp = h.maxval > 255 ? 2 : 1;
  if (bytes.size() < h.offset + static_cast<std::size_t>(h.width) * h.height * bpp) {
    throw ParseError(name + ": truncated PGM payload");
  }
  return h;
}

std::vector<int> read_pgm_samples(const std::filesystem::path& path, PgmHeader& h) {
  const auto bytes = binary::read_file(path);
  h = parse_pgm_header(bytes, path.string());
  std::vector<int> out(static_cast<std::size_t>(h.width) * h.height);
  for (std::size_t p = 0; p < out.size(); ++p) {
    if (h.maxval > 255) {
      out[p] = (bytes[h.offset + 2 * p] << 8) | bytes[h.offset + 2 * p + 1];
    } else {
      out[p] = bytes[h.offset + p];
    }
  }
  return out;
}

void write_pgm_samples(const std::filesystem::path& path, int width, int height, int maxval,
                       const std::vector<int>& samples) {
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n" +
                             std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (int s : samples) {
    if (maxval > 255) bytes.push_back(static_cast<std::uint8_t>(s >> 8));
    bytes.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  binary::write_file(path, bytes);
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  PgmHeader h;
  const auto samples = read_pgm_samples(path, h);
  Image img(h.height, h.width);
  for (std::size_t p = 0; p < samples.size(); ++p) img.pixels[p] = static_cast<double>(samples[p]) / h.maxval;
  return img;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1) throw ShapeError("write_pgm needs a single-channel image");
  std::vector<int> samples(image.pixels.size());
  for (std::size_t p = 0; p < samples.size(); ++p) {
    samples[p] = static_cast<int>(std::lround(255.0 * std::clamp(image.pixels[p], 0.0, 1.0)));
  }
  write_pgm_samples(path, image.width, image.height, 255, samples);
}

void write_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
  std::vector<int> samples(mask.size());
  for (std::size_t p = 0; p < samples.size(); ++p) samples[p] = mask.values[p] ? 255 : 0;
  write_pgm_samples(path, mask.width, mask.height, 255, samples);
}

Mask read_mask_pgm(const std::filesystem::path& path) {
  PgmHeader h;
  const auto samples = read_pgm_samples(path, h);
  Mask m(h.height, h.width);
  for (std::size_t p = 0; p < samples.size(); ++p) m.values[p] = samples[p] != 0 ? 1 : 0;
  return m;
}

void write_pfm(const Raster& map, const std::filesystem::path& path) {
  binary::Writer w;
  w.bytes("Pf\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n-1.0\n");
  for (int i = map.height - 1; i >= 0; --i) {
    for (int j = 0; j < map.width; ++j) w.f32(static_cast<float>(map.at(i, j)));
  }
  binary::write_file(path, w.buffer());
}

Raster read_pfm(const std::filesystem::path& path) {
  const auto bytes = binary::read_file(path);
  // Three newline-terminated header lines.
  std::size_t pos = 0;
  std::string lines[3];
  for (auto& line : lines) {
    while (pos < bytes.size() && bytes[pos] != '\n') line += static_cast<char>(bytes[pos++]);
    if (pos >= bytes.size()) throw ParseError(path.string() + ": truncated PFM header");
    ++pos;
  }
  if (lines[0] != "Pf") throw ParseError(path.string() + ": not a grayscale PFM");
  int width = 0;
  int height = 0;
  double scale = 0.0;
  std::istringstream dims(lines[1]);
  std::istringstream sc(lines[2]);
  if (!(dims >> width >> height) || !(sc >> scale) || width <= 0 || height <= 0 || scale == 0.0) {
    throw ParseError(path.string() + ": malformed PFM header");
  }
  if (scale > 0.0) throw ParseError(path.string() + ": big-endian PFM is not supported");
  const std::vector<std::uint8_t> payload(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  if (payload.size() != static_cast<std::size_t>(width) * height * 4) {
    throw ParseError(path.string() + ": PFM payload has the wrong size");
  }
  binary::Reader r(payload);
  Raster map(height, width);
  for (int i = height - 1; i >= 0; --i) {
    for (int j = 0; j < width; ++j) map.at(i, j) = r.f32("PFM payload");
  }
  return map;
}

void write_pgm16_scaled(const Raster& map, const std::filesystem::path& path) {
  if (map.empty()) throw ShapeError("write_pgm16_scaled: empty map");
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double range = hi > lo ? hi - lo : 1.0;
  std::vector<int> samples(map.size());
  for (std::size_t p = 0; p < samples.size(); ++p) {
    samples[p] = static_cast<int>(std::lround(65535.0 * (map.values[p] - lo) / range));
  }
  write_pgm_samples(path, map.width, map.height, 65535, samples);
  std::ofstream side(path.string() + ".scale");
  if (!side) throw IoError("cannot write " + path.string() + ".scale");
  char buf[96];
  std::snprintf(buf, sizeof buf, "min %.17g\nmax %.17g\n", lo, hi);
  side << buf;
}

}  // namespace uflow
