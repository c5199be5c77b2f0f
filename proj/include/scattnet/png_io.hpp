#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace scattnet {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 3 or 4
  std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

PngImage read_png(const std::string& path);
// pixels must be interleaved RGB (channels=3) or RGBA (channels=4).
void write_png(const std::string& path, const PngImage& image);

}  // namespace scattnet
