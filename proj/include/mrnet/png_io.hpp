#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mrnet {

struct PngImage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved rows, channels innermost
};

// 8-bit decode; rejects non-RGB color types rather than converting.
PngImage read_png(const std::filesystem::path& path);

void write_png_rgb8(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
                    const std::vector<std::uint8_t>& interleaved);

}  // namespace mrnet
