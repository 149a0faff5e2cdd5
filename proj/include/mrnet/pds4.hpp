#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

namespace mrnet {

// The Array_3D_Image subset of a PDS4 2B image product label: three axes
// (Band/Line/Sample), unsigned-byte elements, a local data file, a byte
// offset, and the axis storage order (band-sequential by default).
struct Pds4LiteLabel {
  std::int64_t axes = 3;
  std::int64_t bands = 0;
  std::int64_t lines = 0;
  std::int64_t samples = 0;
  std::string element_type;  // "UnsignedByte"
  std::string data_file;
  std::int64_t offset = 0;
  // Axis names from slowest to fastest varying in the data file.
  std::array<std::string, 3> storage_order{"Band", "Line", "Sample"};

  std::int64_t extent_of(const std::string& axis_name) const;
  std::int64_t payload_bytes() const { return bands * lines * samples; }
};

Pds4LiteLabel pds4lite_parse_string(const std::string& xml, const std::string& origin = "<string>");
Pds4LiteLabel pds4lite_parse(const std::filesystem::path& label_file);

// Reassembles the raw bytes into an interleaved RGB PNG at out_path. Pixel
// values are preserved exactly; a short raw file is rejected before any
// output is written.
void pds4lite_convert(const Pds4LiteLabel& label, const std::filesystem::path& raw_file,
                      const std::filesystem::path& out_path);

}  // namespace mrnet
