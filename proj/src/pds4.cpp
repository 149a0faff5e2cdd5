#include "mrnet/pds4.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

#include "mrnet/png_io.hpp"
#include "mrnet/xml_lite.hpp"

namespace mrnet {

namespace {

[[noreturn]] void label_error(const std::string& origin, const std::string& msg) {
  throw std::runtime_error("pds4 label " + origin + ": " + msg);
}

std::int64_t int_text(const XmlNode& node, const std::string& origin) {
  try {
    std::size_t used = 0;
    const std::int64_t v = std::stoll(node.text, &used);
    if (used != node.text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    label_error(origin, "element <" + node.name + "> does not hold an integer ('" + node.text + "')");
  }
}

}  // namespace

std::int64_t Pds4LiteLabel::extent_of(const std::string& axis_name) const {
  if (axis_name == "Band") return bands;
  if (axis_name == "Line") return lines;
  return samples;
}

Pds4LiteLabel pds4lite_parse_string(const std::string& xml, const std::string& origin) {
  XmlNode root = xml_parse(xml);

  const XmlNode* array = root.find("Array_3D_Image");
  if (!array) label_error(origin, "missing <Array_3D_Image>");

  Pds4LiteLabel label;

  const XmlNode* axes = array->child("axes");
  if (!axes) label_error(origin, "missing <axes>");
  label.axes = int_text(*axes, origin);
  if (label.axes != 3) label_error(origin, "unsupported <axes> value " + std::to_string(label.axes) + " (need 3)");

  const XmlNode* offset = array->child("offset");
  if (!offset) label_error(origin, "missing <offset>");
  label.offset = int_text(*offset, origin);
  if (label.offset < 0) label_error(origin, "<offset> must be nonnegative");

  const XmlNode* elem = array->find("Element_Array");
  const XmlNode* dtype = elem ? elem->child("data_type") : nullptr;
  if (!dtype) label_error(origin, "missing <Element_Array>/<data_type>");
  label.element_type = dtype->text;
  if (label.element_type != "UnsignedByte")
    label_error(origin, "unsupported <data_type> '" + label.element_type + "' (only UnsignedByte)");

  const auto axis_arrays = array->children_named("Axis_Array");
  if (axis_arrays.size() != 3)
    label_error(origin, "expected 3 <Axis_Array> elements, found " + std::to_string(axis_arrays.size()));

  std::map<std::int64_t, std::string> order;  // sequence number -> axis name
  bool saw_band = false, saw_line = false, saw_sample = false;
  for (const XmlNode* axis : axis_arrays) {
    const XmlNode* name = axis->child("axis_name");
    if (!name) label_error(origin, "an <Axis_Array> is missing <axis_name>");
    const XmlNode* elements = axis->child("elements");
    if (!elements) label_error(origin, "<Axis_Array> '" + name->text + "' is missing <elements>");
    const std::int64_t extent = int_text(*elements, origin);
    if (extent < 1) label_error(origin, "axis '" + name->text + "' extent must be positive");

    std::int64_t seq = static_cast<std::int64_t>(order.size()) + 1;
    if (const XmlNode* s = axis->child("sequence_number")) seq = int_text(*s, origin);

    if (name->text == "Band") {
      label.bands = extent;
      saw_band = true;
    } else if (name->text == "Line") {
      label.lines = extent;
      saw_line = true;
    } else if (name->text == "Sample") {
      label.samples = extent;
      saw_sample = true;
    } else {
      label_error(origin, "unknown <axis_name> '" + name->text + "' (need Band/Line/Sample)");
    }
    if (!order.emplace(seq, name->text).second)
      label_error(origin, "duplicate <sequence_number> " + std::to_string(seq));
  }
  if (!saw_band) label_error(origin, "missing <Axis_Array> for axis 'Band'");
  if (!saw_line) label_error(origin, "missing <Axis_Array> for axis 'Line'");
  if (!saw_sample) label_error(origin, "missing <Axis_Array> for axis 'Sample'");

  std::size_t i = 0;
  for (const auto& [seq, name] : order) label.storage_order[i++] = name;

  const XmlNode* file_name = root.find("file_name");
  if (!file_name) label_error(origin, "missing <file_name>");
  label.data_file = file_name->text;

  return label;
}

Pds4LiteLabel pds4lite_parse(const std::filesystem::path& label_file) {
  std::ifstream in(label_file, std::ios::binary);
  if (!in) throw std::runtime_error("pds4 label " + label_file.string() + ": cannot open");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return pds4lite_parse_string(content, label_file.string());
}

void pds4lite_convert(const Pds4LiteLabel& label, const std::filesystem::path& raw_file,
                      const std::filesystem::path& out_path) {
  if (label.bands != 3)
    throw std::runtime_error("pds4 convert: product has " + std::to_string(label.bands) +
                             " bands, need 3 for a color image");

  std::ifstream in(raw_file, std::ios::binary);
  if (!in) throw std::runtime_error("pds4 convert: cannot open raw file " + raw_file.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::int64_t needed = label.offset + label.payload_bytes();
  if (static_cast<std::int64_t>(raw.size()) < needed)
    throw std::runtime_error("pds4 convert: raw file " + raw_file.string() + " holds " +
                             std::to_string(raw.size()) + " bytes, need " + std::to_string(needed));

  // Strides of each axis in the stored layout, slowest to fastest.
  std::int64_t stride_band = 0, stride_line = 0, stride_sample = 0;
  std::int64_t stride = 1;
  for (int i = 2; i >= 0; --i) {
    const std::string& axis = label.storage_order[static_cast<std::size_t>(i)];
    if (axis == "Band")
      stride_band = stride;
    else if (axis == "Line")
      stride_line = stride;
    else
      stride_sample = stride;
    stride *= label.extent_of(axis);
  }

  const auto* bytes = reinterpret_cast<const std::uint8_t*>(raw.data()) + label.offset;
  std::vector<std::uint8_t> interleaved(static_cast<std::size_t>(label.payload_bytes()));
  for (std::int64_t l = 0; l < label.lines; ++l)
    for (std::int64_t s = 0; s < label.samples; ++s)
      for (std::int64_t b = 0; b < 3; ++b)
        interleaved[static_cast<std::size_t>((l * label.samples + s) * 3 + b)] =
            bytes[b * stride_band + l * stride_line + s * stride_sample];

  write_png_rgb8(out_path, label.lines, label.samples, interleaved);
}

}  // namespace mrnet
