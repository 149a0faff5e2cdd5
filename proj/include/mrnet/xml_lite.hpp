#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mrnet {

// Minimal XML element tree: elements, attributes, text. Enough for PDS4-lite
// labels and for well-formedness checks of generated SVG; not a general XML
// processor (no DTDs, no entity definitions).
struct XmlNode {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::string text;  // concatenated direct character data, trimmed
  std::vector<XmlNode> children;

  // First direct child whose local name (after any ':') matches.
  const XmlNode* child(std::string_view local_name) const;
  // First matching descendant, depth-first, including this node.
  const XmlNode* find(std::string_view local_name) const;
  std::vector<const XmlNode*> children_named(std::string_view local_name) const;
};

struct XmlError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

XmlNode xml_parse(std::string_view text);
XmlNode xml_parse_file(const std::filesystem::path& path);

}  // namespace mrnet
