#include "mrnet/xml_lite.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace mrnet {

namespace {

std::string_view local_of(std::string_view name) {
  const auto pos = name.rfind(':');
  return pos == std::string_view::npos ? name : name.substr(pos + 1);
}

class Parser {
 public:
  explicit Parser(std::string_view text) : s_(text) {}

  XmlNode parse_document() {
    skip_misc();
    if (eof()) fail("no root element");
    XmlNode root = parse_element();
    skip_misc();
    if (!eof()) fail("content after root element");
    return root;
  }

 private:
  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }
  char get() {
    const char c = s_[pos_++];
    if (c == '\n') ++line_;
    return c;
  }
  bool starts_with(std::string_view t) const { return s_.substr(pos_, t.size()) == t; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw XmlError("xml: line " + std::to_string(line_) + ": " + msg);
  }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) get();
  }

  void skip_until(std::string_view terminator, const char* what) {
    while (!eof()) {
      if (starts_with(terminator)) {
        for (std::size_t i = 0; i < terminator.size(); ++i) get();
        return;
      }
      get();
    }
    fail(std::string("unterminated ") + what);
  }

  // Prolog, comments, processing instructions, doctype.
  void skip_misc() {
    for (;;) {
      skip_ws();
      if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
      } else if (starts_with("<!--")) {
        skip_until("-->", "comment");
      } else if (starts_with("<!DOCTYPE")) {
        skip_until(">", "doctype");
      } else {
        return;
      }
    }
  }

  std::string parse_name() {
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-' ||
                      peek() == '.' || peek() == ':')) {
      get();
    }
    if (pos_ == start) fail("expected a name");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string decode_entities(std::string_view raw) {
    std::string out;
    for (std::size_t i = 0; i < raw.size();) {
      if (raw[i] == '&') {
        const auto end = raw.find(';', i);
        if (end == std::string_view::npos) fail("unterminated entity reference");
        const std::string_view ent = raw.substr(i + 1, end - i - 1);
        if (ent == "amp") out += '&';
        else if (ent == "lt") out += '<';
        else if (ent == "gt") out += '>';
        else if (ent == "quot") out += '"';
        else if (ent == "apos") out += '\'';
        else fail("unsupported entity '&" + std::string(ent) + ";'");
        i = end + 1;
      } else {
        out += raw[i++];
      }
    }
    return out;
  }

  XmlNode parse_element() {
    if (get() != '<') fail("expected '<'");
    XmlNode node;
    node.name = parse_name();

    for (;;) {
      skip_ws();
      if (eof()) fail("unterminated start tag <" + node.name + ">");
      if (peek() == '/') {
        get();
        if (eof() || get() != '>') fail("malformed empty-element tag");
        return node;
      }
      if (peek() == '>') {
        get();
        break;
      }
      std::string attr = parse_name();
      skip_ws();
      if (eof() || get() != '=') fail("attribute '" + attr + "' missing '='");
      skip_ws();
      if (eof()) fail("attribute '" + attr + "' missing value");
      const char quote = get();
      if (quote != '"' && quote != '\'') fail("attribute '" + attr + "' value must be quoted");
      const std::size_t start = pos_;
      while (!eof() && peek() != quote) get();
      if (eof()) fail("unterminated attribute value");
      std::string value = decode_entities(s_.substr(start, pos_ - start));
      get();
      node.attributes.emplace_back(std::move(attr), std::move(value));
    }

    std::string text;
    for (;;) {
      if (eof()) fail("missing closing tag for <" + node.name + ">");
      if (starts_with("</")) {
        get();
        get();
        const std::string closing = parse_name();
        if (closing != node.name) fail("mismatched closing tag </" + closing + "> for <" + node.name + ">");
        skip_ws();
        if (eof() || get() != '>') fail("malformed closing tag");
        break;
      }
      if (starts_with("<!--")) {
        skip_until("-->", "comment");
        continue;
      }
      if (starts_with("<![CDATA[")) {
        for (int i = 0; i < 9; ++i) get();
        const std::size_t start = pos_;
        while (!eof() && !starts_with("]]>")) get();
        if (eof()) fail("unterminated CDATA section");
        text.append(s_.substr(start, pos_ - start));
        for (int i = 0; i < 3; ++i) get();
        continue;
      }
      if (starts_with("<?")) {
        skip_until("?>", "processing instruction");
        continue;
      }
      if (peek() == '<') {
        node.children.push_back(parse_element());
        continue;
      }
      const std::size_t start = pos_;
      while (!eof() && peek() != '<') get();
      text += decode_entities(s_.substr(start, pos_ - start));
    }

    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos) {
      const auto last = text.find_last_not_of(" \t\r\n");
      node.text = text.substr(first, last - first + 1);
    }
    return node;
  }
};

}  // namespace

const XmlNode* XmlNode::child(std::string_view local_name) const {
  for (const auto& c : children)
    if (local_of(c.name) == local_name) return &c;
  return nullptr;
}

const XmlNode* XmlNode::find(std::string_view local_name) const {
  if (local_of(name) == local_name) return this;
  for (const auto& c : children)
    if (const XmlNode* r = c.find(local_name)) return r;
  return nullptr;
}

std::vector<const XmlNode*> XmlNode::children_named(std::string_view local_name) const {
  std::vector<const XmlNode*> out;
  for (const auto& c : children)
    if (local_of(c.name) == local_name) out.push_back(&c);
  return out;
}

XmlNode xml_parse(std::string_view text) { return Parser(text).parse_document(); }

XmlNode xml_parse_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw XmlError("xml: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  return xml_parse(content);
}

}  // namespace mrnet
