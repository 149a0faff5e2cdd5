#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mrnet/data.hpp"
#include "mrnet/pds4.hpp"
#include "mrnet/xml_lite.hpp"

using namespace mrnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path p = fs::temp_directory_path() / ("mrnet_pds4_" + std::to_string(counter++));
  fs::create_directories(p);
  return p;
}

std::string label_xml(std::int64_t bands, std::int64_t lines, std::int64_t samples, std::int64_t offset,
                      const std::string& data_file, const std::string& dtype = "UnsignedByte",
                      bool band_sequential = true) {
  auto axis = [](const std::string& name, std::int64_t n, int seq) {
    return "    <Axis_Array>\n      <axis_name>" + name + "</axis_name>\n      <elements>" + std::to_string(n) +
           "</elements>\n      <sequence_number>" + std::to_string(seq) + "</sequence_number>\n    </Axis_Array>\n";
  };
  std::string axes_block;
  if (band_sequential)
    axes_block = axis("Band", bands, 1) + axis("Line", lines, 2) + axis("Sample", samples, 3);
  else
    axes_block = axis("Line", lines, 1) + axis("Band", bands, 2) + axis("Sample", samples, 3);
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
         "<Product_Observational>\n"
         "  <File_Area_Observational>\n"
         "  <File>\n    <file_name>" +
         data_file +
         "</file_name>\n  </File>\n"
         "  <Array_3D_Image>\n"
         "    <offset unit=\"byte\">" +
         std::to_string(offset) +
         "</offset>\n"
         "    <axes>3</axes>\n"
         "    <Element_Array>\n      <data_type>" +
         dtype +
         "</data_type>\n    </Element_Array>\n" +
         axes_block +
         "  </Array_3D_Image>\n"
         "  </File_Area_Observational>\n"
         "</Product_Observational>\n";
}

// Band-sequential gradient fixture: value = band*64 + line*16 + sample.
std::vector<std::uint8_t> gradient_payload(std::int64_t lines, std::int64_t samples) {
  std::vector<std::uint8_t> raw;
  for (std::int64_t b = 0; b < 3; ++b)
    for (std::int64_t l = 0; l < lines; ++l)
      for (std::int64_t s = 0; s < samples; ++s)
        raw.push_back(static_cast<std::uint8_t>(b * 64 + l * 16 + s));
  return raw;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_SUITE("xml_lite") {
  TEST_CASE("parses elements, attributes, text, entities") {
    const XmlNode root = xml_parse("<a x=\"1&amp;2\"><b>hi</b><b>ho</b><!-- note --><c/></a>");
    CHECK(root.name == "a");
    CHECK(root.attributes.at(0).second == "1&2");
    CHECK(root.children_named("b").size() == 2);
    CHECK(root.child("b")->text == "hi");
    CHECK(root.child("c") != nullptr);
  }

  TEST_CASE("rejects malformed documents") {
    CHECK_THROWS_AS(xml_parse("<a><b></a></b>"), XmlError);
    CHECK_THROWS_AS(xml_parse("<a>"), XmlError);
    CHECK_THROWS_AS(xml_parse("just text"), XmlError);
    CHECK_THROWS_AS(xml_parse("<a></a><b></b>"), XmlError);
  }
}

TEST_SUITE("pds4 parse") {
  TEST_CASE("minimal valid label parses") {
    const Pds4LiteLabel label = pds4lite_parse_string(label_xml(3, 4, 4, 0, "img.dat"));
    CHECK(label.bands == 3);
    CHECK(label.lines == 4);
    CHECK(label.samples == 4);
    CHECK(label.offset == 0);
    CHECK(label.element_type == "UnsignedByte");
    CHECK(label.data_file == "img.dat");
    CHECK(label.storage_order == std::array<std::string, 3>{"Band", "Line", "Sample"});
  }

  TEST_CASE("unsupported element types are rejected by name") {
    CHECK_THROWS_WITH_AS(pds4lite_parse_string(label_xml(3, 4, 4, 0, "img.dat", "SignedMSB2")),
                         doctest::Contains("SignedMSB2"), std::runtime_error);
  }

  TEST_CASE("a missing extent is reported with its axis") {
    std::string xml = label_xml(3, 4, 4, 0, "img.dat");
    const auto pos = xml.find("<elements>4</elements>\n      <sequence_number>3");
    REQUIRE(pos != std::string::npos);
    xml.erase(pos, std::string("<elements>4</elements>").size());
    CHECK_THROWS_WITH_AS(pds4lite_parse_string(xml), doctest::Contains("'Sample' is missing <elements>"),
                         std::runtime_error);
  }

  TEST_CASE("missing structural elements are named") {
    CHECK_THROWS_WITH_AS(pds4lite_parse_string("<Product_Observational></Product_Observational>"),
                         doctest::Contains("Array_3D_Image"), std::runtime_error);
    std::string xml = label_xml(3, 4, 4, 0, "img.dat");
    std::string no_offset = xml;
    const auto opos = no_offset.find("<offset");
    no_offset.erase(opos, no_offset.find("</offset>") + 9 - opos);
    CHECK_THROWS_WITH_AS(pds4lite_parse_string(no_offset), doctest::Contains("<offset>"), std::runtime_error);
  }

  TEST_CASE("malformed xml is rejected") {
    CHECK_THROWS_AS(pds4lite_parse_string("<Product_Observational><Array_3D_Image>"), XmlError);
  }
}

TEST_SUITE("pds4 convert") {
  TEST_CASE("band-sequential gradient round-trips exactly") {
    const fs::path dir = temp_dir();
    const auto raw = gradient_payload(4, 4);
    write_bytes(dir / "img.dat", raw);
    std::ofstream(dir / "img.xml") << label_xml(3, 4, 4, 0, "img.dat");

    const Pds4LiteLabel label = pds4lite_parse(dir / "img.xml");
    pds4lite_convert(label, dir / "img.dat", dir / "img.png");

    const Tensor t = load_image(dir / "img.png");
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t l = 0; l < 4; ++l)
        for (std::int64_t s = 0; s < 4; ++s)
          CHECK(t[(b * 4 + l) * 4 + s] == doctest::Approx((b * 64 + l * 16 + s) / 255.0));
  }

  TEST_CASE("nonzero offsets skip exactly that many bytes") {
    const fs::path dir = temp_dir();
    std::vector<std::uint8_t> raw(16, 0xEE);  // sentinel prefix
    const auto payload = gradient_payload(4, 4);
    raw.insert(raw.end(), payload.begin(), payload.end());
    write_bytes(dir / "img.dat", raw);
    std::ofstream(dir / "img.xml") << label_xml(3, 4, 4, 16, "img.dat");

    pds4lite_convert(pds4lite_parse(dir / "img.xml"), dir / "img.dat", dir / "img.png");
    const Tensor t = load_image(dir / "img.png");
    CHECK(t[0] == 0.0);  // not the 0xEE sentinel
    CHECK(t[(2 * 4 + 3) * 4 + 3] == doctest::Approx((2 * 64 + 3 * 16 + 3) / 255.0));
  }

  TEST_CASE("line-interleaved storage is reassembled correctly") {
    const fs::path dir = temp_dir();
    // Storage order Line,Band,Sample: value = line*16 + band*4 + sample.
    std::vector<std::uint8_t> raw;
    for (std::int64_t l = 0; l < 4; ++l)
      for (std::int64_t b = 0; b < 3; ++b)
        for (std::int64_t s = 0; s < 4; ++s) raw.push_back(static_cast<std::uint8_t>(l * 16 + b * 4 + s));
    write_bytes(dir / "img.dat", raw);
    std::ofstream(dir / "img.xml") << label_xml(3, 4, 4, 0, "img.dat", "UnsignedByte", false);

    const Pds4LiteLabel label = pds4lite_parse(dir / "img.xml");
    CHECK(label.storage_order == std::array<std::string, 3>{"Line", "Band", "Sample"});
    pds4lite_convert(label, dir / "img.dat", dir / "img.png");
    const Tensor t = load_image(dir / "img.png");
    for (std::int64_t b = 0; b < 3; ++b)
      for (std::int64_t l = 0; l < 4; ++l)
        for (std::int64_t s = 0; s < 4; ++s)
          CHECK(t[(b * 4 + l) * 4 + s] == doctest::Approx((l * 16 + b * 4 + s) / 255.0));
  }

  TEST_CASE("short raw files are rejected with no output") {
    const fs::path dir = temp_dir();
    write_bytes(dir / "img.dat", std::vector<std::uint8_t>(20, 1));
    std::ofstream(dir / "img.xml") << label_xml(3, 4, 4, 0, "img.dat");
    CHECK_THROWS_WITH_AS(pds4lite_convert(pds4lite_parse(dir / "img.xml"), dir / "img.dat", dir / "img.png"),
                         doctest::Contains("need 48"), std::runtime_error);
    CHECK_FALSE(fs::exists(dir / "img.png"));
  }
}
