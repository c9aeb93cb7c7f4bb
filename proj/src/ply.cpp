#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "pcqa/errors.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa {

namespace {

enum class ScalarType { I8, U8, I16, U16, I32, U32, F32, F64 };

std::size_t scalar_size(ScalarType t) {
  switch (t) {
    case ScalarType::I8:
    case ScalarType::U8:
      return 1;
    case ScalarType::I16:
    case ScalarType::U16:
      return 2;
    case ScalarType::I32:
    case ScalarType::U32:
    case ScalarType::F32:
      return 4;
    case ScalarType::F64:
      return 8;
  }
  return 0;
}

bool parse_scalar_type(const std::string& s, ScalarType& out) {
  if (s == "char" || s == "int8") out = ScalarType::I8;
  else if (s == "uchar" || s == "uint8") out = ScalarType::U8;
  else if (s == "short" || s == "int16") out = ScalarType::I16;
  else if (s == "ushort" || s == "uint16") out = ScalarType::U16;
  else if (s == "int" || s == "int32") out = ScalarType::I32;
  else if (s == "uint" || s == "uint32") out = ScalarType::U32;
  else if (s == "float" || s == "float32") out = ScalarType::F32;
  else if (s == "double" || s == "float64") out = ScalarType::F64;
  else return false;
  return true;
}

struct Property {
  std::string name;
  ScalarType type = ScalarType::F32;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

[[noreturn]] void fail(const std::string& msg) { throw InputError("PLY: " + msg); }

double decode_le(const unsigned char* p, ScalarType t) {
  switch (t) {
    case ScalarType::I8:
      return static_cast<double>(static_cast<std::int8_t>(p[0]));
    case ScalarType::U8:
      return static_cast<double>(p[0]);
    case ScalarType::I16: {
      std::uint16_t u = static_cast<std::uint16_t>(p[0]) | static_cast<std::uint16_t>(p[1]) << 8;
      return static_cast<double>(static_cast<std::int16_t>(u));
    }
    case ScalarType::U16:
      return static_cast<double>(static_cast<std::uint16_t>(p[0]) | static_cast<std::uint16_t>(p[1]) << 8);
    case ScalarType::I32:
    case ScalarType::U32:
    case ScalarType::F32: {
      std::uint32_t u = 0;
      for (int i = 3; i >= 0; --i) u = (u << 8) | p[i];
      if (t == ScalarType::F32) return static_cast<double>(std::bit_cast<float>(u));
      if (t == ScalarType::I32) return static_cast<double>(static_cast<std::int32_t>(u));
      return static_cast<double>(u);
    }
    case ScalarType::F64: {
      std::uint64_t u = 0;
      for (int i = 7; i >= 0; --i) u = (u << 8) | p[i];
      return std::bit_cast<double>(u);
    }
  }
  return 0.0;
}

double parse_ascii_number(const std::string& tok, ScalarType t, const char* what) {
  const char* begin = tok.c_str();
  const char* end = begin + tok.size();
  if (t == ScalarType::F32) {
    float v{};
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) fail(std::string("invalid ") + what + " value '" + tok + "'");
    return static_cast<double>(v);
  }
  if (t == ScalarType::F64) {
    double v{};
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) fail(std::string("invalid ") + what + " value '" + tok + "'");
    return v;
  }
  long long v{};
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) fail(std::string("invalid ") + what + " value '" + tok + "'");
  return static_cast<double>(v);
}

}  // namespace

PointCloud parse_ply(std::string_view bytes, std::string name) {
  // --- header ---
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    if (pos >= bytes.size()) fail("truncated header");
    std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) fail("truncated header");
    std::string line(bytes.substr(pos, eol - pos));
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };

  if (next_line() != "ply") fail("malformed header, missing 'ply' magic");

  bool binary = false;
  bool format_seen = false;
  std::vector<Element> elements;
  for (;;) {
    std::string line = next_line();
    std::vector<std::string> tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() != 3 || tok[2] != "1.0") fail("malformed format line '" + line + "'");
      if (tok[1] == "ascii") binary = false;
      else if (tok[1] == "binary_little_endian") binary = true;
      else if (tok[1] == "binary_big_endian") fail("unsupported format binary_big_endian");
      else fail("unsupported format tag '" + tok[1] + "'");
      format_seen = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) fail("malformed element line '" + line + "'");
      Element e;
      e.name = tok[1];
      try {
        e.count = std::stoull(tok[2]);
      } catch (const std::exception&) {
        fail("malformed element count '" + tok[2] + "'");
      }
      elements.push_back(std::move(e));
    } else if (tok[0] == "property") {
      if (elements.empty()) fail("property before any element");
      if (tok.size() == 3) {
        Property p;
        if (!parse_scalar_type(tok[1], p.type)) fail("unknown property type '" + tok[1] + "'");
        p.name = tok[2];
        elements.back().properties.push_back(std::move(p));
      } else if (tok.size() == 5 && tok[1] == "list") {
        if (elements.back().name == "vertex") fail("list properties in the vertex element are unsupported");
        // lists in other elements are irrelevant; their data is never read
        elements.back().properties.push_back(Property{tok[4], ScalarType::U8});
        elements.back().properties.back().name = "__list__" + tok[4];
      } else {
        fail("malformed property line '" + line + "'");
      }
    } else if (tok[0] == "end_header") {
      break;
    } else {
      fail("unrecognized header line '" + line + "'");
    }
  }
  if (!format_seen) fail("malformed header, missing format line");

  std::size_t vertex_index = elements.size();
  for (std::size_t i = 0; i < elements.size(); ++i) {
    if (elements[i].name == "vertex") {
      vertex_index = i;
      break;
    }
  }
  if (vertex_index == elements.size()) fail("missing vertex element");
  for (std::size_t i = 0; i < vertex_index; ++i) {
    if (elements[i].count > 0) fail("non-empty element '" + elements[i].name + "' before vertex is unsupported");
  }
  const Element& vertex = elements[vertex_index];
  if (vertex.count == 0) fail("vertex element declares zero vertices");
  const bool trailing_elements = vertex_index + 1 < elements.size();

  // locate the required properties and validate their types
  struct Field {
    std::size_t prop = SIZE_MAX;
    std::size_t offset = 0;  // byte offset within a binary vertex record
  };
  Field fx, fy, fz, fr, fg, fb;
  std::size_t stride = 0;
  for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
    const Property& p = vertex.properties[i];
    Field* f = nullptr;
    if (p.name == "x") f = &fx;
    else if (p.name == "y") f = &fy;
    else if (p.name == "z") f = &fz;
    else if (p.name == "red") f = &fr;
    else if (p.name == "green") f = &fg;
    else if (p.name == "blue") f = &fb;
    if (f) {
      bool coord = (f == &fx || f == &fy || f == &fz);
      if (coord && p.type != ScalarType::F32 && p.type != ScalarType::F64)
        fail("property " + p.name + " must be float or double");
      if (!coord && p.type != ScalarType::U8) fail("property " + p.name + " must be uchar");
      f->prop = i;
      f->offset = stride;
    }
    stride += scalar_size(p.type);
  }
  for (const Field* f : {&fx, &fy, &fz, &fr, &fg, &fb}) {
    if (f->prop == SIZE_MAX) fail("missing required vertex property (need x y z red green blue)");
  }

  PointCloud cloud;
  cloud.name = std::move(name);
  cloud.positions.reserve(vertex.count);
  cloud.colors.reserve(vertex.count);

  auto push_vertex = [&](double x, double y, double z, double r, double g, double b) {
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z)) fail("non-finite coordinate");
    if (r < 0 || r > 255 || g < 0 || g > 255 || b < 0 || b > 255) fail("color channel out of range");
    cloud.positions.push_back({x, y, z});
    cloud.colors.push_back({r / 255.0, g / 255.0, b / 255.0});
  };

  if (binary) {
    std::string_view data = bytes.substr(pos);
    if (data.size() < vertex.count * stride)
      fail("declared count mismatch: expected " + std::to_string(vertex.count * stride) + " bytes of vertex data, found " +
           std::to_string(data.size()));
    if (!trailing_elements && data.size() > vertex.count * stride) fail("declared count mismatch: trailing bytes after vertex data");
    const unsigned char* base = reinterpret_cast<const unsigned char*>(data.data());
    for (std::size_t v = 0; v < vertex.count; ++v) {
      const unsigned char* rec = base + v * stride;
      push_vertex(decode_le(rec + fx.offset, vertex.properties[fx.prop].type),
                  decode_le(rec + fy.offset, vertex.properties[fy.prop].type),
                  decode_le(rec + fz.offset, vertex.properties[fz.prop].type), decode_le(rec + fr.offset, ScalarType::U8),
                  decode_le(rec + fg.offset, ScalarType::U8), decode_le(rec + fb.offset, ScalarType::U8));
    }
  } else {
    std::istringstream is{std::string(bytes.substr(pos))};
    std::vector<std::string> row(vertex.properties.size());
    for (std::size_t v = 0; v < vertex.count; ++v) {
      for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
        if (!(is >> row[i]))
          fail("declared count mismatch: vertex element declares " + std::to_string(vertex.count) + " vertices, data ends at " +
               std::to_string(v));
      }
      auto num = [&](const Field& f, const char* what) { return parse_ascii_number(row[f.prop], vertex.properties[f.prop].type, what); };
      push_vertex(num(fx, "coordinate"), num(fy, "coordinate"), num(fz, "coordinate"), num(fr, "color"), num(fg, "color"),
                  num(fb, "color"));
    }
    if (!trailing_elements) {
      std::string extra;
      if (is >> extra) fail("declared count mismatch: trailing data after " + std::to_string(vertex.count) + " vertices");
    }
  }
  return cloud;
}

}  // namespace pcqa
