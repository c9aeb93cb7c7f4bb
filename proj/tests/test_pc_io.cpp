#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>

#include "pcqa/errors.hpp"
#include "pcqa/point_cloud.hpp"
#include "pcqa/rng.hpp"

namespace {

struct RawVertex {
  float x, y, z;
  std::uint8_t r, g, b;
};

// Independent emitters: these build PLY bytes directly, sharing no code with the parser.
std::string emit_ascii(const std::vector<RawVertex>& verts, std::size_t declared_count,
                       bool with_normals = false) {
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\ncomment generated for tests\n";
  out << "element vertex " << declared_count << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (with_normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";
  out.precision(9);
  for (const auto& v : verts) {
    out << v.x << " " << v.y << " " << v.z;
    if (with_normals) out << " 0 0 1";
    out << " " << int(v.r) << " " << int(v.g) << " " << int(v.b) << "\n";
  }
  return out.str();
}

void append_f32_le(std::string& bytes, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, sizeof u);
  for (int i = 0; i < 4; ++i) bytes.push_back(char((u >> (8 * i)) & 0xFF));
}

std::string emit_binary(const std::vector<RawVertex>& verts, std::size_t declared_count,
                        bool with_normals = false) {
  std::string bytes =
      "ply\nformat binary_little_endian 1.0\n"
      "element vertex " + std::to_string(declared_count) + "\n"
      "property float x\nproperty float y\nproperty float z\n";
  if (with_normals) bytes += "property float nx\nproperty float ny\nproperty float nz\n";
  bytes += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (const auto& v : verts) {
    append_f32_le(bytes, v.x);
    append_f32_le(bytes, v.y);
    append_f32_le(bytes, v.z);
    if (with_normals) {
      append_f32_le(bytes, 0.0f);
      append_f32_le(bytes, 0.0f);
      append_f32_le(bytes, 1.0f);
    }
    bytes.push_back(char(v.r));
    bytes.push_back(char(v.g));
    bytes.push_back(char(v.b));
  }
  return bytes;
}

std::vector<RawVertex> random_vertices(std::size_t n, std::uint64_t seed) {
  pcqa::CounterRng rng(seed);
  std::vector<RawVertex> verts(n);
  for (auto& v : verts) {
    v.x = float(rng.uniform(-100.0, 100.0));
    v.y = float(rng.uniform(-100.0, 100.0));
    v.z = float(rng.uniform(-100.0, 100.0));
    v.r = std::uint8_t(rng.index(256));
    v.g = std::uint8_t(rng.index(256));
    v.b = std::uint8_t(rng.index(256));
  }
  return verts;
}

}  // namespace

TEST_CASE("ascii ply: single vertex parses to the exact values written") {
  std::string ply =
      "ply\nformat ascii 1.0\nelement vertex 1\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n"
      "1.5 -2.25 0.125 255 0 128\n";
  pcqa::PointCloud pc = pcqa::parse_ply(ply, "one");
  REQUIRE(pc.size() == 1);
  CHECK(pc.name == "one");
  CHECK(pc.positions[0][0] == 1.5);
  CHECK(pc.positions[0][1] == -2.25);
  CHECK(pc.positions[0][2] == 0.125);
  CHECK(pc.colors[0][0] == doctest::Approx(255.0 / 255.0));
  CHECK(pc.colors[0][1] == doctest::Approx(0.0));
  CHECK(pc.colors[0][2] == doctest::Approx(128.0 / 255.0));
}

TEST_CASE("ascii ply: declared count larger than rows present is an input error") {
  auto verts = random_vertices(1, 7);
  std::string ply = emit_ascii(verts, 2);
  CHECK_THROWS_AS(pcqa::parse_ply(ply), pcqa::InputError);
}

TEST_CASE("binary ply: declared count mismatches are input errors both ways") {
  auto verts = random_vertices(3, 11);
  CHECK_THROWS_AS(pcqa::parse_ply(emit_binary(verts, 4)), pcqa::InputError);
  CHECK_THROWS_AS(pcqa::parse_ply(emit_binary(verts, 2)), pcqa::InputError);
}

TEST_CASE("binary ply: three random vertices round-trip field-exact") {
  auto verts = random_vertices(3, 42);
  pcqa::PointCloud pc = pcqa::parse_ply(emit_binary(verts, 3));
  REQUIRE(pc.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(pc.positions[i][0] == double(verts[i].x));
    CHECK(pc.positions[i][1] == double(verts[i].y));
    CHECK(pc.positions[i][2] == double(verts[i].z));
    CHECK(pc.colors[i][0] == double(verts[i].r) / 255.0);
    CHECK(pc.colors[i][1] == double(verts[i].g) / 255.0);
    CHECK(pc.colors[i][2] == double(verts[i].b) / 255.0);
  }
}

TEST_CASE("big endian ply is rejected") {
  std::string ply =
      "ply\nformat binary_big_endian 1.0\nelement vertex 1\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n";
  CHECK_THROWS_AS(pcqa::parse_ply(ply), pcqa::InputError);
}

TEST_CASE("missing required properties are input errors") {
  std::string no_blue =
      "ply\nformat ascii 1.0\nelement vertex 1\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\n"
      "end_header\n"
      "0 0 0 1 2\n";
  CHECK_THROWS_AS(pcqa::parse_ply(no_blue), pcqa::InputError);

  std::string no_z =
      "ply\nformat ascii 1.0\nelement vertex 1\n"
      "property float x\nproperty float y\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n"
      "0 0 1 2 3\n";
  CHECK_THROWS_AS(pcqa::parse_ply(no_z), pcqa::InputError);
}

TEST_CASE("color properties must be uchar") {
  std::string float_red =
      "ply\nformat ascii 1.0\nelement vertex 1\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property float red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n"
      "0 0 0 0.5 2 3\n";
  CHECK_THROWS_AS(pcqa::parse_ply(float_red), pcqa::InputError);
}

TEST_CASE("non-finite coordinates are input errors") {
  std::string ply =
      "ply\nformat ascii 1.0\nelement vertex 1\n"
      "property float x\nproperty float y\nproperty float z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n"
      "nan 0 0 1 2 3\n";
  CHECK_THROWS_AS(pcqa::parse_ply(ply), pcqa::InputError);

  auto verts = random_vertices(1, 3);
  verts[0].y = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(pcqa::parse_ply(emit_binary(verts, 1)), pcqa::InputError);
}

TEST_CASE("extra vertex properties are skipped in both encodings") {
  auto verts = random_vertices(4, 101);
  pcqa::PointCloud a = pcqa::parse_ply(emit_ascii(verts, 4, /*with_normals=*/true));
  pcqa::PointCloud b = pcqa::parse_ply(emit_binary(verts, 4, /*with_normals=*/true));
  REQUIRE(a.size() == 4);
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.positions[i] == b.positions[i]);
    CHECK(a.colors[i] == b.colors[i]);
  }
}

TEST_CASE("double precision coordinates are accepted") {
  std::string ply =
      "ply\nformat ascii 1.0\nelement vertex 1\n"
      "property double x\nproperty double y\nproperty double z\n"
      "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      "end_header\n"
      "0.1 0.2 0.3 10 20 30\n";
  pcqa::PointCloud pc = pcqa::parse_ply(ply);
  CHECK(pc.positions[0][0] == doctest::Approx(0.1).epsilon(1e-15));
}

TEST_CASE("ascii and binary encodings of the same cloud parse bit-identically") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    auto verts = random_vertices(16, seed);
    pcqa::PointCloud a = pcqa::parse_ply(emit_ascii(verts, 16));
    pcqa::PointCloud b = pcqa::parse_ply(emit_binary(verts, 16));
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      // float coords printed with 9 significant digits round-trip exactly
      CHECK(a.positions[i] == b.positions[i]);
      CHECK(a.colors[i] == b.colors[i]);
    }
  }
}

TEST_CASE("parsing the same bytes twice gives identical clouds") {
  auto verts = random_vertices(8, 77);
  std::string bytes = emit_binary(verts, 8);
  pcqa::PointCloud a = pcqa::parse_ply(bytes);
  pcqa::PointCloud b = pcqa::parse_ply(bytes);
  CHECK(a.positions == b.positions);
  CHECK(a.colors == b.colors);
}

TEST_CASE("fuzz: random clouds round-trip through both encodings") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    pcqa::CounterRng rng(seed, /*stream=*/99);
    std::size_t n = 1 + rng.index(40);
    auto verts = random_vertices(n, seed * 13 + 5);
    pcqa::PointCloud a = pcqa::parse_ply(emit_ascii(verts, n));
    pcqa::PointCloud b = pcqa::parse_ply(emit_binary(verts, n));
    REQUIRE(a.size() == n);
    REQUIRE(b.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(a.positions[i] == b.positions[i]);
      for (int c = 0; c < 3; ++c) {
        CHECK(b.colors[i][c] >= 0.0);
        CHECK(b.colors[i][c] <= 1.0);
        CHECK(std::isfinite(b.positions[i][c]));
      }
    }
  }
}

TEST_CASE("truncated binary payload is an input error") {
  auto verts = random_vertices(2, 8);
  std::string bytes = emit_binary(verts, 2);
  bytes.resize(bytes.size() - 1);
  CHECK_THROWS_AS(pcqa::parse_ply(bytes), pcqa::InputError);
}

TEST_CASE("garbage header is an input error with a message naming the problem") {
  CHECK_THROWS_AS(pcqa::parse_ply("not a ply file"), pcqa::InputError);
  try {
    pcqa::parse_ply("ply\nformat ascii 2.0\nend_header\n");
    FAIL("expected throw");
  } catch (const pcqa::InputError& e) {
    CHECK(std::string(e.what()).find("PLY") != std::string::npos);
  }
}

TEST_CASE("manifest: three-column form parses") {
  std::string csv =
      "path,mos,reference_id\n"
      "a.ply,3.5,ref0\n"
      "b.ply,1.25,ref1\n";
  pcqa::DatasetManifest m = pcqa::load_manifest(csv);
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].stimulus_path == "a.ply");
  CHECK(m.entries[0].mos == 3.5);
  CHECK(m.entries[0].reference_id == "ref0");
  CHECK(!m.entries[0].fold.has_value());
  CHECK(!m.has_folds());
}

TEST_CASE("manifest: fold column is honored and counted") {
  std::string csv =
      "path,mos,reference_id,fold\n"
      "a.ply,3.5,r0,0\n"
      "b.ply,1.0,r0,1\n"
      "c.ply,2.0,r1,1\n";
  pcqa::DatasetManifest m = pcqa::load_manifest(csv);
  REQUIRE(m.has_folds());
  CHECK(m.fold_count() == 2);
  CHECK(*m.entries[2].fold == 1);
}

TEST_CASE("manifest: CRLF endings and trailing blank lines are tolerated") {
  std::string csv = "path,mos,reference_id\r\na.ply,2,r0\r\n\r\n";
  pcqa::DatasetManifest m = pcqa::load_manifest(csv);
  REQUIRE(m.entries.size() == 1);
  CHECK(m.entries[0].mos == 2.0);
}

TEST_CASE("manifest: error cases") {
  CHECK_THROWS_AS(pcqa::load_manifest(""), pcqa::InputError);
  CHECK_THROWS_AS(pcqa::load_manifest("wrong,header\n"), pcqa::InputError);
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id\n"), pcqa::InputError);
  // duplicate stimulus path
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id\na.ply,1,r\na.ply,2,r\n"),
                  pcqa::InputError);
  // unparsable mos
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id\na.ply,abc,r\n"), pcqa::InputError);
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id\na.ply,nan,r\n"), pcqa::InputError);
  // non-integer fold
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id,fold\na.ply,1,r,x\n"),
                  pcqa::InputError);
  // folds must be contiguous from zero
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id,fold\na.ply,1,r,1\nb.ply,2,r,2\n"),
                  pcqa::InputError);
  // wrong column count
  CHECK_THROWS_AS(pcqa::load_manifest("path,mos,reference_id\na.ply,1\n"), pcqa::InputError);
}
