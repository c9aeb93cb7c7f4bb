#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pcqa {

using Vec3 = std::array<double, 3>;

// N points with coordinates and RGB attributes. Colors are normalized to
// [0, 1] at ingestion; immutable after construction and safe to share.
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;
  std::string name;

  std::size_t size() const { return positions.size(); }
};

struct ManifestEntry {
  std::string stimulus_path;
  double mos = 0.0;
  std::string reference_id;
  std::optional<int> fold;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  bool has_folds() const { return !entries.empty() && entries.front().fold.has_value(); }
  // number of distinct folds; folds are validated contiguous from 0 at load
  int fold_count() const {
    int hi = -1;
    for (const auto& e : entries)
      if (e.fold && *e.fold > hi) hi = *e.fold;
    return hi + 1;
  }
};

// Parses an ASCII or binary little-endian PLY with a vertex element carrying
// float x/y/z and uchar red/green/blue; extra scalar properties are skipped.
// Colors come back divided by 255. Throws InputError on malformed input.
PointCloud parse_ply(std::string_view bytes, std::string name = {});

// CSV with header `path,mos,reference_id[,fold]`, LF or CRLF line endings.
DatasetManifest load_manifest(std::string_view text);

}  // namespace pcqa
