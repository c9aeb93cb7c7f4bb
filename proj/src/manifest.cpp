#include <charconv>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "pcqa/errors.hpp"
#include "pcqa/point_cloud.hpp"

namespace pcqa {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

[[noreturn]] void fail(const std::string& msg) { throw InputError("manifest: " + msg); }

}  // namespace

DatasetManifest load_manifest(std::string_view text) {
  // tolerate a UTF-8 BOM
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);

  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string line(eol == std::string_view::npos ? text.substr(pos) : text.substr(pos, eol - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) fail("empty file");

  bool with_fold = false;
  if (lines[0] == "path,mos,reference_id") with_fold = false;
  else if (lines[0] == "path,mos,reference_id,fold") with_fold = true;
  else fail("bad header '" + lines[0] + "' (expected path,mos,reference_id[,fold])");

  DatasetManifest manifest;
  std::set<std::string> seen_paths;
  const std::size_t expected = with_fold ? 4u : 3u;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::vector<std::string> cols = split_csv_line(lines[i]);
    if (cols.size() != expected)
      fail("row " + std::to_string(i + 1) + " has " + std::to_string(cols.size()) + " columns, expected " + std::to_string(expected));

    ManifestEntry entry;
    entry.stimulus_path = cols[0];
    if (entry.stimulus_path.empty()) fail("row " + std::to_string(i + 1) + " has an empty path");
    if (!seen_paths.insert(entry.stimulus_path).second) fail("duplicate path '" + entry.stimulus_path + "'");

    {
      const char* b = cols[1].c_str();
      const char* e = b + cols[1].size();
      auto [ptr, ec] = std::from_chars(b, e, entry.mos);
      if (ec != std::errc() || ptr != e || !std::isfinite(entry.mos)) fail("unparsable mos '" + cols[1] + "'");
    }
    entry.reference_id = cols[2];

    if (with_fold) {
      int fold{};
      const char* b = cols[3].c_str();
      const char* e = b + cols[3].size();
      auto [ptr, ec] = std::from_chars(b, e, fold);
      if (ec != std::errc() || ptr != e) fail("fold column must be an integer, got '" + cols[3] + "'");
      entry.fold = fold;
    }
    manifest.entries.push_back(std::move(entry));
  }
  if (manifest.entries.empty()) fail("no data rows");

  if (with_fold) {
    std::set<int> folds;
    for (const auto& e : manifest.entries) folds.insert(*e.fold);
    int expect = 0;
    for (int f : folds) {
      if (f != expect) fail("fold ids must form a contiguous range starting at 0");
      ++expect;
    }
  }
  return manifest;
}

}  // namespace pcqa
