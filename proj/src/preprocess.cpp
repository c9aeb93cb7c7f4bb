#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "pcqa/errors.hpp"
#include "pcqa/preprocess.hpp"

namespace pcqa {

namespace {

void validate(const PreprocessConfig& cfg) {
  if (cfg.patch_size < 8) throw std::invalid_argument("preprocess: patch_size must be >= 8");
  if (cfg.min_partitions == 0 || cfg.min_partitions > cfg.max_partitions)
    throw std::invalid_argument("preprocess: need 0 < min_partitions <= max_partitions");
  if (cfg.points_per_partition_target == 0)
    throw std::invalid_argument("preprocess: points_per_partition_target must be positive");
  if (cfg.slice_axis > 2) throw std::invalid_argument("preprocess: slice_axis must be -1, 0, 1 or 2");
}

double dist2(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xFF;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

std::uint64_t PreprocessConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = fnv1a(h, patch_size);
  h = fnv1a(h, partitions);
  h = fnv1a(h, min_partitions);
  h = fnv1a(h, max_partitions);
  h = fnv1a(h, points_per_partition_target);
  h = fnv1a(h, std::uint64_t(std::int64_t(slice_axis)));
  return h;
}

std::size_t compute_partition_count(std::size_t n_points, const PreprocessConfig& cfg) {
  validate(cfg);
  if (n_points == 0) throw std::invalid_argument("compute_partition_count: empty cloud");
  double r = std::round(double(n_points) / double(cfg.points_per_partition_target));
  std::size_t k = r < 1.0 ? 1 : std::size_t(r);
  return std::clamp(k, cfg.min_partitions, cfg.max_partitions);
}

std::vector<Partition> slice_partitions(const PointCloud& pc, std::size_t k, int axis) {
  if (pc.size() == 0) throw std::invalid_argument("slice_partitions: empty cloud");
  if (k == 0) throw std::invalid_argument("slice_partitions: k must be positive");
  if (axis > 2) throw std::invalid_argument("slice_partitions: axis must be -1, 0, 1 or 2");

  Vec3 lo = pc.positions[0], hi = pc.positions[0];
  for (const Vec3& p : pc.positions)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  int ax = axis;
  if (ax < 0) {
    ax = 0;
    for (int a = 1; a < 3; ++a)
      if (hi[a] - lo[a] > hi[ax] - lo[ax]) ax = a;
  }

  const double mn = lo[ax], mx = hi[ax];
  std::vector<Partition> slabs(k);
  if (mx == mn || k == 1) {
    slabs.resize(1);
    slabs[0].slab_low = mn;
    slabs[0].slab_high = mx;
    slabs[0].point_indices.resize(pc.size());
    std::iota(slabs[0].point_indices.begin(), slabs[0].point_indices.end(), 0u);
    return slabs;
  }

  // boundaries[i] .. boundaries[i+1] bounds slab i; assignment is half-open
  // below the top so a shared boundary value always goes to the upper slab
  std::vector<double> boundaries(k + 1);
  for (std::size_t i = 0; i <= k; ++i) boundaries[i] = mn + (mx - mn) * double(i) / double(k);
  boundaries[0] = mn;
  boundaries[k] = mx;
  for (std::size_t i = 0; i < k; ++i) {
    slabs[i].slab_low = boundaries[i];
    slabs[i].slab_high = boundaries[i + 1];
  }
  for (std::size_t p = 0; p < pc.size(); ++p) {
    double c = pc.positions[p][ax];
    auto it = std::upper_bound(boundaries.begin() + 1, boundaries.end(), c);
    std::size_t slab = std::min<std::size_t>(std::size_t(it - (boundaries.begin() + 1)), k - 1);
    slabs[slab].point_indices.push_back(p);
  }
  std::erase_if(slabs, [](const Partition& s) { return s.point_indices.empty(); });
  return slabs;
}

std::vector<std::size_t> farthest_point_sample(const std::vector<Vec3>& points, std::size_t m,
                                               std::size_t start) {
  const std::size_t n = points.size();
  if (m > n) throw std::invalid_argument("farthest_point_sample: m exceeds point count");
  if (start >= n) throw std::invalid_argument("farthest_point_sample: start out of range");
  std::vector<std::size_t> chosen;
  if (m == 0) return chosen;
  chosen.reserve(m);
  chosen.push_back(start);
  std::vector<char> taken(n, 0);
  taken[start] = 1;
  std::vector<double> mindist(n, std::numeric_limits<double>::infinity());
  while (chosen.size() < m) {
    const Vec3& last = points[chosen.back()];
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      mindist[i] = std::min(mindist[i], dist2(points[i], last));
      if (!taken[i] && mindist[i] > best_d) {
        best_d = mindist[i];
        best = i;
      }
    }
    taken[best] = 1;
    chosen.push_back(best);
  }
  return chosen;
}

Patch normalize_patch(const std::vector<Vec3>& geometry_raw, const std::vector<Vec3>& colors,
                      std::size_t centroid_index) {
  if (geometry_raw.empty() || geometry_raw.size() != colors.size())
    throw std::invalid_argument("normalize_patch: geometry/color row mismatch");
  Patch patch;
  patch.centroid_index = centroid_index;
  patch.color = colors;
  const std::size_t n = geometry_raw.size();
  Vec3 mean{0.0, 0.0, 0.0};
  for (const Vec3& p : geometry_raw)
    for (int a = 0; a < 3; ++a) mean[a] += p[a];
  for (int a = 0; a < 3; ++a) mean[a] /= double(n);
  patch.geometry.resize(n);
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) patch.geometry[i][a] = geometry_raw[i][a] - mean[a];
    const Vec3& g = patch.geometry[i];
    max_norm = std::max(max_norm, std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]));
  }
  if (max_norm > 0.0)
    for (Vec3& g : patch.geometry)
      for (int a = 0; a < 3; ++a) g[a] /= max_norm;
  return patch;
}

PartitionPatches build_patches(const PointCloud& pc, const Partition& partition,
                               const PreprocessConfig& cfg) {
  validate(cfg);
  const std::vector<std::size_t>& idx = partition.point_indices;
  if (idx.empty()) throw std::invalid_argument("build_patches: empty partition");
  const std::size_t n = idx.size();
  std::vector<Vec3> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = pc.positions[idx[i]];

  Vec3 center{0.0, 0.0, 0.0};
  for (const Vec3& p : pts)
    for (int a = 0; a < 3; ++a) center[a] += p[a];
  for (int a = 0; a < 3; ++a) center[a] /= double(n);
  std::size_t start = 0;
  double start_d = dist2(pts[0], center);
  for (std::size_t i = 1; i < n; ++i) {
    double d = dist2(pts[i], center);
    if (d < start_d) {
      start_d = d;
      start = i;
    }
  }

  const std::size_t m = (n + cfg.patch_size - 1) / cfg.patch_size;
  std::vector<std::size_t> centroids = farthest_point_sample(pts, m, start);

  PartitionPatches patches;
  std::vector<char> covered(n, 0);
  std::vector<std::size_t> order(n);
  auto emit = [&](std::size_t ci) {
    std::iota(order.begin(), order.end(), 0u);
    auto cmp = [&](std::size_t a, std::size_t b) {
      double da = dist2(pts[a], pts[ci]), db = dist2(pts[b], pts[ci]);
      return da < db || (da == db && a < b);
    };
    if (n > cfg.patch_size)
      std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(cfg.patch_size), order.end(), cmp);
    else
      std::sort(order.begin(), order.end(), cmp);
    const std::size_t take = std::min(n, cfg.patch_size);
    std::vector<Vec3> geo(cfg.patch_size), col(cfg.patch_size);
    for (std::size_t r = 0; r < cfg.patch_size; ++r) {
      std::size_t local = order[r % take];
      geo[r] = pc.positions[idx[local]];
      col[r] = pc.colors[idx[local]];
      covered[local] = 1;
    }
    patches.push_back(normalize_patch(geo, col, idx[ci]));
  };
  for (std::size_t ci : centroids) emit(ci);

  // repair: seed a new patch at whichever uncovered point sits farthest from
  // every existing seed, until the union of patches spans the partition
  for (;;) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (covered[i]) continue;
      double mind = std::numeric_limits<double>::infinity();
      for (std::size_t cj : centroids) mind = std::min(mind, dist2(pts[i], pts[cj]));
      if (mind > best_d) {
        best_d = mind;
        best = i;
      }
    }
    if (best == n) break;
    centroids.push_back(best);
    emit(best);
  }
  return patches;
}

std::vector<PartitionPatches> preprocess_cloud(const PointCloud& pc, const PreprocessConfig& cfg,
                                               std::size_t threads) {
  validate(cfg);
  if (pc.size() == 0) throw InputError("preprocess: empty point cloud");
  std::size_t k = cfg.partitions > 0 ? cfg.partitions : compute_partition_count(pc.size(), cfg);
  std::vector<Partition> parts = slice_partitions(pc, k, cfg.slice_axis);
  std::vector<PartitionPatches> out(parts.size());
  if (threads <= 1 || parts.size() <= 1) {
    for (std::size_t i = 0; i < parts.size(); ++i) out[i] = build_patches(pc, parts[i], cfg);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::size_t workers = std::min(threads, parts.size());
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= parts.size()) return;
          out[i] = build_patches(pc, parts[i], cfg);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

namespace {

constexpr char kCacheMagic[8] = {'P', 'C', 'Q', 'A', 'P', 'T', 'C', 'H'};
constexpr std::uint32_t kCacheVersion = 1;

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& s, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, sizeof u);
  put_u32(s, u);
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;

  bool u32(std::uint32_t& v) {
    if (pos + 4 > bytes.size()) return false;
    v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes[pos + std::size_t(i)])) << (8 * i);
    pos += 4;
    return true;
  }

  bool u64(std::uint64_t& v) {
    if (pos + 8 > bytes.size()) return false;
    v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes[pos + std::size_t(i)])) << (8 * i);
    pos += 8;
    return true;
  }

  bool f32(double& v) {
    std::uint32_t u;
    if (!u32(u)) return false;
    float f;
    std::memcpy(&f, &u, sizeof f);
    v = double(f);
    return true;
  }
};

}  // namespace

void save_patches(const std::string& path, const std::vector<PartitionPatches>& patches,
                  const PreprocessConfig& cfg) {
  std::string buf;
  buf.append(kCacheMagic, sizeof kCacheMagic);
  put_u32(buf, kCacheVersion);
  put_u64(buf, cfg.hash());
  put_u32(buf, std::uint32_t(patches.size()));
  for (const PartitionPatches& part : patches) {
    put_u32(buf, std::uint32_t(part.size()));
    for (const Patch& p : part) {
      put_u32(buf, std::uint32_t(p.geometry.size()));
      put_u64(buf, p.centroid_index);
      for (const Vec3& g : p.geometry)
        for (int a = 0; a < 3; ++a) put_f32(buf, float(g[a]));
      for (const Vec3& c : p.color)
        for (int a = 0; a < 3; ++a) put_f32(buf, float(c[a]));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("patch cache: cannot open '" + path + "' for writing");
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw InputError("patch cache: write to '" + path + "' failed");
}

std::optional<std::vector<PartitionPatches>> load_patches(const std::string& path,
                                                          const PreprocessConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof kCacheMagic || std::memcmp(bytes.data(), kCacheMagic, sizeof kCacheMagic) != 0)
    return std::nullopt;
  Reader r{bytes, sizeof kCacheMagic};
  std::uint32_t version, n_parts;
  std::uint64_t hash;
  if (!r.u32(version) || version != kCacheVersion) return std::nullopt;
  if (!r.u64(hash) || hash != cfg.hash()) return std::nullopt;
  if (!r.u32(n_parts) || n_parts > (1u << 20)) return std::nullopt;
  std::vector<PartitionPatches> out(n_parts);
  for (PartitionPatches& part : out) {
    std::uint32_t n_patches;
    if (!r.u32(n_patches) || n_patches > (1u << 24)) return std::nullopt;
    part.resize(n_patches);
    for (Patch& p : part) {
      std::uint32_t rows;
      std::uint64_t centroid;
      if (!r.u32(rows) || rows > (1u << 24) || !r.u64(centroid)) return std::nullopt;
      p.centroid_index = centroid;
      p.geometry.resize(rows);
      p.color.resize(rows);
      for (Vec3& g : p.geometry)
        for (int a = 0; a < 3; ++a)
          if (!r.f32(g[a])) return std::nullopt;
      for (Vec3& c : p.color)
        for (int a = 0; a < 3; ++a)
          if (!r.f32(c[a])) return std::nullopt;
    }
  }
  if (r.pos != bytes.size()) return std::nullopt;
  return out;
}

}  // namespace pcqa
