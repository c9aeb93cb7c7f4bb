#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pcqa/point_cloud.hpp"

namespace pcqa {

struct PreprocessConfig {
  std::size_t patch_size = 512;
  std::size_t partitions = 0;  // 0 = derive from cloud size
  std::size_t min_partitions = 8;
  std::size_t max_partitions = 24;
  std::size_t points_per_partition_target = 100000;
  int slice_axis = -1;  // -1 = axis of largest bounding-box extent

  // Stable digest of every field; stored in patch cache files so a config
  // change invalidates previously cached patches.
  std::uint64_t hash() const;
};

struct Partition {
  std::vector<std::size_t> point_indices;  // strictly increasing, into parent cloud
  double slab_low = 0.0;
  double slab_high = 0.0;
};

struct Patch {
  std::vector<Vec3> geometry;  // centered, scaled to the unit sphere
  std::vector<Vec3> color;     // untouched, in [0,1]
  std::size_t centroid_index = 0;  // seed point, index into parent cloud
};

using PartitionPatches = std::vector<Patch>;

std::size_t compute_partition_count(std::size_t n_points, const PreprocessConfig& cfg);

// k equal-width slabs along `axis` (or the widest axis when axis < 0); points on
// the top boundary land in the last slab; empty slabs are dropped.
std::vector<Partition> slice_partitions(const PointCloud& pc, std::size_t k, int axis = -1);

// Greedy max-min sampling. First pick is `start`; every later pick maximizes the
// minimum distance to the picks so far, ties resolved toward the lowest index.
std::vector<std::size_t> farthest_point_sample(const std::vector<Vec3>& points, std::size_t m,
                                               std::size_t start);

// ceil(|partition|/patch_size) seeds via farthest_point_sample (started at the
// point nearest the partition centroid), one kNN patch per seed, plus repair
// patches until every partition point is covered. Undersized partitions wrap
// around so each patch always has exactly patch_size rows.
PartitionPatches build_patches(const PointCloud& pc, const Partition& partition,
                               const PreprocessConfig& cfg);

Patch normalize_patch(const std::vector<Vec3>& geometry_raw, const std::vector<Vec3>& colors,
                      std::size_t centroid_index = 0);

// Full pipeline: partition count, slicing, per-partition patch building.
// Partitions are independent, so `threads` > 1 fans them out across workers.
std::vector<PartitionPatches> preprocess_cloud(const PointCloud& pc, const PreprocessConfig& cfg,
                                               std::size_t threads = 1);

// Patch cache: versioned little-endian file keyed by the config hash.
void save_patches(const std::string& path, const std::vector<PartitionPatches>& patches,
                  const PreprocessConfig& cfg);
// Returns nothing when the file is absent, unreadable, or was written under a
// different version/config — callers fall back to recomputing.
std::optional<std::vector<PartitionPatches>> load_patches(const std::string& path,
                                                          const PreprocessConfig& cfg);

}  // namespace pcqa
