// Voxel occupancy, exact Euclidean distance transform and collision costs.
#pragma once

#include "rekep/geometry.hpp"
#include "rekep/scene.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace rekep {

/// Binary occupancy over a dims[0] x dims[1] x dims[2] grid, x fastest.
struct Occupancy {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> cells;

  Occupancy() = default;
  explicit Occupancy(std::array<int, 3> d)
      : dims(d), cells(static_cast<size_t>(d[0]) * static_cast<size_t>(d[1]) * static_cast<size_t>(d[2]), 0) {}

  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) +
           static_cast<size_t>(dims[0]) * (static_cast<size_t>(j) + static_cast<size_t>(dims[1]) * static_cast<size_t>(k));
  }
  bool occupied(int i, int j, int k) const { return cells[index(i, j, k)] != 0; }
  void set(int i, int j, int k, bool v = true) { cells[index(i, j, k)] = v ? 1 : 0; }
  size_t count() const;
};

/// Unsigned distance field sampled at voxel centers origin + resolution * (i, j, k).
class EsdfGrid {
 public:
  EsdfGrid() = default;
  EsdfGrid(const GridSpec& spec, std::vector<double> distances);

  const GridSpec& spec() const { return spec_; }
  const Vec3& origin() const { return spec_.origin; }
  double resolution() const { return spec_.resolution; }
  const std::array<int, 3>& dims() const { return spec_.dims; }
  double max_dist() const { return spec_.max_dist; }

  double at(int i, int j, int k) const { return distances_[index(i, j, k)]; }
  Vec3 center(int i, int j, int k) const { return spec_.origin + spec_.resolution * Vec3(i, j, k); }
  const std::vector<double>& distances() const { return distances_; }

  /// Trilinear interpolation of the 8 surrounding centers; points outside clamp to the boundary cell.
  double query(const Vec3& p) const;

 private:
  size_t index(int i, int j, int k) const {
    return static_cast<size_t>(i) +
           static_cast<size_t>(spec_.dims[0]) *
               (static_cast<size_t>(j) + static_cast<size_t>(spec_.dims[1]) * static_cast<size_t>(k));
  }

  GridSpec spec_;
  std::vector<double> distances_;
};

/// Marks every voxel whose center lies inside a box. A box too small to contain any
/// center marks the voxel nearest its center instead. `include` filters boxes.
Occupancy rasterize_boxes(std::span<const ObstacleBox> boxes, const GridSpec& spec,
                          const std::function<bool(const ObstacleBox&)>& include = {});

/// Exact Euclidean distance from each voxel center to the nearest occupied center,
/// clamped to spec.max_dist, via a separable squared-distance transform.
EsdfGrid build_esdf(const Occupancy& occupancy, const GridSpec& spec);

/// Sum over points of max(0, threshold - query(p)).
double collision_cost(const EsdfGrid& grid, std::span<const Vec3> body_points, double threshold = 0.15);

/// Greedy farthest point sampling seeded at index 0; ties resolve to the lowest index.
std::vector<Vec3> farthest_point_sample(std::span<const Vec3> points, size_t n);

/// RKVG raw occupancy: "RKVG", three little-endian u32 dims, then one byte (0/1) per voxel, x fastest.
Occupancy read_voxel_file(const std::filesystem::path& path);
void write_voxel_file(const std::filesystem::path& path, const Occupancy& occupancy);

}  // namespace rekep
