#include "rekep/esdf.hpp"

#include "rekep/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rekep {

size_t Occupancy::count() const { return static_cast<size_t>(std::count(cells.begin(), cells.end(), 1)); }

EsdfGrid::EsdfGrid(const GridSpec& spec, std::vector<double> distances)
    : spec_(spec), distances_(std::move(distances)) {
  const size_t n = static_cast<size_t>(spec.dims[0]) * static_cast<size_t>(spec.dims[1]) *
                   static_cast<size_t>(spec.dims[2]);
  if (distances_.size() != n) throw std::invalid_argument("distance array does not match grid dims");
}

double EsdfGrid::query(const Vec3& p) const {
  const Vec3 u = (p - spec_.origin) / spec_.resolution;
  std::array<int, 3> i0{};
  std::array<double, 3> f{};
  for (size_t a = 0; a < 3; ++a) {
    const double hi = spec_.dims[a] - 1;
    const double c = std::clamp(u[static_cast<Eigen::Index>(a)], 0.0, hi);
    const int base = std::min(static_cast<int>(std::floor(c)), spec_.dims[a] - 2);
    i0[a] = base;
    f[a] = c - base;
  }
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const double wz = dz ? f[2] : 1.0 - f[2];
    for (int dy = 0; dy < 2; ++dy) {
      const double wy = dy ? f[1] : 1.0 - f[1];
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? f[0] : 1.0 - f[0];
        acc += wx * wy * wz * at(i0[0] + dx, i0[1] + dy, i0[2] + dz);
      }
    }
  }
  return acc;
}

Occupancy rasterize_boxes(std::span<const ObstacleBox> boxes, const GridSpec& spec,
                          const std::function<bool(const ObstacleBox&)>& include) {
  Occupancy occ(spec.dims);
  for (const auto& box : boxes) {
    if (include && !include(box)) continue;
    const Vec3 lo = (box.center - box.half_extents - spec.origin) / spec.resolution;
    const Vec3 hi = (box.center + box.half_extents - spec.origin) / spec.resolution;
    std::array<int, 3> a{}, b{};
    bool any = true;
    for (size_t d = 0; d < 3; ++d) {
      const auto e = static_cast<Eigen::Index>(d);
      a[d] = std::max(0, static_cast<int>(std::ceil(lo[e] - 1e-9)));
      b[d] = std::min(spec.dims[d] - 1, static_cast<int>(std::floor(hi[e] + 1e-9)));
      if (a[d] > b[d]) any = false;
    }
    if (any) {
      for (int k = a[2]; k <= b[2]; ++k)
        for (int j = a[1]; j <= b[1]; ++j)
          for (int i = a[0]; i <= b[0]; ++i) occ.set(i, j, k);
      continue;
    }
    const Vec3 c = (box.center - spec.origin) / spec.resolution;
    std::array<int, 3> n{};
    bool inside = true;
    for (size_t d = 0; d < 3; ++d) {
      n[d] = static_cast<int>(std::lround(c[static_cast<Eigen::Index>(d)]));
      if (n[d] < 0 || n[d] >= spec.dims[d]) inside = false;
    }
    if (inside) occ.set(n[0], n[1], n[2]);
  }
  return occ;
}

namespace {

// Lower envelope of parabolas: out[p] = min_q (p - q)^2 + f[q].
void distance_transform_1d(const double* f, double* out, int n, std::vector<int>& v, std::vector<double>& z) {
  v.resize(static_cast<size_t>(n));
  z.resize(static_cast<size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int r) {
    return ((f[q] + double(q) * q) - (f[r] + double(r) * r)) / (2.0 * q - 2.0 * r);
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[static_cast<size_t>(k)]);
    // z[0] is -inf, so k never drops below zero
    while (s <= z[static_cast<size_t>(k)]) {
      --k;
      s = intersect(q, v[static_cast<size_t>(k)]);
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    const int r = v[static_cast<size_t>(k)];
    out[q] = double(q - r) * (q - r) + f[r];
  }
}

}  // namespace

EsdfGrid build_esdf(const Occupancy& occupancy, const GridSpec& spec) {
  if (occupancy.dims != spec.dims) throw std::invalid_argument("occupancy dims do not match grid spec");
  const int nx = spec.dims[0], ny = spec.dims[1], nz = spec.dims[2];
  const size_t total = occupancy.cells.size();
  std::vector<double> sq(total);
  if (occupancy.count() == 0) {
    return EsdfGrid(spec, std::vector<double>(total, spec.max_dist));
  }
  // Larger than any achievable squared voxel distance, small enough to keep the envelope arithmetic finite.
  const double far = 4.0 * (double(nx) * nx + double(ny) * ny + double(nz) * nz) + 1.0;
  for (size_t i = 0; i < total; ++i) sq[i] = occupancy.cells[i] ? 0.0 : far;

  const int longest = std::max({nx, ny, nz});
  std::vector<double> line(static_cast<size_t>(longest)), result(static_cast<size_t>(longest));
  std::vector<int> v;
  std::vector<double> z;

  auto pass = [&](int n, size_t stride, auto&& starts) {
    for (size_t base : starts) {
      for (int q = 0; q < n; ++q) line[static_cast<size_t>(q)] = sq[base + static_cast<size_t>(q) * stride];
      distance_transform_1d(line.data(), result.data(), n, v, z);
      for (int q = 0; q < n; ++q) sq[base + static_cast<size_t>(q) * stride] = result[static_cast<size_t>(q)];
    }
  };

  std::vector<size_t> starts;
  starts.reserve(total);
  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j) starts.push_back(occupancy.index(0, j, k));
  pass(nx, 1, starts);

  starts.clear();
  for (int k = 0; k < nz; ++k)
    for (int i = 0; i < nx; ++i) starts.push_back(occupancy.index(i, 0, k));
  pass(ny, static_cast<size_t>(nx), starts);

  starts.clear();
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) starts.push_back(occupancy.index(i, j, 0));
  pass(nz, static_cast<size_t>(nx) * static_cast<size_t>(ny), starts);

  std::vector<double> dist(total);
  for (size_t i = 0; i < total; ++i) {
    dist[i] = std::min(spec.max_dist, std::sqrt(sq[i]) * spec.resolution);
  }
  return EsdfGrid(spec, std::move(dist));
}

double collision_cost(const EsdfGrid& grid, std::span<const Vec3> body_points, double threshold) {
  double cost = 0.0;
  for (const Vec3& p : body_points) cost += std::max(0.0, threshold - grid.query(p));
  return cost;
}

std::vector<Vec3> farthest_point_sample(std::span<const Vec3> points, size_t n) {
  if (points.empty()) throw std::invalid_argument("farthest_point_sample: empty input");
  if (n == 0) throw std::invalid_argument("farthest_point_sample: n must be >= 1");
  if (points.size() <= n) return {points.begin(), points.end()};
  std::vector<Vec3> out;
  out.reserve(n);
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  size_t pick = 0;
  for (size_t s = 0; s < n; ++s) {
    out.push_back(points[pick]);
    size_t next = 0;
    double best = -1.0;
    for (size_t i = 0; i < points.size(); ++i) {
      nearest[i] = std::min(nearest[i], (points[i] - points[pick]).squaredNorm());
      if (nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
    pick = next;
  }
  return out;
}

Occupancy read_voxel_file(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  r.expect_magic("RKVG");
  std::array<int, 3> dims{};
  for (auto& d : dims) {
    const std::uint32_t v = r.u32();
    if (v < 1 || v > 4096) throw FormatError(path.string() + ": voxel grid dimension out of range");
    d = static_cast<int>(v);
  }
  Occupancy occ(dims);
  const auto payload = r.take(occ.cells.size());
  for (size_t i = 0; i < payload.size(); ++i) {
    if (payload[i] > 1) throw FormatError(path.string() + ": voxel bytes must be 0 or 1");
    occ.cells[i] = payload[i];
  }
  r.expect_end();
  return occ;
}

void write_voxel_file(const std::filesystem::path& path, const Occupancy& occupancy) {
  ByteWriter w;
  w.magic("RKVG");
  for (int d : occupancy.dims) w.u32(static_cast<std::uint32_t>(d));
  for (auto c : occupancy.cells) w.u8(c);
  write_file_bytes(path, w.bytes());
}

}  // namespace rekep
