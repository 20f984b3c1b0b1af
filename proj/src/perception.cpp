#include "rekep/perception.hpp"

#include "rekep/binary_io.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

namespace rekep {

namespace {

double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double median_of(std::vector<double> v) {
  const size_t n = v.size();
  const size_t mid = n / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

Vec3 coordinate_median(const std::vector<Vec3>& pts) {
  Vec3 m;
  for (int a = 0; a < 3; ++a) {
    std::vector<double> c(pts.size());
    for (size_t i = 0; i < pts.size(); ++i) c[i] = pts[i][a];
    m[a] = median_of(std::move(c));
  }
  return m;
}

int nearest_center(const RowMatrix& points, Eigen::Index row, const RowMatrix& centers) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (points.row(row) - centers.row(c)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

void check_finite_features(const RowMatrix& values, const std::string& source) {
  if (!values.allFinite()) throw FormatError(source + ": feature values must be finite");
}

}  // namespace

RowMatrix upsample_bilinear(const RowMatrix& patch, int h_in, int w_in, int h_out, int w_out) {
  if (h_in < 1 || w_in < 1 || h_out < h_in || w_out < w_in || patch.rows() != Eigen::Index(h_in) * w_in) {
    throw std::invalid_argument("upsample_bilinear: inconsistent grid sizes");
  }
  auto axis = [](int out_idx, int n_in, int n_out, int& i0, int& i1, double& t) {
    double src = (out_idx + 0.5) * static_cast<double>(n_in) / n_out - 0.5;
    src = std::max(src, 0.0);
    i0 = std::min(static_cast<int>(std::floor(src)), n_in - 1);
    i1 = std::min(i0 + 1, n_in - 1);
    t = src - i0;
  };
  RowMatrix out(Eigen::Index(h_out) * w_out, patch.cols());
  for (int y = 0; y < h_out; ++y) {
    int y0, y1;
    double ty;
    axis(y, h_in, h_out, y0, y1, ty);
    for (int x = 0; x < w_out; ++x) {
      int x0, x1;
      double tx;
      axis(x, w_in, w_out, x0, x1, tx);
      out.row(Eigen::Index(y) * w_out + x) =
          (1 - ty) * ((1 - tx) * patch.row(Eigen::Index(y0) * w_in + x0) + tx * patch.row(Eigen::Index(y0) * w_in + x1)) +
          ty * ((1 - tx) * patch.row(Eigen::Index(y1) * w_in + x0) + tx * patch.row(Eigen::Index(y1) * w_in + x1));
    }
  }
  return out;
}

RowMatrix pca_project(const RowMatrix& x, int components) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index k = std::min<Eigen::Index>(components, d);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const RowMatrix centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(std::max<Eigen::Index>(n - 1, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::MatrixXd basis(d, k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.col(c) = v;
  }
  return centered * basis;
}

std::vector<int> kmeans(const RowMatrix& points, int k, int max_iters, std::uint64_t seed) {
  const Eigen::Index n = points.rows();
  if (n == 0) return {};
  std::mt19937_64 rng(seed);

  // k-means++ seeding
  std::vector<Eigen::Index> chosen{static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n))};
  std::vector<double> d2(static_cast<size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[i] = (points.row(i) - points.row(chosen[0])).squaredNorm();
  while (static_cast<int>(chosen.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total <= 0.0) break;
    const double target = unit_draw(rng) * total;
    double acc = 0.0;
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    chosen.push_back(pick);
    for (Eigen::Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points.row(i) - points.row(pick)).squaredNorm());
  }

  RowMatrix centers(static_cast<Eigen::Index>(chosen.size()), points.cols());
  for (size_t c = 0; c < chosen.size(); ++c) centers.row(static_cast<Eigen::Index>(c)) = points.row(chosen[c]);

  std::vector<int> labels(static_cast<size_t>(n), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int l = nearest_center(points, i, centers);
      if (l != labels[i]) {
        labels[i] = l;
        changed = true;
      }
    }
    if (!changed) break;
    RowMatrix sums = RowMatrix::Zero(centers.rows(), centers.cols());
    std::vector<int> counts(static_cast<size_t>(centers.rows()), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(labels[i]) += points.row(i);
      ++counts[labels[i]];
    }
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
  }

  std::vector<int> remap(static_cast<size_t>(centers.rows()), -1);
  int next = 0;
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    if (std::find(labels.begin(), labels.end(), static_cast<int>(c)) != labels.end()) remap[c] = next++;
  }
  for (auto& l : labels) l = remap[l];
  return labels;
}

std::vector<KeypointCandidate> propose(const FeatureMap& features, const MaskSet& masks,
                                       const WorkspaceBounds& workspace, const ProposeOptions& opts) {
  if (masks.h != features.h || masks.w != features.w) {
    throw std::invalid_argument("propose: mask and feature map sizes differ");
  }
  if (opts.clusters < 1 || opts.bandwidth < 0 || opts.max_iters < 1) {
    throw std::invalid_argument("propose: invalid options");
  }
  std::vector<KeypointCandidate> candidates;
  for (int j = 0; j < masks.size(); ++j) {
    std::vector<Eigen::Index> pixels;
    for (size_t p = 0; p < masks.masks[j].size(); ++p) {
      if (masks.masks[j][p]) pixels.push_back(static_cast<Eigen::Index>(p));
    }
    if (pixels.empty()) continue;

    std::vector<int> labels;
    if (static_cast<int>(pixels.size()) <= opts.clusters) {
      labels.resize(pixels.size());
      std::iota(labels.begin(), labels.end(), 0);
    } else {
      RowMatrix x(static_cast<Eigen::Index>(pixels.size()), features.d());
      for (size_t i = 0; i < pixels.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = features.values.row(pixels[i]);
      RowMatrix embedded;
      if (opts.cosine) {
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
          const double nrm = x.row(r).norm();
          if (nrm > 0) x.row(r) /= nrm;
        }
        embedded = std::move(x);
      } else {
        embedded = pca_project(x, 3);
      }
      labels = kmeans(embedded, opts.clusters, opts.max_iters,
                      opts.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(j + 1)));
    }

    const int num_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    for (int c = 0; c < num_clusters; ++c) {
      std::vector<Eigen::Index> members;
      for (size_t i = 0; i < pixels.size(); ++i) {
        if (labels[i] == c) members.push_back(pixels[i]);
      }
      std::vector<double> rows, cols;
      for (auto p : members) {
        rows.push_back(static_cast<double>(p / features.w));
        cols.push_back(static_cast<double>(p % features.w));
      }
      const double mr = median_of(rows);
      const double mc = median_of(cols);
      Eigen::Index best = members.front();
      double best_d = std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < members.size(); ++i) {
        const double d = (rows[i] - mr) * (rows[i] - mr) + (cols[i] - mc) * (cols[i] - mc);
        if (d < best_d) {
          best_d = d;
          best = members[i];
        }
      }
      const Vec3 pos = features.pointmap.row(best).transpose();
      if (!pos.allFinite() || !workspace.contains(pos)) continue;
      candidates.push_back({pos, j, static_cast<int>(members.size())});
    }
  }

  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const KeypointCandidate& a, const KeypointCandidate& b) { return a.cluster_size > b.cluster_size; });
  std::vector<KeypointCandidate> accepted;
  for (const auto& c : candidates) {
    const bool clear = std::all_of(accepted.begin(), accepted.end(), [&](const KeypointCandidate& a) {
      return (a.position - c.position).norm() >= opts.bandwidth;
    });
    if (clear) accepted.push_back(c);
  }
  return accepted;
}

PointTracker::PointTracker(const FeatureCloud& cloud, const KeypointArray& keypoints, const TrackerOptions& opts)
    : opts_(opts), history_(static_cast<size_t>(keypoints.rows())) {
  if (cloud.empty()) throw TrackerError("tracker needs at least one camera cloud");
  const Eigen::Index d = cloud.front().features.cols();
  for (const auto& cam : cloud) {
    if (cam.features.cols() != d || cam.features.rows() != cam.positions.rows()) {
      throw TrackerError("camera clouds must share the feature dimension");
    }
  }
  references_ = RowMatrix::Zero(keypoints.rows(), d);
  for (Eigen::Index k = 0; k < keypoints.rows(); ++k) {
    int count = 0;
    for (const auto& cam : cloud) {
      for (Eigen::Index i = 0; i < cam.positions.rows(); ++i) {
        if ((cam.positions.row(i) - keypoints.row(k)).norm() <= opts_.init_radius) {
          references_.row(k) += cam.features.row(i);
          ++count;
        }
      }
    }
    if (count == 0) {
      throw TrackerError("keypoint " + std::to_string(k) + " has no cloud point within " +
                         std::to_string(opts_.init_radius) + " m");
    }
    references_.row(k) /= count;
  }
}

TrackFrame PointTracker::track(const FeatureCloud& cloud, const KeypointArray& previous) {
  const Eigen::Index num = references_.rows();
  if (previous.rows() != num) throw std::invalid_argument("track: previous positions do not match keypoint count");
  TrackFrame frame;
  frame.positions.resize(num, 3);
  frame.stale.assign(static_cast<size_t>(num), false);

  for (Eigen::Index k = 0; k < num; ++k) {
    const double ref_norm = references_.row(k).norm();
    struct Match {
      double sim;
      Vec3 pos;
    };
    std::vector<Match> matches;
    for (const auto& cam : cloud) {
      if (cam.features.cols() != references_.cols()) throw std::invalid_argument("track: feature dimension changed");
      for (Eigen::Index i = 0; i < cam.positions.rows(); ++i) {
        const double fn = cam.features.row(i).norm();
        if (fn <= 0 || ref_norm <= 0) continue;
        const double sim = cam.features.row(i).dot(references_.row(k)) / (fn * ref_norm);
        if (sim > opts_.min_similarity) matches.push_back({sim, cam.positions.row(i).transpose()});
      }
    }
    std::stable_sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) { return a.sim > b.sim; });
    if (static_cast<int>(matches.size()) > opts_.top_matches) matches.resize(static_cast<size_t>(opts_.top_matches));

    Vec3 raw = previous.row(k).transpose();
    if (matches.empty()) {
      frame.stale[k] = true;
    } else {
      std::vector<Vec3> pts;
      for (const auto& m : matches) pts.push_back(m.pos);
      const Vec3 med = coordinate_median(pts);
      std::vector<double> dist;
      for (const auto& p : pts) dist.push_back((p - med).norm());
      const double cutoff = opts_.deviation_factor * median_of(dist);
      Vec3 sum = Vec3::Zero();
      int kept = 0;
      for (size_t i = 0; i < pts.size(); ++i) {
        if (dist[i] <= cutoff) {
          sum += pts[i];
          ++kept;
        }
      }
      raw = sum / kept;
    }

    auto& hist = history_[k];
    hist.push_back(raw);
    while (static_cast<int>(hist.size()) > opts_.window) hist.pop_front();
    // mean relative to the oldest sample keeps constant inputs exact
    const Vec3 first = hist.front();
    Vec3 offset = Vec3::Zero();
    for (const auto& h : hist) offset += h - first;
    frame.positions.row(k) = (first + offset / static_cast<double>(hist.size())).transpose();
  }
  return frame;
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  r.expect_magic("RKFM");
  const std::uint32_t h = r.u32(), w = r.u32(), d = r.u32();
  if (h < 1 || w < 1 || h > 8192 || w > 8192) throw FormatError(path.string() + ": feature map size out of range");
  if (d < 3 || d > 65536) throw FormatError(path.string() + ": feature dimension must be at least 3");
  const size_t pixels = size_t(h) * w;
  if (r.remaining() != (pixels * d + pixels * 3) * 4) {
    throw FormatError(path.string() + ": payload size does not match header");
  }
  FeatureMap m;
  m.h = static_cast<int>(h);
  m.w = static_cast<int>(w);
  m.values.resize(static_cast<Eigen::Index>(pixels), d);
  m.pointmap.resize(static_cast<Eigen::Index>(pixels), 3);
  for (Eigen::Index p = 0; p < m.values.rows(); ++p) {
    for (Eigen::Index c = 0; c < m.values.cols(); ++c) m.values(p, c) = r.f32();
  }
  for (Eigen::Index p = 0; p < m.pointmap.rows(); ++p) {
    for (int c = 0; c < 3; ++c) m.pointmap(p, c) = r.f32();
  }
  r.expect_end();
  check_finite_features(m.values, path.string());
  return m;
}

void write_feature_map(const std::filesystem::path& path, const FeatureMap& map) {
  ByteWriter w;
  w.magic("RKFM");
  w.u32(static_cast<std::uint32_t>(map.h));
  w.u32(static_cast<std::uint32_t>(map.w));
  w.u32(static_cast<std::uint32_t>(map.d()));
  for (Eigen::Index p = 0; p < map.values.rows(); ++p) {
    for (Eigen::Index c = 0; c < map.values.cols(); ++c) w.f32(static_cast<float>(map.values(p, c)));
  }
  for (Eigen::Index p = 0; p < map.pointmap.rows(); ++p) {
    for (int c = 0; c < 3; ++c) w.f32(static_cast<float>(map.pointmap(p, c)));
  }
  write_file_bytes(path, w.bytes());
}

MaskSet read_masks(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  r.expect_magic("RKMS");
  const std::uint32_t h = r.u32(), w = r.u32(), n = r.u32();
  if (h < 1 || w < 1 || h > 8192 || w > 8192 || n > 4096) throw FormatError(path.string() + ": mask size out of range");
  const size_t pixels = size_t(h) * w;
  if (r.remaining() != pixels * n) throw FormatError(path.string() + ": payload size does not match header");
  MaskSet s;
  s.h = static_cast<int>(h);
  s.w = static_cast<int>(w);
  for (std::uint32_t j = 0; j < n; ++j) {
    auto bytes = r.take(pixels);
    for (auto b : bytes) {
      if (b > 1) throw FormatError(path.string() + ": mask bytes must be 0 or 1");
    }
    s.masks.push_back(std::move(bytes));
  }
  r.expect_end();
  return s;
}

void write_masks(const std::filesystem::path& path, const MaskSet& masks) {
  ByteWriter w;
  w.magic("RKMS");
  w.u32(static_cast<std::uint32_t>(masks.h));
  w.u32(static_cast<std::uint32_t>(masks.w));
  w.u32(static_cast<std::uint32_t>(masks.size()));
  for (const auto& m : masks.masks) {
    for (auto b : m) w.u8(b ? 1 : 0);
  }
  write_file_bytes(path, w.bytes());
}

FeatureCloud read_feature_cloud(const std::filesystem::path& path) {
  ByteReader r(read_file_bytes(path), path.string());
  r.expect_magic("RKFC");
  const std::uint32_t version = r.u32();
  if (version != 1) throw FormatError(path.string() + ": unsupported feature cloud version " + std::to_string(version));
  const std::uint32_t cameras = r.u32();
  if (cameras > 64) throw FormatError(path.string() + ": too many cameras");
  FeatureCloud cloud;
  std::optional<std::uint32_t> shared_d;
  for (std::uint32_t c = 0; c < cameras; ++c) {
    const std::uint32_t n = r.u32(), d = r.u32();
    if (shared_d && *shared_d != d) throw FormatError(path.string() + ": cameras disagree on feature dimension");
    shared_d = d;
    if (d > 65536 || size_t(n) * (3 + d) * 4 > r.remaining()) {
      throw FormatError(path.string() + ": camera " + std::to_string(c) + " payload exceeds file");
    }
    CameraCloud cam;
    cam.positions.resize(n, 3);
    cam.features.resize(n, d);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) cam.positions(i, a) = r.f32();
      for (std::uint32_t k = 0; k < d; ++k) cam.features(i, k) = r.f32();
    }
    check_finite_features(cam.features, path.string());
    cloud.push_back(std::move(cam));
  }
  r.expect_end();
  return cloud;
}

void write_feature_cloud(const std::filesystem::path& path, const FeatureCloud& cloud) {
  ByteWriter w;
  w.magic("RKFC");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(cloud.size()));
  for (const auto& cam : cloud) {
    w.u32(static_cast<std::uint32_t>(cam.positions.rows()));
    w.u32(static_cast<std::uint32_t>(cam.features.cols()));
    for (Eigen::Index i = 0; i < cam.positions.rows(); ++i) {
      for (int a = 0; a < 3; ++a) w.f32(static_cast<float>(cam.positions(i, a)));
      for (Eigen::Index k = 0; k < cam.features.cols(); ++k) w.f32(static_cast<float>(cam.features(i, k)));
    }
  }
  write_file_bytes(path, w.bytes());
}

}  // namespace rekep
