// Keypoint proposal from feature maps and masks, and the feature-matching point tracker.
//
// Binary formats (little-endian, 32-bit floats):
//   RKFM  "RKFM" u32 h, w, d; h*w*d features (row-major, channel fastest); h*w*3 pointmap
//   RKMS  "RKMS" u32 h, w, n; n*h*w bytes, each 0 or 1
//   RKFC  "RKFC" u32 version (1), u32 cameras; per camera u32 n, u32 d, n*(3 + d) floats
#pragma once

#include "rekep/dsl.hpp"
#include "rekep/geometry.hpp"

#include <cstdint>
#include <deque>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace rekep {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using PointRows = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Per-pixel features (row r * w + c) with the 3-D point seen at each pixel.
/// Invalid pixels carry non-finite pointmap entries.
struct FeatureMap {
  int h = 0;
  int w = 0;
  RowMatrix values;   // (h*w) x d
  PointRows pointmap;  // (h*w) x 3

  int d() const { return static_cast<int>(values.cols()); }
};

struct MaskSet {
  int h = 0;
  int w = 0;
  std::vector<std::vector<std::uint8_t>> masks;  // each h*w, row-major; all-zero masks contribute nothing

  int size() const { return static_cast<int>(masks.size()); }
};

struct CameraCloud {
  PointRows positions;  // n x 3
  RowMatrix features;   // n x d
};

using FeatureCloud = std::vector<CameraCloud>;

struct KeypointCandidate {
  Vec3 position = Vec3::Zero();
  int group = 0;        // source mask index
  int cluster_size = 0;
};

/// Align-corners-false bilinear resize of an (h_in*w_in) x d grid to h_out x w_out.
RowMatrix upsample_bilinear(const RowMatrix& patch, int h_in, int w_in, int h_out, int w_out);

struct ProposeOptions {
  int clusters = 5;
  double bandwidth = 0.08;
  int max_iters = 50;
  std::uint64_t seed = 0;
  /// Cluster unit-normalized raw features instead of the 3-D PCA projection.
  bool cosine = false;
};

std::vector<KeypointCandidate> propose(const FeatureMap& features, const MaskSet& masks,
                                       const WorkspaceBounds& workspace, const ProposeOptions& opts = {});

/// Deterministic k-means++ seeding followed by Lloyd iterations. Returns a label per row;
/// clusters that end up empty are removed and labels compacted.
std::vector<int> kmeans(const RowMatrix& points, int k, int max_iters, std::uint64_t seed);

/// Rows projected on the top three principal directions, each flipped so its largest-magnitude
/// loading is positive.
RowMatrix pca_project(const RowMatrix& x, int components = 3);

class TrackerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrackerOptions {
  double init_radius = 0.02;
  double min_similarity = 0.6;
  int top_matches = 100;
  double deviation_factor = 2.0;
  int window = 10;
};

struct TrackFrame {
  KeypointArray positions;
  std::vector<bool> stale;
};

class PointTracker {
 public:
  /// Reference feature per keypoint = mean feature of cloud points within init_radius, over all cameras.
  PointTracker(const FeatureCloud& cloud, const KeypointArray& keypoints, const TrackerOptions& opts = {});

  TrackFrame track(const FeatureCloud& cloud, const KeypointArray& previous);

  const RowMatrix& references() const { return references_; }
  int num_keypoints() const { return static_cast<int>(references_.rows()); }

 private:
  RowMatrix references_;
  TrackerOptions opts_;
  std::vector<std::deque<Vec3>> history_;
};

FeatureMap read_feature_map(const std::filesystem::path& path);
void write_feature_map(const std::filesystem::path& path, const FeatureMap& map);
MaskSet read_masks(const std::filesystem::path& path);
void write_masks(const std::filesystem::path& path, const MaskSet& masks);
FeatureCloud read_feature_cloud(const std::filesystem::path& path);
void write_feature_cloud(const std::filesystem::path& path, const FeatureCloud& cloud);

}  // namespace rekep
