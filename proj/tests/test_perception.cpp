#include "rekep/binary_io.hpp"
#include "rekep/perception.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <random>

using namespace rekep;
using nlohmann::json;

namespace {

const WorkspaceBounds kWorkspace(Vec3(0.0, -0.5, 0.0), Vec3(1.0, 0.5, 0.5));

// Plain per-pixel bilinear interpolation with half-pixel centers.
double bilinear_at(const RowMatrix& patch, int h_in, int w_in, int h_out, int w_out, int r, int c, int ch) {
  auto src = [](int i, int in, int out) {
    return std::clamp((i + 0.5) * static_cast<double>(in) / out - 0.5, 0.0, static_cast<double>(in - 1));
  };
  const double y = src(r, h_in, h_out), x = src(c, w_in, w_out);
  const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  const int y1 = std::min(y0 + 1, h_in - 1), x1 = std::min(x0 + 1, w_in - 1);
  const double fy = y - y0, fx = x - x0;
  auto v = [&](int yy, int xx) { return patch(yy * w_in + xx, ch); };
  return (1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x1)) + fy * ((1 - fx) * v(y1, x0) + fx * v(y1, x1));
}

FeatureMap plane_map(int h, int w, int d) {
  FeatureMap m;
  m.h = h;
  m.w = w;
  m.values = RowMatrix::Zero(h * w, d);
  m.pointmap.resize(h * w, 3);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m.pointmap.row(r * w + c) << 0.2 + 0.01 * c, -0.2 + 0.01 * r, 0.02;
  return m;
}

MaskSet full_mask(int h, int w) {
  MaskSet m;
  m.h = h;
  m.w = w;
  m.masks.assign(1, std::vector<std::uint8_t>(static_cast<size_t>(h * w), 1));
  return m;
}

CameraCloud cloud_of(std::vector<Vec3> pos, std::vector<Eigen::VectorXd> feat) {
  CameraCloud c;
  c.positions.resize(static_cast<Eigen::Index>(pos.size()), 3);
  c.features.resize(static_cast<Eigen::Index>(feat.size()), feat.empty() ? 0 : feat[0].size());
  for (size_t i = 0; i < pos.size(); ++i) {
    c.positions.row(static_cast<Eigen::Index>(i)) = pos[i].transpose();
    c.features.row(static_cast<Eigen::Index>(i)) = feat[i].transpose();
  }
  return c;
}

Eigen::VectorXd basis(int d, int i) { return Eigen::VectorXd::Unit(d, i); }

KeypointArray one_keypoint(const Vec3& p) {
  KeypointArray k(1, 3);
  k.row(0) = p.transpose();
  return k;
}

}  // namespace

TEST_CASE("upsampling a constant field stays constant") {
  const RowMatrix patch = RowMatrix::Constant(4 * 3, 2, 1.25);
  const RowMatrix up = upsample_bilinear(patch, 4, 3, 9, 7);
  CHECK(up.rows() == 63);
  CHECK((up.array() - 1.25).abs().maxCoeff() == 0.0);
}

TEST_CASE("upsampling a ramp interpolates linearly between centers") {
  RowMatrix patch(2 * 2, 1);
  patch << 0, 1, 0, 1;
  const RowMatrix up = upsample_bilinear(patch, 2, 2, 2, 4);
  CHECK(up(0, 0) == 0.0);
  CHECK(up(1, 0) == doctest::Approx(0.25));
  CHECK(up(2, 0) == doctest::Approx(0.75));
  CHECK(up(3, 0) == 1.0);
}

TEST_CASE("upsampling matches a per-pixel formula on random maps") {
  std::mt19937_64 rng(40);
  std::normal_distribution<double> n;
  for (auto [hi, wi, ho, wo] : {std::array{3, 4, 14, 14}, std::array{5, 2, 7, 9}, std::array{6, 6, 6, 6}}) {
    RowMatrix patch(hi * wi, 3);
    for (Eigen::Index i = 0; i < patch.size(); ++i) patch.data()[i] = n(rng);
    const RowMatrix up = upsample_bilinear(patch, hi, wi, ho, wo);
    for (int r = 0; r < ho; ++r)
      for (int c = 0; c < wo; ++c)
        for (int ch = 0; ch < 3; ++ch) CHECK(std::abs(up(r * wo + c, ch) - bilinear_at(patch, hi, wi, ho, wo, r, c, ch)) < 1e-12);
  }
}

TEST_CASE("two constant halves yield candidates at their median pixels") {
  FeatureMap m = plane_map(10, 20, 4);
  for (int r = 0; r < 10; ++r)
    for (int c = 0; c < 20; ++c) m.values.row(r * 20 + c) = (c < 10 ? basis(4, 0) : basis(4, 1)).transpose();
  ProposeOptions opts;
  opts.clusters = 2;
  const auto out = propose(m, full_mask(10, 20), kWorkspace, opts);
  REQUIRE(out.size() == 2);
  // rows 0..9 -> median 4.5 (tie resolved to row 4); columns median 4.5 and 14.5 -> 4 and 14
  std::vector<Vec3> got{out[0].position, out[1].position};
  std::sort(got.begin(), got.end(), [](const Vec3& a, const Vec3& b) { return a.x() < b.x(); });
  CHECK((got[0] - Vec3(0.24, -0.16, 0.02)).norm() < 1e-12);
  CHECK((got[1] - Vec3(0.34, -0.16, 0.02)).norm() < 1e-12);
  CHECK(out[0].cluster_size == 100);
}

TEST_CASE("points outside the workspace and empty masks give no candidates") {
  FeatureMap m = plane_map(6, 6, 3);
  m.values.setRandom();
  const WorkspaceBounds far(Vec3(5, 5, 5), Vec3(6, 6, 6));
  CHECK(propose(m, full_mask(6, 6), far, {}).empty());
  MaskSet none = full_mask(6, 6);
  std::fill(none.masks[0].begin(), none.masks[0].end(), 0);
  CHECK(propose(m, none, kWorkspace, {}).empty());
}

TEST_CASE("candidates closer than the bandwidth are merged into the larger cluster") {
  FeatureMap m = plane_map(4, 10, 3);
  MaskSet masks;
  masks.h = 4;
  masks.w = 10;
  masks.masks.assign(2, std::vector<std::uint8_t>(40, 0));
  // mask 0: columns 0..3 (16 px), mask 1: columns 5..7 (12 px); medians 5 cm apart
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) masks.masks[0][static_cast<size_t>(r * 10 + c)] = 1;
    for (int c = 5; c < 8; ++c) masks.masks[1][static_cast<size_t>(r * 10 + c)] = 1;
  }
  ProposeOptions opts;
  opts.clusters = 1;
  auto out = propose(m, masks, kWorkspace, opts);
  REQUIRE(out.size() == 1);
  CHECK(out[0].group == 0);
  opts.bandwidth = 0.04;
  CHECK(propose(m, masks, kWorkspace, opts).size() == 2);
}

TEST_CASE("painted patches reproduce the analytic candidates") {
  const FeatureMap m = read_feature_map(testing::fixture_path("perception/patches.rkfm"));
  const MaskSet masks = read_masks(testing::fixture_path("perception/patches.rkms"));
  const json expected = json::parse(testing::slurp(testing::fixture_path("perception/patches_expected.json")));
  const auto out = propose(m, masks, kWorkspace, {});
  REQUIRE(out.size() == expected.size());
  for (const auto& e : expected) {
    const Vec3 p(e["position"][0], e["position"][1], e["position"][2]);
    bool found = false;
    for (const auto& c : out) {
      found = found || ((c.position - p).norm() < 1e-12 && c.group == e["group"] && c.cluster_size == e["cluster_size"]);
    }
    CHECK_MESSAGE(found, e.dump());
  }
  for (size_t i = 1; i < out.size(); ++i) CHECK(out[i - 1].cluster_size >= out[i].cluster_size);
}

TEST_CASE("proposals are separated, finite and deterministic") {
  const FeatureMap m = read_feature_map(testing::fixture_path("perception/noisy.rkfm"));
  const MaskSet masks = read_masks(testing::fixture_path("perception/noisy.rkms"));
  for (bool cosine : {false, true}) {
    ProposeOptions opts;
    opts.cosine = cosine;
    opts.seed = 17;
    const auto a = propose(m, masks, kWorkspace, opts);
    const auto b = propose(m, masks, kWorkspace, opts);
    REQUIRE(a.size() == b.size());
    CHECK(!a.empty());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].position == b[i].position);
      CHECK(a[i].group == b[i].group);
      CHECK(a[i].position.allFinite());
      for (size_t j = 0; j < i; ++j) CHECK((a[i].position - a[j].position).norm() >= opts.bandwidth);
    }
  }
}

TEST_CASE("kmeans separates well-spaced blobs and compacts labels") {
  RowMatrix pts(6, 2);
  pts << 0, 0, 0.1, 0, 0, 0.1, 10, 10, 10.1, 10, 10, 10.1;
  const auto labels = kmeans(pts, 2, 20, 3);
  CHECK(labels[0] == labels[1]);
  CHECK(labels[1] == labels[2]);
  CHECK(labels[3] == labels[4]);
  CHECK(labels[0] != labels[3]);
  // more clusters than distinct points: seeding stops early
  RowMatrix dup(4, 2);
  dup << 1, 1, 1, 1, 2, 2, 2, 2;
  const auto l = kmeans(dup, 3, 20, 0);
  CHECK(*std::max_element(l.begin(), l.end()) == 1);
}

TEST_CASE("pca projection is centered with a fixed sign convention") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n;
  RowMatrix x(50, 5);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const RowMatrix p = pca_project(x);
  CHECK(p.cols() == 3);
  CHECK(p.colwise().mean().cwiseAbs().maxCoeff() < 1e-12);
  // loadings depend only on the covariance, so negating the data negates the projection
  CHECK((p + pca_project(-x)).cwiseAbs().maxCoeff() < 1e-9);
  // the sign convention does not depend on row order
  RowMatrix flipped = x.colwise().reverse();
  CHECK((pca_project(flipped).colwise().reverse() - p).cwiseAbs().maxCoeff() < 1e-9);
  // variances are non-increasing
  const Eigen::RowVectorXd var = p.array().square().colwise().sum();
  CHECK(var[0] >= var[1]);
  CHECK(var[1] >= var[2]);
}

TEST_CASE("tracker references average nearby features over all cameras") {
  const Vec3 kp(0.4, 0.0, 0.1);
  const FeatureCloud single{cloud_of({kp}, {basis(4, 2)})};
  PointTracker t1(single, one_keypoint(kp));
  CHECK(t1.references().row(0) == basis(4, 2).transpose());

  const FeatureCloud two{cloud_of({kp + Vec3(0.01, 0, 0), kp + Vec3(0.5, 0, 0)}, {basis(4, 0), basis(4, 3)}),
                         cloud_of({kp - Vec3(0, 0.015, 0)}, {basis(4, 1)})};
  PointTracker t2(two, one_keypoint(kp));
  CHECK((t2.references().row(0) - Eigen::RowVector4d(0.5, 0.5, 0, 0)).norm() < 1e-15);

  const FeatureCloud far{cloud_of({kp + Vec3(0.03, 0, 0)}, {basis(4, 0)})};
  try {
    PointTracker bad(far, one_keypoint(kp));
    FAIL("expected a tracker error");
  } catch (const TrackerError& e) {
    CHECK(std::string(e.what()).find("keypoint 0") != std::string::npos);
  }
}

TEST_CASE("tracker follows an exact match and goes stale without matches") {
  const Vec3 kp(0.4, 0.0, 0.1);
  PointTracker t({cloud_of({kp}, {basis(4, 0)})}, one_keypoint(kp));
  const Vec3 moved(0.45, 0.02, 0.1);
  const FeatureCloud next{cloud_of({moved, Vec3(0.1, 0.1, 0.1)}, {basis(4, 0), basis(4, 1)})};
  // history holds the first observation, so the uniform filter averages
  TrackFrame f = t.track(next, one_keypoint(kp));
  CHECK(!f.stale[0]);
  CHECK((f.positions.row(0).transpose() - moved).norm() < 1e-15);

  const FeatureCloud nothing{cloud_of({Vec3(0.1, 0.1, 0.1)}, {basis(4, 1)})};
  const KeypointArray prev = f.positions;
  f = t.track(nothing, prev);
  CHECK(f.stale[0]);
  CHECK(f.positions == prev);
}

TEST_CASE("tracker output is translation equivariant") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> n(0.0, 0.02);
  const Vec3 kp(0.5, 0.0, 0.1);
  std::vector<Vec3> pos;
  std::vector<Eigen::VectorXd> feat;
  for (int i = 0; i < 60; ++i) {
    pos.push_back(kp + Vec3(n(rng), n(rng), n(rng)));
    Eigen::VectorXd f = basis(6, 0) + 0.3 * Eigen::VectorXd::NullaryExpr(6, [&] { return n(rng) * 20; });
    feat.push_back(f.normalized());
  }
  const Vec3 v(0.125, -0.25, 0.0625);
  std::vector<Vec3> shifted;
  for (const auto& p : pos) shifted.push_back(p + v);
  PointTracker a({cloud_of(pos, feat)}, one_keypoint(kp));
  PointTracker b({cloud_of(shifted, feat)}, one_keypoint(kp + v));
  for (int t = 0; t < 3; ++t) {
    const TrackFrame fa = a.track({cloud_of(pos, feat)}, one_keypoint(kp));
    const TrackFrame fb = b.track({cloud_of(shifted, feat)}, one_keypoint(kp + v));
    CHECK((fb.positions.row(0) - fa.positions.row(0) - v.transpose()).norm() < 1e-12);
  }
}

TEST_CASE("clean tracking sequence equals the uniform filter of the truth") {
  const std::string dir = "perception/track_clean/";
  const json init = json::parse(testing::slurp(testing::fixture_path(dir + "init.json")));
  const json expected = json::parse(testing::slurp(testing::fixture_path(dir + "expected.json")));
  KeypointArray k(static_cast<Eigen::Index>(init.size()), 3);
  for (size_t i = 0; i < init.size(); ++i) k.row(static_cast<Eigen::Index>(i)) << init[i][0], init[i][1], init[i][2];
  char name[32];
  std::snprintf(name, sizeof name, "frame_%03d.rkfc", 0);
  PointTracker tracker(read_feature_cloud(testing::fixture_path(dir + name)), k);
  KeypointArray prev = k;
  for (size_t t = 0; t < expected.size(); ++t) {
    std::snprintf(name, sizeof name, "frame_%03zu.rkfc", t);
    const TrackFrame f = tracker.track(read_feature_cloud(testing::fixture_path(dir + name)), prev);
    for (size_t i = 0; i < init.size(); ++i) {
      const Vec3 e(expected[t][i][0], expected[t][i][1], expected[t][i][2]);
      CHECK((f.positions.row(static_cast<Eigen::Index>(i)).transpose() - e).norm() < 1e-9);
    }
    prev = f.positions;
  }
}

TEST_CASE("perception files round trip and reject malformed input") {
  const auto dir = testing::scratch_dir("perception");
  FeatureMap m = plane_map(3, 4, 3);
  m.values.setRandom();
  m.pointmap(5, 0) = std::numeric_limits<double>::quiet_NaN();
  write_feature_map(dir / "m.rkfm", m);
  const FeatureMap back = read_feature_map(dir / "m.rkfm");
  CHECK(back.h == 3);
  CHECK(back.w == 4);
  CHECK(back.d() == 3);
  CHECK(std::isnan(back.pointmap(5, 0)));
  CHECK((back.values - m.values.cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);

  const std::string bytes = testing::slurp(dir / "m.rkfm");
  testing::spit(dir / "magic.rkfm", "RKXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_feature_map(dir / "magic.rkfm"), FormatError);
  testing::spit(dir / "short.rkfm", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_feature_map(dir / "short.rkfm"), FormatError);

  MaskSet masks = full_mask(3, 4);
  write_masks(dir / "k.rkms", masks);
  CHECK(read_masks(dir / "k.rkms").masks == masks.masks);
  std::string mb = testing::slurp(dir / "k.rkms");
  mb.back() = 7;
  testing::spit(dir / "bad.rkms", mb);
  CHECK_THROWS_AS(read_masks(dir / "bad.rkms"), FormatError);

  CameraCloud empty;
  empty.positions.resize(0, 3);
  empty.features.resize(0, 3);
  const FeatureCloud cloud{cloud_of({Vec3(1, 2, 3)}, {basis(3, 1)}), empty};
  write_feature_cloud(dir / "c.rkfc", cloud);
  const FeatureCloud cb = read_feature_cloud(dir / "c.rkfc");
  REQUIRE(cb.size() == 2);
  CHECK(cb[0].positions.row(0) == Eigen::RowVector3d(1, 2, 3));
  CHECK(cb[1].positions.rows() == 0);
}
