#include "rekep/kinematics.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace rekep;

namespace {

JointVector random_q(const KinematicChain& chain, std::mt19937_64& rng, double margin = 0.1) {
  JointVector q(chain.dof());
  for (int i = 0; i < chain.dof(); ++i) {
    const auto& j = chain.joints()[static_cast<size_t>(i)];
    q[i] = std::uniform_real_distribution<double>(j.lower + margin, j.upper - margin)(rng);
  }
  return q;
}

}  // namespace

TEST_CASE("planar two-link chain matches the closed form") {
  const KinematicChain chain = load_chain(testing::data_path("chains/planar2.json"));
  REQUIRE(chain.dof() == 2);
  REQUIRE(chain.initial_q.has_value());
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    const JointVector q = random_q(chain, rng);
    const Pose p = fk(chain, q);
    const Vec3 expected(0.5 * std::cos(q[0]) + 0.4 * std::cos(q[0] + q[1]),
                        0.5 * std::sin(q[0]) + 0.4 * std::sin(q[0] + q[1]), 0.0);
    CHECK((p.position - expected).norm() < 1e-12);
    CHECK(rotation_angle(p.orientation, Quat(Eigen::AngleAxisd(q[0] + q[1], Vec3::UnitZ()))) < 1e-9);
  }
}

TEST_CASE("jacobian matches central differences of fk") {
  const KinematicChain chain = load_chain(testing::data_path("chains/reference7.json"));
  std::mt19937_64 rng(9);
  const double h = 1e-6;
  for (int t = 0; t < 20; ++t) {
    const JointVector q = random_q(chain, rng);
    const auto J = jacobian(chain, q);
    for (int i = 0; i < chain.dof(); ++i) {
      JointVector qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      const Pose a = fk(chain, qp), b = fk(chain, qm);
      const Vec3 lin = (a.position - b.position) / (2 * h);
      const Eigen::AngleAxisd w(a.orientation * b.orientation.inverse());
      const Vec3 ang = w.axis() * w.angle() / (2 * h);
      CHECK((J.col(i).head<3>() - lin).norm() < 1e-6);
      CHECK((J.col(i).tail<3>() - ang).norm() < 1e-6);
    }
  }
}

TEST_CASE("ik recovers reachable poses from nearby seeds") {
  const KinematicChain chain = load_chain(testing::data_path("chains/reference7.json"));
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 0.1);
  IkOptions opts;
  opts.max_iters = 200;
  int solved = 0;
  for (int t = 0; t < 20; ++t) {
    const JointVector q = random_q(chain, rng, 0.3);
    JointVector seed = q;
    for (int i = 0; i < seed.size(); ++i) seed[i] += n(rng);
    const Pose target = fk(chain, q);
    const IkResult r = ik(chain, target, chain.clamp(seed), opts);
    CHECK(chain.within_limits(r.q));
    CHECK(r.residual == doctest::Approx(pose_residual(fk(chain, r.q), target, opts.orientation_weight)));
    if (r.residual < 1e-6) ++solved;
  }
  CHECK(solved >= 18);
}

TEST_CASE("unreachable targets leave a large residual") {
  const KinematicChain chain = load_chain(testing::data_path("chains/planar2.json"));
  const Pose far(Vec3(2.0, 0.0, 0.0), Quat::Identity());
  const IkResult r = ik(chain, far, *chain.initial_q);
  CHECK(r.residual >= 1.1 - 1e-6);
  CHECK(reachability_cost(chain, far, *chain.initial_q) == r.residual);
}

TEST_CASE("limits, clamping and chain validation") {
  const KinematicChain chain = load_chain(testing::data_path("chains/planar2.json"));
  JointVector q(2);
  q << 5.0, -5.0;
  CHECK_FALSE(chain.within_limits(q));
  const JointVector c = chain.clamp(q);
  CHECK(c[0] == 3.1);
  CHECK(c[1] == -3.1);
  CHECK_THROWS_AS(fk(chain, JointVector::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(KinematicChain({}, RigidTransform::Identity()), ChainError);
  Joint bad;
  bad.lower = 1.0;
  bad.upper = 0.0;
  CHECK_THROWS_AS(KinematicChain({bad}, RigidTransform::Identity()), ChainError);
  Joint zero;
  zero.axis = Vec3::Zero();
  CHECK_THROWS_AS(KinematicChain({zero}, RigidTransform::Identity()), ChainError);
  CHECK_THROWS_AS(load_chain(testing::data_path("chains/none.json")), ChainError);
}
