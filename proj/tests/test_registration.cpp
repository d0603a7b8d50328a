#include <catch2/catch_amalgamated.hpp>

#include "simcor/registration.hpp"

using namespace simcor;

namespace {

std::vector<Vec3> box_corners() {
  return {Vec3(0, 0, 0), Vec3(68.7, 0, 0), Vec3(68.7, 35.8, 0),
          Vec3(0, 35.8, 0)};
}

RigidTransform random_transform(RngStream& rng, double max_angle = M_PI,
                                double max_shift = 20.0) {
  Vec3 axis(rng.normal(), rng.normal(), rng.normal());
  while (axis.norm() < 1e-6) axis = Vec3(rng.normal(), rng.normal(), rng.normal());
  return RigidTransform::from_axis_angle(
      axis.normalized(), rng.uniform(-max_angle, max_angle),
      Vec3(rng.uniform(-max_shift, max_shift), rng.uniform(-max_shift, max_shift),
           rng.uniform(-max_shift, max_shift)));
}

PointCloud random_cloud(RngStream& rng, int n, double extent = 30.0) {
  std::vector<Vec3> pts;
  for (int i = 0; i < n; ++i)
    pts.emplace_back(rng.uniform(0, extent), rng.uniform(0, extent),
                     rng.uniform(0, extent * 0.3));
  return PointCloud(std::move(pts));
}

}  // namespace

TEST_CASE("fit_rigid on identical corners is the identity", "[registration]") {
  auto corners = box_corners();
  RigidTransform tf = fit_rigid(corners, corners);
  CHECK((tf.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(tf.translation.norm() < 1e-12);
  for (const auto& c : corners) CHECK((tf.apply(c) - c).norm() < 1e-12);
}

TEST_CASE("fit_rigid recovers a 90 degree yaw plus shift exactly",
          "[registration]") {
  RigidTransform truth = RigidTransform::from_axis_angle(
      Vec3(0, 0, 1), M_PI / 2.0, Vec3(1, 2, 3));
  auto source = box_corners();
  std::vector<Vec3> target;
  for (const auto& p : source) target.push_back(truth.apply(p));

  RigidTransform fitted = fit_rigid(source, target);
  CHECK((fitted.rotation - truth.rotation).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((fitted.translation - truth.translation).norm() < 1e-9);
}

TEST_CASE("fit_rigid rejects collinear and mismatched input", "[registration]") {
  std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  CHECK_THROWS_AS(fit_rigid(line, line), GeometryError);
  std::vector<Vec3> two{{0, 0, 0}, {1, 0, 0}};
  CHECK_THROWS_AS(fit_rigid(two, two), ArgumentError);
  std::vector<Vec3> three{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  CHECK_THROWS_AS(fit_rigid(three, two), ArgumentError);
}

TEST_CASE("fit_rigid returns a proper rotation even for mirrored targets",
          "[registration]") {
  RngStream rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> source, target;
    for (int i = 0; i < 6; ++i) {
      Vec3 p(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
      source.push_back(p);
      target.emplace_back(-p.x(), p.y(), p.z());  // reflection
    }
    RigidTransform tf = fit_rigid(source, target);
    tf.validate();  // orthonormal, det +1
    CHECK(tf.rotation.determinant() > 0.0);
  }
}

TEST_CASE("fit_rigid recovers random transforms from noiseless corners",
          "[registration]") {
  RngStream rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    RigidTransform truth = random_transform(rng);
    auto source = box_corners();
    std::vector<Vec3> target;
    for (const auto& p : source) target.push_back(truth.apply(p));
    RigidTransform fitted = fit_rigid(source, target);
    CHECK((fitted.rotation - truth.rotation).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((fitted.translation - truth.translation).norm() < 1e-9);
  }
}

TEST_CASE("transform compose and inverse round-trip", "[registration]") {
  RngStream rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    RigidTransform a = random_transform(rng);
    RigidTransform b = random_transform(rng);
    Vec3 p(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-10, 10));
    CHECK((a.compose(b).apply(p) - a.apply(b.apply(p))).norm() < 1e-9);
    CHECK((a.inverse().apply(a.apply(p)) - p).norm() < 1e-9);
  }
}

TEST_CASE("icp on identical clouds converges immediately", "[registration]") {
  RngStream rng(3);
  PointCloud cloud = random_cloud(rng, 200);
  IcpConfig cfg;
  IcpResult result = icp_register(cloud, cloud, cfg);
  CHECK(result.mean_residual == 0.0);
  CHECK(result.iterations <= 1);
  CHECK((result.transform.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK(result.transform.translation.norm() < 1e-12);
}

TEST_CASE("icp recovers a 2 mm displacement from a 1 mm-off seed",
          "[registration]") {
  RngStream rng(29);
  PointCloud source = random_cloud(rng, 400);
  Vec3 shift(2.0 / std::sqrt(3.0), 2.0 / std::sqrt(3.0), 2.0 / std::sqrt(3.0));
  std::vector<Vec3> moved;
  for (const auto& p : source.points()) moved.push_back(p + shift);
  PointCloud target(moved);

  IcpConfig cfg;
  cfg.initial.translation = shift + Vec3(0.5, -0.5, 0.7);  // within 1.02 mm
  IcpResult result = icp_register(source, target, cfg);
  CHECK((result.transform.translation - shift).norm() < 0.1);
  CHECK((result.transform.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <
        1e-3);
}

TEST_CASE("icp tolerates gaussian noise across random trials", "[registration]") {
  RngStream rng(57);
  int successes = 0;
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud source = random_cloud(rng, 300);
    Vec3 shift = rng.normal_vec3(1.0);
    std::vector<Vec3> moved;
    for (const auto& p : source.points())
      moved.push_back(p + shift + rng.normal_vec3(0.5));
    PointCloud target(moved);
    IcpConfig cfg;  // identity seed
    IcpResult result = icp_register(source, target, cfg);
    if ((result.transform.translation - shift).norm() < 0.5) ++successes;
  }
  CHECK(successes >= 19);
}

TEST_CASE("icp residuals are non-increasing across iterations",
          "[registration]") {
  // exercised implicitly by the monotone-keep rule; verify the reported
  // residual is never above the seed residual
  RngStream rng(61);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud source = random_cloud(rng, 150);
    RigidTransform truth = random_transform(rng, 0.2, 3.0);
    std::vector<Vec3> moved;
    for (const auto& p : source.points())
      moved.push_back(truth.apply(p) + rng.normal_vec3(0.2));
    PointCloud target(moved);

    IcpConfig cfg;
    cfg.initial = RigidTransform::from_axis_angle(Vec3(0, 0, 1), 0.05,
                                                  truth.translation * 0.8);
    double seed_residual = 0.0;
    for (const auto& p : source.points())
      seed_residual += target.nearest(cfg.initial.apply(p)).second;
    seed_residual /= source.size();

    IcpResult result = icp_register(source, target, cfg);
    CHECK(result.mean_residual <= seed_residual + 1e-12);
  }
}

TEST_CASE("icp fails cleanly when nothing is in range", "[registration]") {
  PointCloud a(std::vector<Vec3>{{0, 0, 0}, {1, 0, 0}});
  PointCloud b(std::vector<Vec3>{{1000, 0, 0}, {1001, 0, 0}});
  IcpConfig cfg;
  cfg.max_correspondence_dist = 5.0;
  CHECK_THROWS_AS(icp_register(a, b, cfg), RegistrationError);
}

TEST_CASE("transform and correspondence files round-trip", "[registration]") {
  RngStream rng(71);
  RigidTransform tf = random_transform(rng);
  auto dir = std::filesystem::temp_directory_path();
  auto tf_path = dir / "simcor_tf_rt.txt";
  save_transform(tf, tf_path);
  RigidTransform loaded = load_transform(tf_path);
  CHECK((loaded.rotation - tf.rotation).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((loaded.translation - tf.translation).norm() < 1e-15);
  std::filesystem::remove(tf_path);

  CorrespondenceSet set;
  set.source = box_corners();
  for (const auto& p : set.source) set.target.push_back(tf.apply(p));
  auto cs_path = dir / "simcor_corr_rt.csv";
  save_correspondences(set, cs_path);
  CorrespondenceSet loaded_set = load_correspondences(cs_path);
  REQUIRE(loaded_set.source.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(loaded_set.source[i] == set.source[i]);
    CHECK(loaded_set.target[i] == set.target[i]);
  }
  std::filesystem::remove(cs_path);
}
