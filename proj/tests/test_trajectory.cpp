#include <catch2/catch_amalgamated.hpp>

#include "simcor/trajectory.hpp"

using namespace simcor;

namespace {

KinematicsTrajectory line_traj(double t0, double t1, int n, Vec3 a, Vec3 b) {
  KinematicsTrajectory traj;
  for (int i = 0; i < n; ++i) {
    double u = static_cast<double>(i) / (n - 1);
    traj.samples.push_back({t0 + u * (t1 - t0), (1 - u) * a + u * b});
  }
  return traj;
}

}  // namespace

TEST_CASE("a 14 minute capture at 1 kHz subsamples to about 25k frames",
          "[trajectory]") {
  KinematicsTrajectory traj =
      line_traj(0.0, 14 * 60.0, 14 * 60 * 1000 + 1, Vec3(0, 0, 0),
                Vec3(10, 0, 0));
  KinematicsTrajectory frames = subsample_to_frames(traj, 30.0);
  CHECK(frames.samples.size() == 25201);  // floor(840*30)+1
}

TEST_CASE("constant trajectory stays constant after subsampling",
          "[trajectory]") {
  KinematicsTrajectory traj;
  for (int i = 0; i <= 100; ++i)
    traj.samples.push_back({i * 0.001, Vec3(1, 2, 3)});
  KinematicsTrajectory frames = subsample_to_frames(traj, 30.0);
  for (const auto& s : frames.samples) CHECK(s.p == Vec3(1, 2, 3));
}

TEST_CASE("two-sample trajectory at 2 Hz gives three nearest-sample frames",
          "[trajectory]") {
  KinematicsTrajectory traj;
  traj.samples.push_back({0.0, Vec3(0, 0, 0)});
  traj.samples.push_back({1.0, Vec3(4, 0, 0)});
  KinematicsTrajectory frames = subsample_to_frames(traj, 2.0);
  REQUIRE(frames.samples.size() == 3);
  CHECK(frames.samples[0].t == 0.0);
  CHECK(frames.samples[1].t == 0.5);
  CHECK(frames.samples[2].t == 1.0);
  CHECK(frames.samples[0].p == Vec3(0, 0, 0));
  // midway tie resolves to the earlier sample
  CHECK(frames.samples[1].p == Vec3(0, 0, 0));
  CHECK(frames.samples[2].p == Vec3(4, 0, 0));
}

TEST_CASE("subsampling is idempotent at the same rate", "[trajectory]") {
  KinematicsTrajectory traj = line_traj(0.0, 2.0, 2001, Vec3(0, 0, 0),
                                        Vec3(5, -3, 1));
  KinematicsTrajectory once = subsample_to_frames(traj, 30.0);
  KinematicsTrajectory twice = subsample_to_frames(once, 30.0);
  REQUIRE(once.samples.size() == twice.samples.size());
  for (std::size_t i = 0; i < once.samples.size(); ++i) {
    CHECK(once.samples[i].t == twice.samples[i].t);
    CHECK(once.samples[i].p == twice.samples[i].p);
  }
}

TEST_CASE("interpolation hits samples, midpoints, and clamps", "[trajectory]") {
  KinematicsTrajectory traj;
  traj.samples.push_back({1.0, Vec3(0, 0, 0)});
  traj.samples.push_back({2.0, Vec3(2, 4, 6)});
  traj.samples.push_back({4.0, Vec3(2, 0, 6)});

  CHECK((interpolate(traj, 2.0) - Vec3(2, 4, 6)).norm() < 1e-15);
  CHECK((interpolate(traj, 1.5) - Vec3(1, 2, 3)).norm() < 1e-15);
  CHECK((interpolate(traj, 0.0) - Vec3(0, 0, 0)).norm() < 1e-15);   // clamp low
  CHECK((interpolate(traj, 99.0) - Vec3(2, 0, 6)).norm() < 1e-15);  // clamp high
}

TEST_CASE("interpolation is piecewise linear on each bracket", "[trajectory]") {
  RngStream rng(17);
  KinematicsTrajectory traj;
  double t = 0.0;
  for (int i = 0; i < 20; ++i) {
    t += rng.uniform(0.05, 0.3);
    traj.samples.push_back(
        {t, Vec3(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5))});
  }
  for (int trial = 0; trial < 200; ++trial) {
    double q = rng.uniform(traj.start_time(), traj.end_time());
    Vec3 p = interpolate(traj, q);
    // find bracketing pair and check the barycentric residual
    for (std::size_t i = 1; i < traj.samples.size(); ++i) {
      const auto& lo = traj.samples[i - 1];
      const auto& hi = traj.samples[i];
      if (q >= lo.t && q <= hi.t) {
        double u = (q - lo.t) / (hi.t - lo.t);
        CHECK((p - ((1 - u) * lo.p + u * hi.p)).norm() < 1e-12);
        break;
      }
    }
  }
}

TEST_CASE("trajectory argument errors", "[trajectory]") {
  KinematicsTrajectory empty;
  CHECK_THROWS_AS(subsample_to_frames(empty, 30.0), ArgumentError);
  CHECK_THROWS_AS(interpolate(empty, 0.0), ArgumentError);
  KinematicsTrajectory bad;
  bad.samples.push_back({1.0, Vec3::Zero()});
  bad.samples.push_back({1.0, Vec3::Zero()});
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("trajectory csv round-trips", "[trajectory]") {
  KinematicsTrajectory traj = line_traj(0.25, 3.75, 50, Vec3(1.5, -2.25, 3.0),
                                        Vec3(-4.5, 0.125, 9.0));
  auto path = std::filesystem::temp_directory_path() / "simcor_traj_rt.csv";
  save_trajectory(traj, path);
  KinematicsTrajectory loaded = load_trajectory(path);
  REQUIRE(loaded.samples.size() == traj.samples.size());
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    CHECK(loaded.samples[i].t == traj.samples[i].t);
    CHECK(loaded.samples[i].p == traj.samples[i].p);
  }
  std::filesystem::remove(path);
}
