#include <catch2/catch_amalgamated.hpp>

#include "simcor/fem.hpp"

using namespace simcor;

namespace {

// Independent oracle: direct integration of the elasticity bilinear form via
// the full 4th-order isotropic tensor, no Voigt/B-matrix machinery.
Mat12 stiffness_oracle(const std::array<Vec3, 4>& rest, double lambda,
                       double mu) {
  Mat3 dm;
  dm.col(0) = rest[1] - rest[0];
  dm.col(1) = rest[2] - rest[0];
  dm.col(2) = rest[3] - rest[0];
  double volume = dm.determinant() / 6.0;
  Mat3 dm_inv_t = dm.inverse().transpose();
  std::array<Vec3, 4> g;
  g[1] = dm_inv_t.col(0);
  g[2] = dm_inv_t.col(1);
  g[3] = dm_inv_t.col(2);
  g[0] = -(g[1] + g[2] + g[3]);

  auto c_tensor = [&](int i, int j, int k, int l) {
    auto d = [](int a, int b) { return a == b ? 1.0 : 0.0; };
    return lambda * d(i, j) * d(k, l) +
           mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k));
  };

  Mat12 kmat = Mat12::Zero();
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          double sum = 0.0;
          for (int k = 0; k < 3; ++k)
            for (int l = 0; l < 3; ++l)
              sum += c_tensor(i, k, j, l) * g[a][k] * g[b][l];
          kmat(3 * a + i, 3 * b + j) = volume * sum;
        }
  return kmat;
}

std::array<Vec3, 4> random_tet(RngStream& rng, double scale = 10.0) {
  while (true) {
    std::array<Vec3, 4> tet;
    for (auto& v : tet)
      v = Vec3(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
               rng.uniform(-scale, scale));
    double vol = tet_signed_volume(tet[0], tet[1], tet[2], tet[3]);
    if (vol < 0) {
      std::swap(tet[1], tet[2]);
      vol = -vol;
    }
    if (vol > 0.05 * scale * scale * scale) return tet;
  }
}

GridMeshSpec phantom_spec() {
  GridMeshSpec spec;
  spec.nx = 13;
  spec.ny = 5;
  spec.nz = 5;
  spec.extents = Vec3(68.7, 35.8, 39.3);
  return spec;
}

}  // namespace

TEST_CASE("lame parameters from young/poisson", "[fem]") {
  MaterialParams m;
  m.young_modulus = 5e3;
  m.poisson_ratio = 0.45;
  auto [lambda, mu] = lame_parameters(m);
  CHECK(lambda == Catch::Approx(15517.2413793103).epsilon(1e-10));
  CHECK(mu == Catch::Approx(1724.13793103448).epsilon(1e-10));

  m.young_modulus = 1.0;
  m.poisson_ratio = 0.0;
  auto [l0, m0] = lame_parameters(m);
  CHECK(l0 == 0.0);
  CHECK(m0 == 0.5);

  m.poisson_ratio = 0.5;
  CHECK_THROWS_AS(lame_parameters(m), ConfigError);
  m.poisson_ratio = 0.45;
  m.young_modulus = 0.0;
  CHECK_THROWS_AS(lame_parameters(m), ConfigError);
}

TEST_CASE("element stiffness matches the direct-integration oracle", "[fem]") {
  std::array<Vec3, 4> unit_tet{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                               Vec3(0, 0, 1)};
  Mat12 k = element_stiffness(unit_tet, 0.0, 1.0);
  Mat12 oracle = stiffness_oracle(unit_tet, 0.0, 1.0);
  double scale = oracle.cwiseAbs().maxCoeff();
  CHECK((k - oracle).cwiseAbs().maxCoeff() <= 1e-10 * scale);

  RngStream rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto tet = random_tet(rng);
    double lambda = rng.uniform(0.0, 2e4);
    double mu = rng.uniform(10.0, 1e4);
    Mat12 kk = element_stiffness(tet, lambda, mu);
    Mat12 oo = stiffness_oracle(tet, lambda, mu);
    double s = oo.cwiseAbs().maxCoeff();
    CHECK((kk - oo).cwiseAbs().maxCoeff() <= 1e-10 * s);
  }
}

TEST_CASE("rigid translations are stiffness null modes", "[fem]") {
  RngStream rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto tet = random_tet(rng);
    Mat12 k = element_stiffness(tet, 7e3, 2e3);
    Vec12 translation;
    Vec3 t(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (int a = 0; a < 4; ++a) translation.segment<3>(3 * a) = t;
    CHECK((k * translation).cwiseAbs().maxCoeff() <=
          1e-9 * k.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("element stiffness scales linearly with geometry scale", "[fem]") {
  RngStream rng(6);
  auto tet = random_tet(rng);
  double s = 2.5;
  std::array<Vec3, 4> scaled;
  for (int a = 0; a < 4; ++a) scaled[a] = s * tet[a];
  Mat12 k = element_stiffness(tet, 3e3, 1e3);
  Mat12 ks = element_stiffness(scaled, 3e3, 1e3);
  CHECK((ks - s * k).cwiseAbs().maxCoeff() <= 1e-9 * ks.cwiseAbs().maxCoeff());
  // and agrees with the oracle at the scaled geometry
  Mat12 oo = stiffness_oracle(scaled, 3e3, 1e3);
  CHECK((ks - oo).cwiseAbs().maxCoeff() <= 1e-10 * oo.cwiseAbs().maxCoeff());
}

TEST_CASE("degenerate tets are rejected", "[fem]") {
  std::array<Vec3, 4> flat{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                           Vec3(1, 1, 0)};
  CHECK_THROWS_AS(element_stiffness(flat, 1e3, 1e3), GeometryError);
}

TEST_CASE("element stiffness is symmetric", "[fem]") {
  RngStream rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    auto tet = random_tet(rng);
    Mat12 k = element_stiffness(tet, 1e3, 5e2);
    CHECK((k - k.transpose()).cwiseAbs().maxCoeff() <=
          1e-12 * k.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("rest state with a distant probe is an equilibrium", "[fem]") {
  TetMesh mesh = build_grid_mesh(phantom_spec());
  MaterialParams material;
  SolverConfig solver;
  Simulator sim(mesh, material, solver);
  FemState state = sim.rest_state();
  ProbeSphere probe;  // far away by default
  sim.step(state, probe);
  for (int i = 0; i < mesh.vertex_count(); ++i)
    CHECK((state.positions[i] - mesh.vertices[i]).norm() < 1e-12);
}

TEST_CASE("one implicit step matches the scalar closed form", "[fem]") {
  double m = 0.5, k = 20.0, x0 = 0.3, v0 = -0.2;
  ImplicitSolveOptions opt;
  opt.dt = 0.01;
  opt.rayleigh_mass = 0.1;
  opt.rayleigh_stiffness = 0.1;
  opt.cg_tolerance = 1e-14;

  std::vector<double> mass{m}, kdiag{k}, vel{v0}, force{-k * x0};
  std::vector<char> fixed{0};
  auto apply_k = [&](const std::vector<double>& x, std::vector<double>& out) {
    out.assign(1, k * x[0]);
  };
  std::vector<double> dv =
      implicit_euler_delta_v(mass, apply_k, kdiag, vel, force, fixed, opt);
  double v1 = v0 + dv[0];

  double dt = opt.dt;
  double expected = (v0 - dt * (k / m) * x0) /
                    (1 + dt * opt.rayleigh_mass +
                     dt * (k / m) * (opt.rayleigh_stiffness + dt));
  CHECK(v1 == Catch::Approx(expected).epsilon(1e-8));
}

TEST_CASE("contact force follows the penalty law", "[fem]") {
  ProbeSphere probe;
  probe.center = Vec3(0, 0, 0);
  probe.radius = 5.0;
  probe.min_contact_distance = 0.5;
  probe.contact_stiffness = 1e5;

  // vertex 4.5 mm from center: overlap = 5.5 - 4.5 = 1 mm
  Vec3 vertex(0, 0, 4.5);
  Vec3 f = contact_force(probe, vertex);
  CHECK((f - Vec3(0, 0, 1e5)).norm() < 1e-9);

  // outside the inflated radius: no force, boundary is exclusive
  CHECK(contact_force(probe, Vec3(0, 0, 5.5)).norm() == 0.0);
  CHECK(contact_force(probe, Vec3(0, 0, 5.4999)).norm() > 0.0);
}

TEST_CASE("assembled stiffness is symmetric and PSD when constrained",
          "[fem]") {
  GridMeshSpec spec;
  spec.extents = Vec3(10, 10, 10);
  TetMesh mesh = build_grid_mesh(spec);  // 2x2x2 nodes
  MaterialParams material;
  Simulator sim(mesh, material, SolverConfig{});

  // deform a little so rotations are non-trivial
  std::vector<Vec3> positions = mesh.vertices;
  RngStream rng(99);
  for (auto& p : positions) p += rng.normal_vec3(0.2);
  sim.assemble(positions);

  const int n = 3 * mesh.vertex_count();
  Eigen::MatrixXd dense(n, n);
  std::vector<double> basis(n, 0.0), col(n);
  for (int j = 0; j < n; ++j) {
    basis[j] = 1.0;
    sim.apply_stiffness(basis, col);
    for (int i = 0; i < n; ++i) dense(i, j) = col[i];
    basis[j] = 0.0;
  }
  double scale = dense.cwiseAbs().maxCoeff();
  CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale);

  // restrict to free DOFs (bottom layer fixed)
  std::vector<int> free_dofs;
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    bool fixed = std::find(mesh.fixed_set.begin(), mesh.fixed_set.end(), i) !=
                 mesh.fixed_set.end();
    if (!fixed)
      for (int c = 0; c < 3; ++c) free_dofs.push_back(3 * i + c);
  }
  Eigen::MatrixXd reduced(free_dofs.size(), free_dofs.size());
  for (std::size_t a = 0; a < free_dofs.size(); ++a)
    for (std::size_t b = 0; b < free_dofs.size(); ++b)
      reduced(a, b) = dense(free_dofs[a], free_dofs[b]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(reduced);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-9 * scale);
}

TEST_CASE("uniform strain patch test reproduces constant stress", "[fem]") {
  TetMesh mesh = build_grid_mesh(phantom_spec());
  MaterialParams material;
  auto [lambda, mu] = lame_parameters(material);

  Mat3 strain;
  strain << 1e-3, 5e-5, 0.0,
            5e-5, -2e-4, 1e-4,
            0.0, 1e-4, 5e-4;  // symmetric small strain

  // prescribe u = strain * x on every boundary vertex
  std::vector<int> constrained;
  std::vector<Vec3> disp;
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    auto [gi, gj, gk] = mesh.grid_coords(i);
    bool boundary = gi == 0 || gi == mesh.spec.nx - 1 || gj == 0 ||
                    gj == mesh.spec.ny - 1 || gk == 0 || gk == mesh.spec.nz - 1;
    if (boundary) {
      constrained.push_back(i);
      disp.push_back(strain * mesh.vertices[i]);
    }
  }
  std::vector<Vec3> u =
      solve_static_displacement(mesh, material, constrained, disp);

  // interior displacements follow the same linear field
  for (int i = 0; i < mesh.vertex_count(); ++i) {
    Vec3 expected = strain * mesh.vertices[i];
    CHECK((u[i] - expected).norm() <= 1e-6 * (expected.norm() + 1e-9));
  }

  // stresses are constant and analytic
  Eigen::Matrix<double, 6, 1> voigt;
  voigt << strain(0, 0), strain(1, 1), strain(2, 2), 2 * strain(0, 1),
      2 * strain(1, 2), 2 * strain(0, 2);
  Eigen::Matrix<double, 6, 1> sigma_expected =
      elasticity_matrix(lambda, mu) * voigt;
  for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
    Eigen::Matrix<double, 6, 1> sigma =
        elasticity_matrix(lambda, mu) * element_strain(mesh, e, u);
    CHECK((sigma - sigma_expected).norm() <= 1e-6 * sigma_expected.norm());
  }
}

TEST_CASE("implicit stepping dissipates mechanical energy", "[fem]") {
  GridMeshSpec spec;
  spec.nx = 4;
  spec.ny = 3;
  spec.nz = 3;
  spec.extents = Vec3(20, 12, 12);
  TetMesh mesh = build_grid_mesh(spec);
  MaterialParams material;
  SolverConfig solver;
  Simulator sim(mesh, material, solver);

  FemState state = sim.rest_state();
  RngStream rng(12345);
  for (int i = 0; i < mesh.vertex_count(); ++i)
    state.velocities[i] = rng.normal_vec3(5.0);
  for (int vid : mesh.fixed_set) state.velocities[vid] = Vec3::Zero();

  ProbeSphere far_probe;
  double energy = sim.mechanical_energy(state);
  for (int s = 0; s < 100; ++s) {
    sim.step(state, far_probe);
    double next = sim.mechanical_energy(state);
    CHECK(next <= energy * (1 + 1e-9) + 1e-12);
    energy = next;
  }
}

TEST_CASE("replay of a distant constant trajectory stays at rest", "[fem]") {
  GridMeshSpec spec;
  spec.nx = 3;
  spec.ny = 3;
  spec.nz = 3;
  spec.extents = Vec3(20, 20, 20);
  TetMesh mesh = build_grid_mesh(spec);

  KinematicsTrajectory traj;
  traj.samples.push_back({0.0, Vec3(500, 500, 500)});
  traj.samples.push_back({1.0, Vec3(500, 500, 500)});
  FrameSchedule schedule = make_frame_schedule(traj, 30.0);

  ReplayResult result = run_replay(mesh, MaterialParams{}, SolverConfig{},
                                   ProbeSphere{}, traj, schedule);
  REQUIRE(result.frames.size() == schedule.frame_times.size());
  CHECK_FALSE(result.diverged);
  for (const auto& f : result.frames)
    for (int i = 0; i < mesh.vertex_count(); ++i)
      CHECK(f.positions[i] == mesh.vertices[i]);
}

TEST_CASE("probe center follows linear interpolation during substeps",
          "[fem]") {
  GridMeshSpec spec;
  spec.extents = Vec3(10, 10, 10);
  TetMesh mesh = build_grid_mesh(spec);

  KinematicsTrajectory traj;
  Vec3 p0(100, 0, 0), p1(200, 0, 0);
  traj.samples.push_back({0.0, p0});
  traj.samples.push_back({1.0, p1});
  FrameSchedule schedule;
  schedule.frame_times = {0.0, 0.5, 1.0};
  schedule.frame_rate = 2.0;

  std::vector<std::pair<double, Vec3>> trace;
  run_replay(mesh, MaterialParams{}, SolverConfig{}, ProbeSphere{}, traj,
             schedule, std::nullopt,
             [&](double t, const Vec3& c) { trace.emplace_back(t, c); });

  bool saw_midpoint = false;
  for (const auto& [t, c] : trace) {
    Vec3 expected = p0 + (p1 - p0) * t;
    CHECK((c - expected).norm() < 1e-9);
    if (std::abs(t - 0.5) < 1e-12 &&
        (c - (p0 + p1) * 0.5).norm() < 1e-12)
      saw_midpoint = true;
  }
  CHECK(saw_midpoint);
}

TEST_CASE("a softer phantom deflects more under the same poke", "[fem]") {
  GridMeshSpec spec;
  spec.nx = 9;
  spec.ny = 4;
  spec.nz = 4;
  spec.extents = Vec3(48, 24, 24);
  TetMesh mesh = build_grid_mesh(spec);

  // descend onto the top center, dwell, retract
  Vec3 top_center(24, 12, 24);
  KinematicsTrajectory traj;
  double hover = 24 + 5.0 + 2.0;  // above surface
  double depth = 24 + 5.0 - 3.0;  // 3 mm into the surface
  traj.samples.push_back({0.0, Vec3(24, 12, hover)});
  traj.samples.push_back({0.3, Vec3(24, 12, depth)});
  traj.samples.push_back({0.6, Vec3(24, 12, depth)});
  traj.samples.push_back({0.9, Vec3(24, 12, hover)});
  FrameSchedule schedule = make_frame_schedule(traj, 30.0);

  auto max_top_displacement = [&](double young) {
    MaterialParams material;
    material.young_modulus = young;
    ReplayResult result = run_replay(mesh, material, SolverConfig{},
                                     ProbeSphere{}, traj, schedule);
    REQUIRE_FALSE(result.diverged);
    double max_d = 0.0;
    for (const auto& f : result.frames)
      for (int vid : mesh.top_set)
        max_d = std::max(max_d,
                         (f.positions[vid] - mesh.vertices[vid]).norm());
    return max_d;
  };

  double soft = max_top_displacement(1e1);
  double stiff = max_top_displacement(5e3);
  CHECK(soft > stiff);
  CHECK(stiff > 0.0);  // contact actually happened
}

TEST_CASE("fixed vertices never move and replays are bit-identical", "[fem]") {
  GridMeshSpec spec;
  spec.nx = 5;
  spec.ny = 3;
  spec.nz = 3;
  spec.extents = Vec3(25, 12, 12);
  TetMesh mesh = build_grid_mesh(spec);

  KinematicsTrajectory traj;
  traj.samples.push_back({0.0, Vec3(12.5, 6, 22)});
  traj.samples.push_back({0.4, Vec3(12.5, 6, 14)});
  traj.samples.push_back({0.8, Vec3(12.5, 6, 22)});
  FrameSchedule schedule = make_frame_schedule(traj, 30.0);

  ReplayResult a = run_replay(mesh, MaterialParams{}, SolverConfig{},
                              ProbeSphere{}, traj, schedule);
  ReplayResult b = run_replay(mesh, MaterialParams{}, SolverConfig{},
                              ProbeSphere{}, traj, schedule);
  REQUIRE(a.frames.size() == b.frames.size());
  for (std::size_t k = 0; k < a.frames.size(); ++k)
    for (int i = 0; i < mesh.vertex_count(); ++i) {
      CHECK(a.frames[k].positions[i] == b.frames[k].positions[i]);
      // memcmp-level identity
      CHECK(std::memcmp(a.frames[k].positions[i].data(),
                        b.frames[k].positions[i].data(),
                        3 * sizeof(double)) == 0);
    }

  for (const auto& f : a.frames)
    for (int vid : mesh.fixed_set)
      CHECK((f.positions[vid] - mesh.vertices[vid]).norm() < 1e-12);
}

TEST_CASE("diverged runs refuse stepping and are flagged N/A in replay",
          "[fem]") {
  GridMeshSpec spec;
  spec.extents = Vec3(10, 10, 10);
  TetMesh mesh = build_grid_mesh(spec);
  Simulator sim(mesh, MaterialParams{}, SolverConfig{});
  FemState state = sim.rest_state();
  state.diverged = true;
  CHECK_THROWS_AS(sim.step(state, ProbeSphere{}), RefusedStepError);

  // a tiny divergence threshold turns any contact into an N/A run
  GridMeshSpec spec3;
  spec3.nx = spec3.ny = spec3.nz = 3;
  spec3.extents = Vec3(10, 10, 10);
  TetMesh mesh3 = build_grid_mesh(spec3);  // has a top-center vertex to hit
  SolverConfig touchy;
  touchy.divergence_threshold = 1e-4;
  KinematicsTrajectory traj;
  traj.samples.push_back({0.0, Vec3(5, 5, 16)});
  traj.samples.push_back({0.5, Vec3(5, 5, 9)});
  FrameSchedule schedule = make_frame_schedule(traj, 30.0);
  ReplayResult result = run_replay(mesh3, MaterialParams{}, touchy,
                                   ProbeSphere{}, traj, schedule);
  CHECK(result.diverged);
  CHECK(result.diverged_at_frame >= 0);
  CHECK(static_cast<long>(result.frames.size()) < result.total_frames);
}

TEST_CASE("replay rejects an empty trajectory", "[fem]") {
  GridMeshSpec spec;
  TetMesh mesh = build_grid_mesh(spec);
  KinematicsTrajectory empty;
  FrameSchedule schedule;
  schedule.frame_times = {0.0};
  CHECK_THROWS_AS(run_replay(mesh, MaterialParams{}, SolverConfig{},
                             ProbeSphere{}, empty, schedule),
                  ArgumentError);
}

TEST_CASE("replay frames round-trip through the run directory", "[fem]") {
  GridMeshSpec spec;
  spec.extents = Vec3(10, 10, 10);
  TetMesh mesh = build_grid_mesh(spec);
  KinematicsTrajectory traj;
  traj.samples.push_back({0.0, Vec3(5, 5, 18)});
  traj.samples.push_back({0.3, Vec3(5, 5, 12)});
  FrameSchedule schedule = make_frame_schedule(traj, 30.0);
  ReplayResult result = run_replay(mesh, MaterialParams{}, SolverConfig{},
                                   ProbeSphere{}, traj, schedule);

  auto dir = std::filesystem::temp_directory_path() / "simcor_replay_rt";
  std::filesystem::remove_all(dir);
  save_replay(result, MaterialParams{}, SolverConfig{}, dir);
  ReplayResult loaded = load_replay(dir);

  REQUIRE(loaded.frames.size() == result.frames.size());
  CHECK(loaded.total_frames == result.total_frames);
  CHECK(loaded.diverged == result.diverged);
  for (std::size_t k = 0; k < result.frames.size(); ++k) {
    CHECK(loaded.frames[k].frame_id == result.frames[k].frame_id);
    for (int i = 0; i < mesh.vertex_count(); ++i)
      CHECK(loaded.frames[k].positions[i] == result.frames[k].positions[i]);
  }
  std::filesystem::remove_all(dir);
}
