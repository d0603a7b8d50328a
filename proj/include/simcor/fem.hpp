#pragma once

#include "simcor/grid_mesh.hpp"
#include "simcor/trajectory.hpp"

#include <Eigen/SVD>

#include <functional>
#include <optional>

namespace simcor {

// ---------------------------------------------------------------------------
// Material and solver configuration. Scene units are mm / g / s, which makes
// pressures numerically equal to pascals and forces to micronewtons.

struct MaterialParams {
  double young_modulus = 5e3;   // Pa
  double poisson_ratio = 0.45;
  double density = 104.01 / (68.7 * 35.8 * 39.3);  // g/mm^3

  void validate() const {
    if (!(young_modulus > 0))
      throw ConfigError("young_modulus must be positive");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
      throw ConfigError("poisson_ratio must lie in [0, 0.5)");
    if (!(density > 0)) throw ConfigError("density must be positive");
  }
};

inline std::pair<double, double> lame_parameters(const MaterialParams& m) {
  m.validate();
  double e = m.young_modulus, nu = m.poisson_ratio;
  double lambda = e * nu / ((1 + nu) * (1 - 2 * nu));
  double mu = e / (2 * (1 + nu));
  return {lambda, mu};
}

struct SolverConfig {
  double dt = 1.0 / 300.0;          // s
  double rayleigh_mass = 0.1;
  double rayleigh_stiffness = 0.1;
  double cg_tolerance = 1e-8;       // relative residual
  int cg_max_iters = 1000;
  double divergence_threshold = 500.0;  // mm displacement from rest

  void validate() const {
    if (!(dt > 0)) throw ConfigError("dt must be positive");
    if (rayleigh_mass < 0 || rayleigh_stiffness < 0)
      throw ConfigError("rayleigh coefficients must be non-negative");
    if (!(divergence_threshold > 0))
      throw ConfigError("divergence_threshold must be positive");
    if (cg_max_iters < 1) throw ConfigError("cg_max_iters must be >= 1");
  }
};

struct ProbeSphere {
  Vec3 center{1e6, 1e6, 1e6};
  double radius = 5.0;                // mm
  double contact_stiffness = 1e5;     // uN per mm penetration
  double min_contact_distance = 0.5;  // mm

  void validate() const {
    if (!(radius > 0)) throw ConfigError("probe radius must be positive");
    if (min_contact_distance < 0)
      throw ConfigError("min_contact_distance must be non-negative");
  }
};

struct FemState {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  double time = 0.0;
  bool diverged = false;
};

struct RefusedStepError : Error {
  using Error::Error;
};

// Penalty force on a vertex: radially outward, proportional to penetration
// of the inflated radius (radius + min contact distance).
inline Vec3 contact_force(const ProbeSphere& probe, const Vec3& position) {
  Vec3 d = position - probe.center;
  double dist = d.norm();
  double overlap = probe.radius + probe.min_contact_distance - dist;
  if (overlap <= 0.0) return Vec3::Zero();
  Vec3 dir = dist > 1e-12 ? Vec3(d / dist) : Vec3(0, 0, 1);
  return probe.contact_stiffness * overlap * dir;
}

// ---------------------------------------------------------------------------
// Linear constant-strain tetrahedron.

using Mat12 = Eigen::Matrix<double, 12, 12>;
using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat6x12 = Eigen::Matrix<double, 6, 12>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Voigt order xx, yy, zz, xy, yz, zx with engineering shear strains.
inline Mat6 elasticity_matrix(double lambda, double mu) {
  Mat6 d = Mat6::Zero();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) d(i, j) = lambda;
    d(i, i) = lambda + 2 * mu;
    d(3 + i, 3 + i) = mu;
  }
  return d;
}

// Shape-function gradients and signed volume of a tet in its rest pose.
struct TetGeometry {
  Mat3 dm_inverse;
  double volume = 0.0;
  std::array<Vec3, 4> grad;  // gradients of the four shape functions
};

inline TetGeometry tet_geometry(const std::array<Vec3, 4>& rest) {
  Mat3 dm;
  dm.col(0) = rest[1] - rest[0];
  dm.col(1) = rest[2] - rest[0];
  dm.col(2) = rest[3] - rest[0];
  double vol = dm.determinant() / 6.0;
  if (vol <= 1e-12)
    throw GeometryError("degenerate tetrahedron (volume <= 0)");
  TetGeometry geom;
  geom.dm_inverse = dm.inverse();
  geom.volume = vol;
  Mat3 dm_inv_t = geom.dm_inverse.transpose();
  geom.grad[1] = dm_inv_t.col(0);
  geom.grad[2] = dm_inv_t.col(1);
  geom.grad[3] = dm_inv_t.col(2);
  geom.grad[0] = -(geom.grad[1] + geom.grad[2] + geom.grad[3]);
  return geom;
}

inline Mat6x12 strain_displacement_matrix(const TetGeometry& geom) {
  Mat6x12 b = Mat6x12::Zero();
  for (int a = 0; a < 4; ++a) {
    const Vec3& g = geom.grad[a];
    int c = 3 * a;
    b(0, c + 0) = g.x();
    b(1, c + 1) = g.y();
    b(2, c + 2) = g.z();
    b(3, c + 0) = g.y();
    b(3, c + 1) = g.x();
    b(4, c + 1) = g.z();
    b(4, c + 2) = g.y();
    b(5, c + 0) = g.z();
    b(5, c + 2) = g.x();
  }
  return b;
}

inline Mat12 element_stiffness(const std::array<Vec3, 4>& rest_vertices,
                               double lambda, double mu) {
  TetGeometry geom = tet_geometry(rest_vertices);
  Mat6x12 b = strain_displacement_matrix(geom);
  return geom.volume * b.transpose() * elasticity_matrix(lambda, mu) * b;
}

// ---------------------------------------------------------------------------
// Shared implicit-Euler velocity update:
//   (M + dt C + dt^2 K) dv = dt (f - (C + dt K) v),  C = alpha M + beta K
// solved by Jacobi-preconditioned CG on the free DOFs. apply_k must compute
// out = K x and may assume x is zero on fixed DOFs.

struct ImplicitSolveOptions {
  double dt = 1.0 / 300.0;
  double rayleigh_mass = 0.1;
  double rayleigh_stiffness = 0.1;
  double cg_tolerance = 1e-8;
  int cg_max_iters = 1000;
};

template <class ApplyK>
std::vector<double> implicit_euler_delta_v(
    const std::vector<double>& mass_diag, ApplyK&& apply_k,
    const std::vector<double>& k_diag, const std::vector<double>& velocity,
    const std::vector<double>& force, const std::vector<char>& fixed,
    const ImplicitSolveOptions& opt) {
  const std::size_t n = mass_diag.size();
  const double dt = opt.dt;
  const double am = 1.0 + dt * opt.rayleigh_mass;
  const double ak = dt * opt.rayleigh_stiffness + dt * dt;

  std::vector<double> kv(n, 0.0), tmp(n, 0.0), rhs(n, 0.0);
  std::vector<double> v_masked(velocity);
  for (std::size_t i = 0; i < n; ++i)
    if (fixed[i]) v_masked[i] = 0.0;
  apply_k(v_masked, kv);

  double b_norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (fixed[i]) continue;
    rhs[i] = dt * (force[i] - opt.rayleigh_mass * mass_diag[i] * velocity[i] -
                   (opt.rayleigh_stiffness + dt) * kv[i]);
    b_norm2 += rhs[i] * rhs[i];
  }

  std::vector<double> x(n, 0.0);
  if (b_norm2 == 0.0) return x;

  auto apply_a = [&](const std::vector<double>& in, std::vector<double>& out) {
    apply_k(in, out);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = fixed[i] ? 0.0 : am * mass_diag[i] * in[i] + ak * out[i];
  };

  std::vector<double> precond(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = am * mass_diag[i] + ak * k_diag[i];
    precond[i] = (fixed[i] || d <= 0.0) ? 0.0 : 1.0 / d;
  }

  std::vector<double> r(rhs), z(n), p(n), ap(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = precond[i] * r[i];
  p = z;
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];

  const double target2 = opt.cg_tolerance * opt.cg_tolerance * b_norm2;
  for (int iter = 0; iter < opt.cg_max_iters; ++iter) {
    apply_a(p, ap);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    if (!(pap > 0.0))
      throw SolverError("cg: non-positive curvature encountered");
    double alpha = rz / pap;
    double r_norm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      r_norm2 += r[i] * r[i];
    }
    if (r_norm2 <= target2) return x;
    double rz_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = precond[i] * r[i];
      rz_new += r[i] * z[i];
    }
    double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  double r_norm2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) r_norm2 += r[i] * r[i];
  throw SolverError("cg: no convergence after " +
                    std::to_string(opt.cg_max_iters) +
                    " iterations, residual " +
                    format_double(std::sqrt(r_norm2)));
}

// ---------------------------------------------------------------------------
// Corotational FEM simulator. One instance is single-threaded; run distinct
// instances in parallel instead.

class Simulator {
 public:
  Simulator(TetMesh mesh, MaterialParams material, SolverConfig solver)
      : mesh_(std::move(mesh)), material_(material), solver_(solver) {
    material_.validate();
    solver_.validate();
    auto [lambda, mu] = lame_parameters(material_);

    const int nv = mesh_.vertex_count();
    const auto& verts = mesh_.vertices;

    elements_.reserve(mesh_.tets.size());
    mass_.assign(nv, 0.0);
    for (const auto& t : mesh_.tets) {
      Element el;
      el.nodes = t;
      std::array<Vec3, 4> rest{verts[t[0]], verts[t[1]], verts[t[2]],
                               verts[t[3]]};
      el.geometry = tet_geometry(rest);
      el.stiffness = element_stiffness(rest, lambda, mu);
      for (int a = 0; a < 4; ++a)
        mass_[t[a]] += material_.density * el.geometry.volume / 4.0;
      elements_.push_back(std::move(el));
    }

    fixed_vertex_.assign(nv, 0);
    for (int vid : mesh_.fixed_set) fixed_vertex_[vid] = 1;

    build_sparsity();
  }

  const TetMesh& mesh() const { return mesh_; }
  const MaterialParams& material() const { return material_; }
  const SolverConfig& solver() const { return solver_; }
  const std::vector<double>& vertex_masses() const { return mass_; }

  FemState rest_state() const {
    FemState s;
    s.positions = mesh_.vertices;
    s.velocities.assign(mesh_.vertex_count(), Vec3::Zero());
    return s;
  }

  // One implicit Euler step of length dt (solver_.dt unless overridden).
  void step(FemState& state, const ProbeSphere& probe,
            const std::optional<Vec3>& gravity = std::nullopt,
            std::optional<double> dt_override = std::nullopt) {
    if (state.diverged)
      throw RefusedStepError("step refused: simulation has diverged");
    const int nv = mesh_.vertex_count();
    if (static_cast<int>(state.positions.size()) != nv ||
        static_cast<int>(state.velocities.size()) != nv)
      throw ArgumentError("state size does not match mesh");

    const double dt = dt_override.value_or(solver_.dt);
    assemble(state.positions);

    // external + elastic + contact forces
    std::vector<double> force(3 * nv, 0.0);
    for (const auto& el : elements_) {
      Vec12 local_disp;
      for (int a = 0; a < 4; ++a) {
        Vec3 u = el.rotation.transpose() * state.positions[el.nodes[a]] -
                 mesh_.vertices[el.nodes[a]];
        local_disp.segment<3>(3 * a) = u;
      }
      Vec12 f_local = el.stiffness * local_disp;
      for (int a = 0; a < 4; ++a) {
        Vec3 f = -el.rotation * f_local.segment<3>(3 * a);
        force[3 * el.nodes[a] + 0] += f.x();
        force[3 * el.nodes[a] + 1] += f.y();
        force[3 * el.nodes[a] + 2] += f.z();
      }
    }
    for (int i = 0; i < nv; ++i) {
      Vec3 fc = contact_force(probe, state.positions[i]);
      if (gravity) fc += mass_[i] * (*gravity);
      force[3 * i + 0] += fc.x();
      force[3 * i + 1] += fc.y();
      force[3 * i + 2] += fc.z();
    }

    std::vector<double> vel(3 * nv);
    std::vector<double> mdiag(3 * nv);
    std::vector<char> fixed(3 * nv);
    for (int i = 0; i < nv; ++i)
      for (int c = 0; c < 3; ++c) {
        vel[3 * i + c] = state.velocities[i][c];
        mdiag[3 * i + c] = mass_[i];
        fixed[3 * i + c] = fixed_vertex_[i];
      }

    ImplicitSolveOptions opt;
    opt.dt = dt;
    opt.rayleigh_mass = solver_.rayleigh_mass;
    opt.rayleigh_stiffness = solver_.rayleigh_stiffness;
    opt.cg_tolerance = solver_.cg_tolerance;
    opt.cg_max_iters = solver_.cg_max_iters;

    std::vector<double> dv = implicit_euler_delta_v(
        mdiag, [this](const std::vector<double>& x, std::vector<double>& out) {
          apply_stiffness(x, out);
        },
        k_diag_, vel, force, fixed, opt);

    bool bad = false;
    for (int i = 0; i < nv; ++i) {
      if (fixed_vertex_[i]) {
        state.velocities[i] = Vec3::Zero();
        state.positions[i] = mesh_.vertices[i];
        continue;
      }
      for (int c = 0; c < 3; ++c) state.velocities[i][c] += dv[3 * i + c];
      state.positions[i] += dt * state.velocities[i];
      if (!state.positions[i].allFinite() ||
          (state.positions[i] - mesh_.vertices[i]).norm() >
              solver_.divergence_threshold)
        bad = true;
    }
    state.time += dt;
    if (bad) state.diverged = true;
  }

  // K x for the most recent assembly (corotational tangent).
  void apply_stiffness(const std::vector<double>& x,
                       std::vector<double>& out) const {
    const int nv = mesh_.vertex_count();
    out.assign(3 * nv, 0.0);
    for (int i = 0; i < nv; ++i) {
      Eigen::Vector3d acc = Eigen::Vector3d::Zero();
      for (int s = row_start_[i]; s < row_start_[i + 1]; ++s) {
        const Mat3& block = values_[s];
        int j = col_index_[s];
        acc += block * Eigen::Vector3d(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
      }
      out[3 * i + 0] = acc.x();
      out[3 * i + 1] = acc.y();
      out[3 * i + 2] = acc.z();
    }
  }

  // Assemble the corotational tangent at given positions (exposed for the
  // symmetry/PSD checks and the static solve).
  void assemble(const std::vector<Vec3>& positions) {
    for (auto& v : values_) v.setZero();
    for (std::size_t e = 0; e < elements_.size(); ++e) {
      Element& el = elements_[e];
      Mat3 ds;
      ds.col(0) = positions[el.nodes[1]] - positions[el.nodes[0]];
      ds.col(1) = positions[el.nodes[2]] - positions[el.nodes[0]];
      ds.col(2) = positions[el.nodes[3]] - positions[el.nodes[0]];
      Mat3 f = ds * el.geometry.dm_inverse;
      el.rotation = polar_rotation(f);

      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          Mat3 block = el.rotation * el.stiffness.block<3, 3>(3 * a, 3 * b) *
                       el.rotation.transpose();
          values_[element_slots_[e][a][b]] += block;
        }
    }
    const int nv = mesh_.vertex_count();
    k_diag_.assign(3 * nv, 0.0);
    for (int i = 0; i < nv; ++i)
      for (int s = row_start_[i]; s < row_start_[i + 1]; ++s)
        if (col_index_[s] == i)
          for (int c = 0; c < 3; ++c) k_diag_[3 * i + c] = values_[s](c, c);
  }

  // Corotational elastic energy plus kinetic energy; diagnostic only.
  double mechanical_energy(const FemState& state) const {
    double kinetic = 0.0;
    for (int i = 0; i < mesh_.vertex_count(); ++i)
      kinetic += 0.5 * mass_[i] * state.velocities[i].squaredNorm();
    double elastic = 0.0;
    for (const auto& el : elements_) {
      Mat3 ds;
      ds.col(0) = state.positions[el.nodes[1]] - state.positions[el.nodes[0]];
      ds.col(1) = state.positions[el.nodes[2]] - state.positions[el.nodes[0]];
      ds.col(2) = state.positions[el.nodes[3]] - state.positions[el.nodes[0]];
      Mat3 f = ds * el.geometry.dm_inverse;
      Mat3 r = polar_rotation(f);
      Vec12 local_disp;
      for (int a = 0; a < 4; ++a)
        local_disp.segment<3>(3 * a) =
            r.transpose() * state.positions[el.nodes[a]] -
            mesh_.vertices[el.nodes[a]];
      elastic += 0.5 * local_disp.dot(el.stiffness * local_disp);
    }
    return kinetic + elastic;
  }

  static Mat3 polar_rotation(const Mat3& f) {
    Eigen::JacobiSVD<Mat3> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    Mat3 d = Mat3::Identity();
    if ((u * v.transpose()).determinant() < 0) d(2, 2) = -1.0;
    return u * d * v.transpose();
  }

 private:
  struct Element {
    TetIndices nodes;
    TetGeometry geometry;
    Mat12 stiffness;
    Mat3 rotation = Mat3::Identity();
  };

  void build_sparsity() {
    const int nv = mesh_.vertex_count();
    std::vector<std::vector<int>> neighbors(nv);
    for (const auto& t : mesh_.tets)
      for (int a : t)
        for (int b : t) neighbors[a].push_back(b);
    row_start_.assign(nv + 1, 0);
    for (int i = 0; i < nv; ++i) {
      auto& n = neighbors[i];
      std::sort(n.begin(), n.end());
      n.erase(std::unique(n.begin(), n.end()), n.end());
      row_start_[i + 1] = row_start_[i] + static_cast<int>(n.size());
    }
    col_index_.reserve(row_start_[nv]);
    for (int i = 0; i < nv; ++i)
      for (int j : neighbors[i]) col_index_.push_back(j);
    values_.assign(col_index_.size(), Mat3::Zero());

    auto slot = [&](int i, int j) {
      for (int s = row_start_[i]; s < row_start_[i + 1]; ++s)
        if (col_index_[s] == j) return s;
      throw Error("internal: missing sparsity slot");
    };
    element_slots_.resize(mesh_.tets.size());
    for (std::size_t e = 0; e < mesh_.tets.size(); ++e)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          element_slots_[e][a][b] =
              slot(mesh_.tets[e][a], mesh_.tets[e][b]);
  }

  TetMesh mesh_;
  MaterialParams material_;
  SolverConfig solver_;
  std::vector<Element> elements_;
  std::vector<double> mass_;
  std::vector<char> fixed_vertex_;

  std::vector<int> row_start_;
  std::vector<int> col_index_;
  std::vector<Mat3> values_;
  std::vector<std::array<std::array<int, 4>, 4>> element_slots_;
  std::vector<double> k_diag_;
};

// Spec-shaped single step over a fresh simulator; prefer Simulator for runs.
inline FemState step(const FemState& state, const TetMesh& mesh,
                     const MaterialParams& material, const SolverConfig& solver,
                     const ProbeSphere& probe,
                     const std::optional<Vec3>& gravity = std::nullopt) {
  Simulator sim(mesh, material, solver);
  FemState next = state;
  sim.step(next, probe, gravity);
  return next;
}

// ---------------------------------------------------------------------------
// Trajectory replay: advance at dt, move the probe along the interpolated
// trajectory, and record vertex positions at each scheduled (labeled) frame.

struct ReplayFrame {
  long frame_id = 0;
  double time = 0.0;
  std::vector<Vec3> positions;
};

struct ReplayResult {
  std::vector<ReplayFrame> frames;
  long total_frames = 0;
  bool diverged = false;
  long diverged_at_frame = -1;  // first absent frame when diverged
};

using SubstepObserver = std::function<void(double time, const Vec3& center)>;

inline ReplayResult run_replay(const TetMesh& mesh,
                               const MaterialParams& material,
                               const SolverConfig& solver,
                               const ProbeSphere& probe_template,
                               const KinematicsTrajectory& trajectory,
                               const FrameSchedule& schedule,
                               const std::optional<Vec3>& gravity = std::nullopt,
                               const SubstepObserver& observer = {}) {
  if (trajectory.samples.empty())
    throw ArgumentError("run_replay needs a non-empty trajectory");
  trajectory.validate();

  Simulator sim(mesh, material, solver);
  FemState state = sim.rest_state();
  state.time = trajectory.start_time();

  ReplayResult result;
  result.total_frames = static_cast<long>(schedule.frame_times.size());

  ProbeSphere probe = probe_template;
  for (long k = 0; k < result.total_frames; ++k) {
    double target = schedule.frame_times[k];
    try {
      while (state.time < target - 1e-9) {
        double dt = std::min(solver.dt, target - state.time);
        probe.center = interpolate(trajectory, state.time + dt);
        if (observer) observer(state.time + dt, probe.center);
        sim.step(state, probe, gravity, dt);
        if (state.diverged) break;
      }
    } catch (const SolverError&) {
      state.diverged = true;  // report as a non-converged (N/A) run
    }
    if (state.diverged) {
      result.diverged = true;
      result.diverged_at_frame = k;
      break;
    }
    result.frames.push_back({k, target, state.positions});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Static linear solve (small-strain, rotations = identity): given prescribed
// displacements on a set of vertices, solve K u = 0 on the rest. Used by the
// uniform-strain patch check and exposed through the verify command.

inline std::vector<Vec3> solve_static_displacement(
    const TetMesh& mesh, const MaterialParams& material,
    const std::vector<int>& constrained_ids,
    const std::vector<Vec3>& constrained_disp, double cg_tolerance = 1e-12,
    int cg_max_iters = 10000) {
  if (constrained_ids.size() != constrained_disp.size())
    throw ArgumentError("constraint ids/displacements length mismatch");
  SolverConfig solver;
  Simulator sim(mesh, material, solver);
  sim.assemble(mesh.vertices);  // rest tangent, rotations identity

  const int nv = mesh.vertex_count();
  std::vector<char> fixed(3 * nv, 0);
  std::vector<double> u_fixed(3 * nv, 0.0);
  for (std::size_t i = 0; i < constrained_ids.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      fixed[3 * constrained_ids[i] + c] = 1;
      u_fixed[3 * constrained_ids[i] + c] = constrained_disp[i][c];
    }

  // rhs = -K u_fixed restricted to free DOFs
  std::vector<double> ku(3 * nv, 0.0);
  sim.apply_stiffness(u_fixed, ku);
  std::vector<double> rhs(3 * nv, 0.0);
  double b_norm2 = 0.0;
  for (int i = 0; i < 3 * nv; ++i) {
    if (!fixed[i]) rhs[i] = -ku[i];
    b_norm2 += rhs[i] * rhs[i];
  }

  std::vector<double> x(3 * nv, 0.0), r(rhs), p(3 * nv), ap(3 * nv);
  if (b_norm2 > 0.0) {
    auto apply_a = [&](const std::vector<double>& in,
                       std::vector<double>& out) {
      std::vector<double> masked(in);
      for (int i = 0; i < 3 * nv; ++i)
        if (fixed[i]) masked[i] = 0.0;
      sim.apply_stiffness(masked, out);
      for (int i = 0; i < 3 * nv; ++i)
        if (fixed[i]) out[i] = 0.0;
    };
    p = r;
    double rr = b_norm2;
    const double target2 = cg_tolerance * cg_tolerance * b_norm2;
    int iter = 0;
    for (; iter < cg_max_iters; ++iter) {
      apply_a(p, ap);
      double pap = 0.0;
      for (int i = 0; i < 3 * nv; ++i) pap += p[i] * ap[i];
      if (!(pap > 0.0)) throw SolverError("static solve: lost curvature");
      double alpha = rr / pap;
      double rr_new = 0.0;
      for (int i = 0; i < 3 * nv; ++i) {
        x[i] += alpha * p[i];
        r[i] -= alpha * ap[i];
        rr_new += r[i] * r[i];
      }
      if (rr_new <= target2) break;
      double beta = rr_new / rr;
      rr = rr_new;
      for (int i = 0; i < 3 * nv; ++i) p[i] = r[i] + beta * p[i];
    }
    if (iter == cg_max_iters)
      throw SolverError("static solve: cg did not converge");
  }

  std::vector<Vec3> u(nv);
  for (int i = 0; i < nv; ++i) {
    for (int c = 0; c < 3; ++c)
      u[i][c] = fixed[3 * i + c] ? u_fixed[3 * i + c] : x[3 * i + c];
  }
  return u;
}

// Voigt strain of one element under a displacement field.
inline Eigen::Matrix<double, 6, 1> element_strain(
    const TetMesh& mesh, std::size_t element_index,
    const std::vector<Vec3>& displacements) {
  const auto& t = mesh.tets[element_index];
  std::array<Vec3, 4> rest{mesh.vertices[t[0]], mesh.vertices[t[1]],
                           mesh.vertices[t[2]], mesh.vertices[t[3]]};
  TetGeometry geom = tet_geometry(rest);
  Mat6x12 b = strain_displacement_matrix(geom);
  Vec12 u;
  for (int a = 0; a < 4; ++a) u.segment<3>(3 * a) = displacements[t[a]];
  return b * u;
}

// ---------------------------------------------------------------------------
// Frame output: per-run directory with frames.csv, one positions file per
// frame, and a run_meta record.

inline void save_replay(const ReplayResult& result,
                        const MaterialParams& material,
                        const SolverConfig& solver,
                        const std::filesystem::path& dir) {
  FrameManifest manifest;
  for (const auto& f : result.frames)
    manifest.entries.push_back({f.frame_id, f.time});
  save_frame_manifest(manifest, dir / "frames.csv");

  char name[32];
  for (const auto& f : result.frames) {
    std::snprintf(name, sizeof(name), "frame_%06ld.txt", f.frame_id);
    auto out = open_output(dir / name);
    for (const auto& p : f.positions)
      out << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
          << format_double(p.z()) << '\n';
  }

  auto meta = open_output(dir / "run_meta");
  meta << "young_modulus " << format_double(material.young_modulus) << '\n'
       << "poisson_ratio " << format_double(material.poisson_ratio) << '\n'
       << "density " << format_double(material.density) << '\n'
       << "dt " << format_double(solver.dt) << '\n'
       << "rayleigh_mass " << format_double(solver.rayleigh_mass) << '\n'
       << "rayleigh_stiffness " << format_double(solver.rayleigh_stiffness)
       << '\n'
       << "cg_tolerance " << format_double(solver.cg_tolerance) << '\n'
       << "cg_max_iters " << solver.cg_max_iters << '\n'
       << "divergence_threshold "
       << format_double(solver.divergence_threshold) << '\n'
       << "total_frames " << result.total_frames << '\n'
       << "diverged " << (result.diverged ? 1 : 0) << '\n'
       << "diverged_at_frame " << result.diverged_at_frame << '\n';
}

inline ReplayResult load_replay(const std::filesystem::path& dir) {
  ReplayResult result;
  FrameManifest manifest = load_frame_manifest(dir / "frames.csv");
  char name[32];
  for (const auto& e : manifest.entries) {
    std::snprintf(name, sizeof(name), "frame_%06ld.txt", e.frame_id);
    auto in = open_input(dir / name);
    ReplayFrame frame{e.frame_id, e.time, {}};
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (line.empty()) continue;
      auto cols = split(line, ' ');
      cols.erase(
          std::remove_if(cols.begin(), cols.end(),
                         [](const std::string& s) { return s.empty(); }),
          cols.end());
      if (cols.size() != 3) throw IoError("frame row needs x y z: " + line);
      frame.positions.emplace_back(parse_double(cols[0]), parse_double(cols[1]),
                                   parse_double(cols[2]));
    }
    result.frames.push_back(std::move(frame));
  }
  // run_meta is informational; divergence flags live there
  auto meta = open_input(dir / "run_meta");
  std::string key;
  double value;
  while (meta >> key >> value) {
    if (key == "diverged") result.diverged = value != 0;
    if (key == "diverged_at_frame")
      result.diverged_at_frame = static_cast<long>(value);
    if (key == "total_frames") result.total_frames = static_cast<long>(value);
  }
  return result;
}

}  // namespace simcor
