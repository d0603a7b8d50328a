#pragma once

#include "simcor/fem.hpp"
#include "simcor/pointcloud.hpp"
#include "simcor/registration.hpp"

namespace simcor {

// Stand-in for the physical rig: scripted probe motion, a truth-FEM replay,
// and noisy, occluded, density-matched synthetic depth clouds as labels.

struct GenerationError : Error {
  using Error::Error;
};

struct SceneTruth {
  MaterialParams true_material;
  RigidTransform camera_transform;  // sim -> camera
  double noise_sigma = 2.0;         // mm, the depth sensor accuracy
  double density = 16.5;            // points per mm^2 on the top surface
  double occlusion_radius = 5.0;    // mm around the probe's vertical shadow

  void validate() const {
    true_material.validate();
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be >= 0");
    if (!(density > 0)) throw ConfigError("density must be positive");
    if (occlusion_radius < 0)
      throw ConfigError("occlusion_radius must be >= 0");
  }
};

// One poke: the probe center eases from `start` to `target`, then `depth` mm
// beyond it along the same axis, dwells, and retracts.
struct Poke {
  Vec3 start = Vec3::Zero();
  Vec3 target = Vec3::Zero();
  double depth = 0.0;     // mm past the target along the approach axis
  double duration = 2.0;  // s, covering approach + dwell + retract
};

struct ProbeScript {
  enum class Face { top, side };
  std::vector<Poke> pokes;
  Face face = Face::top;
  double travel_speed = 30.0;  // mm/s between pokes
  double jitter_sigma = 0.0;   // mm of seeded per-sample jitter
  Vec3 workspace_min{-200, -200, -200};
  Vec3 workspace_max{200, 200, 200};

  void validate(const Vec3& phantom_extents) const {
    if (pokes.empty()) throw ScriptError("script has no pokes");
    for (const auto& poke : pokes) {
      if (!(poke.duration > 0)) throw ScriptError("poke duration must be > 0");
      if (poke.depth < 0) throw ScriptError("poke depth must be >= 0");
      Vec3 dir = poke.target - poke.start;
      if (dir.norm() < 1e-9)
        throw ScriptError("poke start and target coincide");
      dir.normalize();
      int axis = 0;
      dir.cwiseAbs().maxCoeff(&axis);
      if (poke.depth >= phantom_extents[axis])
        throw ScriptError("poke depth exceeds the phantom thickness");
      Vec3 end = poke.target + poke.depth * dir;
      for (const Vec3* p : {&poke.start, &poke.target, &end})
        if ((p->array() < workspace_min.array()).any() ||
            (p->array() > workspace_max.array()).any())
          throw ScriptError("poke leaves the workspace bounds");
    }
  }
};

namespace detail {

inline double cosine_ease(double u) { return 0.5 * (1.0 - std::cos(M_PI * u)); }

struct MotionSegment {
  double t0 = 0.0, t1 = 0.0;
  Vec3 from = Vec3::Zero(), to = Vec3::Zero();

  Vec3 at(double t) const {
    if (t1 <= t0) return to;
    double u = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
    return from + cosine_ease(u) * (to - from);
  }
};

}  // namespace detail

inline KinematicsTrajectory generate_trajectory(const ProbeScript& script,
                                                const Vec3& phantom_extents,
                                                double rate,
                                                std::uint64_t seed) {
  script.validate(phantom_extents);
  if (!(rate > 0)) throw ArgumentError("sample rate must be positive");

  std::vector<detail::MotionSegment> segments;
  double t = 0.0;
  Vec3 cursor = script.pokes.front().start;
  for (const auto& poke : script.pokes) {
    double travel = (poke.start - cursor).norm() / script.travel_speed;
    if (travel > 1e-9) {
      segments.push_back({t, t + travel, cursor, poke.start});
      t += travel;
    }
    Vec3 dir = (poke.target - poke.start).normalized();
    Vec3 end = poke.target + poke.depth * dir;
    double approach = 0.4 * poke.duration;
    double dwell = 0.2 * poke.duration;
    segments.push_back({t, t + approach, poke.start, end});
    segments.push_back({t + approach, t + approach + dwell, end, end});
    segments.push_back(
        {t + approach + dwell, t + poke.duration, end, poke.start});
    t += poke.duration;
    cursor = poke.start;
  }

  RngStream rng(seed);
  KinematicsTrajectory traj;
  long n = static_cast<long>(std::floor(t * rate)) + 1;
  traj.samples.reserve(n);
  std::size_t seg = 0;
  for (long k = 0; k < n; ++k) {
    double tk = static_cast<double>(k) / rate;
    while (seg + 1 < segments.size() && tk > segments[seg].t1) ++seg;
    Vec3 p = segments[seg].at(tk);
    if (script.jitter_sigma > 0) p += rng.normal_vec3(script.jitter_sigma);
    traj.samples.push_back({tk, p});
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Depth-camera stand-in. Samples the top surface above the target density,
// thins, carves the probe's vertical shadow, adds isotropic noise, and moves
// the result into the camera frame.

inline PointCloud render_observation(const std::vector<Vec3>& positions,
                                     const TetMesh& mesh,
                                     const SceneTruth& truth,
                                     const Vec3& probe_center,
                                     std::uint64_t seed) {
  truth.validate();
  std::vector<QuadIndices> quads = mesh.top_quads();
  double area = 0.0;
  for (const auto& q : quads) {
    const Vec3 &a = positions[q[0]], &b = positions[q[1]],
               &c = positions[q[2]], &d = positions[q[3]];
    area += 0.5 * ((b - a).cross(c - a)).norm();
    area += 0.5 * ((c - a).cross(d - a)).norm();
  }
  double target_count = truth.density * area;
  int factor = static_cast<int>(
      std::ceil(std::sqrt(target_count / static_cast<double>(quads.size()))));
  factor = std::max(factor, 1);
  if (factor > 512)
    throw GenerationError(
        "target density needs an unreasonable super-sampling factor");

  SurfaceSamples samples = supersample_quads(quads, positions, factor);
  if (static_cast<double>(samples.size()) < target_count)
    ++factor, samples = supersample_quads(quads, positions, factor);

  RngStream rng(seed);
  double keep = target_count / static_cast<double>(samples.size());
  std::vector<Vec3> points;
  points.reserve(static_cast<std::size_t>(target_count) + 16);
  for (const auto& p : samples.points) {
    if (keep < 1.0 && rng.uniform01() >= keep) continue;
    if (truth.occlusion_radius > 0.0) {
      double dx = p.x() - probe_center.x();
      double dy = p.y() - probe_center.y();
      if (std::sqrt(dx * dx + dy * dy) < truth.occlusion_radius) continue;
    }
    Vec3 noisy = p;
    if (truth.noise_sigma > 0) noisy += rng.normal_vec3(truth.noise_sigma);
    points.push_back(truth.camera_transform.apply(noisy));
  }
  if (points.empty())
    throw GenerationError("observation rendering produced no points");
  return PointCloud(std::move(points));
}

// ---------------------------------------------------------------------------
// Script synthesis for dataset sequences: seeded pokes against the top or a
// side face, probe center aimed `depth` past the just-touching position.

inline ProbeScript make_random_script(const TetMesh& mesh,
                                      const ProbeSphere& probe, int n_pokes,
                                      double depth_min, double depth_max,
                                      double poke_duration,
                                      double side_fraction, RngStream& rng) {
  const Vec3 lo = mesh.spec.origin;
  const Vec3 hi = mesh.spec.origin + mesh.spec.extents;
  const double touch = probe.radius + probe.min_contact_distance;
  const double hover = touch + 12.0;

  ProbeScript script;
  script.jitter_sigma = 0.02;  // small seeded kinematics noise
  script.workspace_min = lo - Vec3(100, 100, 100);
  script.workspace_max = hi + Vec3(100, 100, 100);
  for (int k = 0; k < n_pokes; ++k) {
    Poke poke;
    bool side = rng.uniform01() < side_fraction;
    double margin = 0.18;
    if (!side) {
      double x = rng.uniform(lo.x() + margin * (hi.x() - lo.x()),
                             hi.x() - margin * (hi.x() - lo.x()));
      double y = rng.uniform(lo.y() + margin * (hi.y() - lo.y()),
                             hi.y() - margin * (hi.y() - lo.y()));
      poke.target = Vec3(x, y, hi.z() + touch);
      poke.start = Vec3(x, y, hi.z() + hover);
    } else {
      double x = rng.uniform(lo.x() + margin * (hi.x() - lo.x()),
                             hi.x() - margin * (hi.x() - lo.x()));
      double z = rng.uniform(lo.z() + 0.45 * (hi.z() - lo.z()),
                             hi.z() - 0.1 * (hi.z() - lo.z()));
      bool near_side = rng.uniform01() < 0.5;
      double y_face = near_side ? lo.y() : hi.y();
      double out = near_side ? -1.0 : 1.0;
      poke.target = Vec3(x, y_face + out * touch, z);
      poke.start = Vec3(x, y_face + out * hover, z);
    }
    poke.depth = rng.uniform(depth_min, depth_max);
    poke.duration = poke_duration;
    script.pokes.push_back(poke);
  }
  return script;
}

// ---------------------------------------------------------------------------
// Dataset assembly: per sequence a trajectory (exported in the robot frame),
// the truth-FEM frames, and rendered clouds (camera frame). The split follows
// the capture protocol: the first, longer sequence validates, the next two
// test, the rest train.

struct DatasetSpec {
  int n_sequences = 13;
  double base_duration = 10.0;  // s per poke sequence; sequence 0 runs 2x
  int pokes_per_sequence = 3;
  double depth_min = 2.5;  // mm past touch
  double depth_max = 6.0;
  double side_fraction = 0.25;
  double capture_rate = 1000.0;  // Hz robot kinematics
  double frame_rate = 30.0;      // Hz camera
  std::uint64_t seed = 7;
  RigidTransform robot_transform;  // sim -> robot frame for exported data

  void validate() const {
    if (n_sequences < 3)
      throw DatasetError("need at least 3 sequences for val/test/train");
    if (!(base_duration > 0) || pokes_per_sequence < 1)
      throw DatasetError("invalid sequence timing");
    if (!(capture_rate > 0) || !(frame_rate > 0))
      throw DatasetError("rates must be positive");
    if (depth_min > depth_max || depth_min < 0)
      throw DatasetError("invalid depth range");
  }
};

struct SequenceInfo {
  std::string name;
  std::string split;  // train | val | test
  std::uint64_t seed = 0;
  double duration = 0.0;
  long n_frames = 0;
};

struct DatasetManifest {
  std::uint64_t global_seed = 0;
  double frame_rate = 30.0;
  double capture_rate = 1000.0;
  double true_young = 0.0;
  double noise_sigma = 0.0;
  double density = 0.0;
  double occlusion_radius = 0.0;
  std::vector<SequenceInfo> sequences;
};

inline void save_manifest(const DatasetManifest& manifest,
                          const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "dataset v1\n";
  out << "global_seed " << manifest.global_seed << '\n';
  out << "frame_rate " << format_double(manifest.frame_rate) << '\n';
  out << "capture_rate " << format_double(manifest.capture_rate) << '\n';
  out << "true_young " << format_double(manifest.true_young) << '\n';
  out << "noise_sigma " << format_double(manifest.noise_sigma) << '\n';
  out << "density " << format_double(manifest.density) << '\n';
  out << "occlusion_radius " << format_double(manifest.occlusion_radius)
      << '\n';
  for (const auto& s : manifest.sequences)
    out << "sequence " << s.name << " split " << s.split << " seed " << s.seed
        << " duration " << format_double(s.duration) << " frames "
        << s.n_frames << '\n';
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line) || trim(line) != "dataset v1")
    throw IoError("not a dataset v1 manifest: " + path.string());
  DatasetManifest manifest;
  while (std::getline(in, line)) {
    std::istringstream ss(trim(line));
    std::string key;
    ss >> key;
    if (key.empty()) continue;
    if (key == "global_seed") ss >> manifest.global_seed;
    else if (key == "frame_rate") ss >> manifest.frame_rate;
    else if (key == "capture_rate") ss >> manifest.capture_rate;
    else if (key == "true_young") ss >> manifest.true_young;
    else if (key == "noise_sigma") ss >> manifest.noise_sigma;
    else if (key == "density") ss >> manifest.density;
    else if (key == "occlusion_radius") ss >> manifest.occlusion_radius;
    else if (key == "sequence") {
      SequenceInfo s;
      std::string tag;
      ss >> s.name >> tag >> s.split >> tag >> s.seed >> tag >> s.duration >>
          tag >> s.n_frames;
      manifest.sequences.push_back(s);
    } else {
      throw IoError("unknown manifest key: " + key);
    }
  }
  return manifest;
}

inline std::string sequence_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "seq%02d", index);
  return buf;
}

// Phantom corners in the sim frame, exported with their robot-frame images
// for the corner calibration step.
inline CorrespondenceSet phantom_corner_correspondences(
    const TetMesh& mesh, const RigidTransform& robot_transform) {
  const Vec3 lo = mesh.spec.origin;
  const Vec3 hi = mesh.spec.origin + mesh.spec.extents;
  CorrespondenceSet set;
  for (const Vec3& corner :
       {Vec3(lo.x(), lo.y(), hi.z()), Vec3(hi.x(), lo.y(), hi.z()),
        Vec3(hi.x(), hi.y(), hi.z()), Vec3(lo.x(), hi.y(), hi.z())}) {
    set.source.push_back(robot_transform.apply(corner));  // robot frame
    set.target.push_back(corner);                         // sim frame
  }
  return set;
}

inline DatasetManifest make_dataset(const TetMesh& mesh,
                                    const SceneTruth& truth,
                                    const SolverConfig& solver,
                                    const ProbeSphere& probe,
                                    const DatasetSpec& spec,
                                    const std::filesystem::path& out_dir) {
  spec.validate();
  truth.validate();

  DatasetManifest manifest;
  manifest.global_seed = spec.seed;
  manifest.frame_rate = spec.frame_rate;
  manifest.capture_rate = spec.capture_rate;
  manifest.true_young = truth.true_material.young_modulus;
  manifest.noise_sigma = truth.noise_sigma;
  manifest.density = truth.density;
  manifest.occlusion_radius = truth.occlusion_radius;

  std::filesystem::create_directories(out_dir);
  save_transform(truth.camera_transform, out_dir / "camera_transform.txt");
  CorrespondenceSet corners =
      phantom_corner_correspondences(mesh, spec.robot_transform);
  save_correspondences(corners, out_dir / "corners.csv");

  // the consumer-side calibration: robot -> sim from the corner file
  RigidTransform robot_to_sim = fit_rigid(corners.source, corners.target);

  for (int idx = 0; idx < spec.n_sequences; ++idx) {
    SequenceInfo info;
    info.name = sequence_name(idx);
    info.split = idx == 0 ? "val" : (idx <= 2 ? "test" : "train");
    info.seed = RngStream::mix_seed(spec.seed, static_cast<std::uint64_t>(idx));
    double duration = spec.base_duration * (idx == 0 ? 2.0 : 1.0);
    info.duration = duration;

    RngStream rng(info.seed);
    int pokes = spec.pokes_per_sequence * (idx == 0 ? 2 : 1);
    ProbeScript script = make_random_script(
        mesh, probe, pokes, spec.depth_min, spec.depth_max,
        duration / pokes, spec.side_fraction, rng);
    KinematicsTrajectory sim_traj = generate_trajectory(
        script, mesh.spec.extents, spec.capture_rate, rng.next_u64());

    // export in the robot frame; consumers calibrate via corners.csv
    KinematicsTrajectory robot_traj = sim_traj;
    for (auto& s : robot_traj.samples) s.p = spec.robot_transform.apply(s.p);
    auto seq_dir = out_dir / info.name;
    save_trajectory(robot_traj, seq_dir / "trajectory.csv");

    // replay through the same calibration path the consumers use
    KinematicsTrajectory replay_traj = robot_traj;
    for (auto& s : replay_traj.samples) s.p = robot_to_sim.apply(s.p);
    KinematicsTrajectory frames_traj =
        subsample_to_frames(replay_traj, spec.frame_rate);
    FrameSchedule schedule = make_frame_schedule(replay_traj, spec.frame_rate);

    ReplayResult truth_run =
        run_replay(mesh, truth.true_material, solver, probe, frames_traj,
                   schedule);
    if (truth_run.diverged)
      throw DatasetError("truth simulation diverged in sequence " + info.name +
                         " at frame " +
                         std::to_string(truth_run.diverged_at_frame));
    save_replay(truth_run, truth.true_material, solver, seq_dir / "frames");

    FrameManifest cloud_manifest;
    for (const auto& frame : truth_run.frames) {
      Vec3 probe_now = interpolate(frames_traj, frame.time);
      PointCloud cloud = render_observation(
          frame.positions, mesh, truth, probe_now,
          RngStream::mix_seed(info.seed, 1000003 + frame.frame_id));
      char name[32];
      std::snprintf(name, sizeof(name), "cloud_%06ld.txt", frame.frame_id);
      save_cloud(cloud, seq_dir / "clouds" / name);
      cloud_manifest.entries.push_back({frame.frame_id, frame.time});
    }
    save_frame_manifest(cloud_manifest, seq_dir / "clouds" / "frames.csv");

    info.n_frames = static_cast<long>(truth_run.frames.size());
    manifest.sequences.push_back(info);
  }

  save_manifest(manifest, out_dir / "manifest.txt");
  return manifest;
}

// Load one sequence's clouds (camera frame) in frame order.
inline std::vector<PointCloud> load_sequence_clouds(
    const std::filesystem::path& seq_dir) {
  FrameManifest manifest = load_frame_manifest(seq_dir / "clouds/frames.csv");
  std::vector<PointCloud> clouds;
  clouds.reserve(manifest.entries.size());
  char name[32];
  for (const auto& e : manifest.entries) {
    std::snprintf(name, sizeof(name), "cloud_%06ld.txt", e.frame_id);
    clouds.push_back(load_cloud(seq_dir / "clouds" / name));
  }
  return clouds;
}

}  // namespace simcor
