#pragma once

#include "simcor/fem.hpp"
#include "simcor/pointcloud.hpp"
#include "simcor/tensor.hpp"

namespace simcor {

// The 2D/3D UNet correction network: simulated vertex positions (plus the
// probe position injected at the bottleneck) map to a per-vertex displacement
// whose magnitude is architecturally clamped to a fraction of the voxel
// spacing. Corrections apply to the observable top layer only.

struct UNetConfig {
  int dimensionality = 3;  // 2 or 3
  std::array<int, 3> encoder_features{64, 128, 256};
  int convs_per_block = 2;
  int pool_kernel = 2;
  int bottleneck_extra_convs = 4;
  int kinematics_dim = 3;
  std::vector<int> grid_shape;  // padded spatial dims {D,H,W} or {H,W}
  Vec3 voxel_spacing{1, 1, 1};  // mm per axis (x, y, z)
  double clamp_fraction = 0.5;  // of the voxel length, per axis

  void validate() const {
    if (dimensionality != 2 && dimensionality != 3)
      throw ConfigError("network dimensionality must be 2 or 3");
    if (encoder_features != std::array<int, 3>{64, 128, 256})
      throw ConfigError("encoder features are fixed at 64/128/256");
    if (static_cast<int>(grid_shape.size()) != dimensionality)
      throw ConfigError("grid_shape rank must match dimensionality");
    for (int d : grid_shape)
      if (d <= 0 || d % 4 != 0)
        throw ConfigError(
            "padded grid dims must be positive multiples of 4 (two pools)");
    if (!(clamp_fraction > 0.0 && clamp_fraction <= 1.0))
      throw ConfigError("clamp_fraction must lie in (0, 1]");
    if (kinematics_dim != 3)
      throw ConfigError("kinematics input is the 3-vector probe position");
  }

  int spatial_size() const {
    int n = 1;
    for (int d : grid_shape) n *= d;
    return n;
  }
};

struct InputNormalization {
  Vec3 offset = Vec3::Zero();  // rest bounding-box minimum
  Vec3 scale = Vec3::Ones();   // rest bounding-box extents

  Vec3 apply(const Vec3& p) const {
    return Vec3((p.x() - offset.x()) / scale.x(),
                (p.y() - offset.y()) / scale.y(),
                (p.z() - offset.z()) / scale.z());
  }
};

struct CorrectionModel {
  UNetConfig config;
  ParamSet params;
  InputNormalization normalization;
};

namespace detail {

inline int padded_to_multiple_of_4(int n) { return ((n + 3) / 4) * 4; }

inline void add_conv(ParamSet& params, const std::string& name, int out_c,
                     int in_c, int dim, RngStream& rng) {
  std::vector<int> shape{out_c, in_c};
  for (int i = 0; i < dim; ++i) shape.push_back(3);
  params.tensors.emplace(name + ".w", glorot_conv_weight(shape, rng));
  params.tensors.emplace(name + ".b", Tensor::zeros({out_c}, true));
}

}  // namespace detail

inline CorrectionModel build_correction_model(const UNetConfig& config,
                                              const InputNormalization& norm,
                                              std::uint64_t seed) {
  config.validate();
  CorrectionModel model;
  model.config = config;
  model.normalization = norm;

  RngStream rng(seed);
  const int dim = config.dimensionality;
  const auto [f1, f2, f3] = config.encoder_features;
  auto& p = model.params;
  detail::add_conv(p, "enc1.conv1", f1, 3, dim, rng);
  detail::add_conv(p, "enc1.conv2", f1, f1, dim, rng);
  detail::add_conv(p, "enc2.conv1", f2, f1, dim, rng);
  detail::add_conv(p, "enc2.conv2", f2, f2, dim, rng);
  detail::add_conv(p, "enc3.conv1", f3, f2, dim, rng);
  detail::add_conv(p, "enc3.conv2", f3, f3, dim, rng);
  detail::add_conv(p, "bott.conv1", f3, f3 + config.kinematics_dim, dim, rng);
  detail::add_conv(p, "bott.conv2", f3, f3, dim, rng);
  detail::add_conv(p, "bott.conv3", f3, f3, dim, rng);
  detail::add_conv(p, "bott.conv4", f3, f3, dim, rng);
  detail::add_conv(p, "dec1.up", f2, f3, dim, rng);
  detail::add_conv(p, "dec1.conv1", f2, f3, dim, rng);  // concat halves to 2*f2
  detail::add_conv(p, "dec1.conv2", f2, f2, dim, rng);
  detail::add_conv(p, "dec2.up", f1, f2, dim, rng);
  detail::add_conv(p, "dec2.conv1", f1, f2, dim, rng);  // concat gives 2*f1
  detail::add_conv(p, "dec2.conv2", f1, f1, dim, rng);
  detail::add_conv(p, "head", 3, f1, dim, rng);
  return model;
}

// Convenience constructor deriving the grid geometry from the mesh.
inline CorrectionModel build_correction_model_for_mesh(const TetMesh& mesh,
                                                       int dimensionality,
                                                       double clamp_fraction,
                                                       std::uint64_t seed) {
  UNetConfig config;
  config.dimensionality = dimensionality;
  config.clamp_fraction = clamp_fraction;
  config.voxel_spacing = mesh.spec.spacing();
  int pw = detail::padded_to_multiple_of_4(mesh.spec.nx);
  int ph = detail::padded_to_multiple_of_4(mesh.spec.ny);
  int pd = detail::padded_to_multiple_of_4(mesh.spec.nz);
  if (dimensionality == 3)
    config.grid_shape = {pd, ph, pw};
  else
    config.grid_shape = {ph, pw};

  InputNormalization norm;
  Vec3 lo = mesh.vertices.front(), hi = mesh.vertices.front();
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  norm.offset = lo;
  norm.scale = hi - lo;
  return build_correction_model(config, norm, seed);
}

// ---------------------------------------------------------------------------
// Grid packing: normalized absolute positions in the three channels; cells
// beyond the real lattice stay zero (padding lives at the high index end).

inline Tensor pack_input_grid(const CorrectionModel& model, const TetMesh& mesh,
                              const std::vector<Vec3>& positions) {
  if (static_cast<int>(positions.size()) != mesh.vertex_count())
    throw ShapeError("positions length must equal mesh vertex count");
  const UNetConfig& cfg = model.config;
  std::vector<int> shape = cfg.grid_shape;
  shape.insert(shape.begin(), 3);
  Tensor input = Tensor::zeros(shape);
  const int S = cfg.spatial_size();

  const bool is2d = cfg.dimensionality == 2;
  const int W = cfg.grid_shape.back();
  const int H = cfg.grid_shape[cfg.grid_shape.size() - 2];
  for (int vid = 0; vid < mesh.vertex_count(); ++vid) {
    auto [i, j, k] = mesh.grid_coords(vid);
    if (is2d && k != mesh.spec.nz - 1) continue;
    int offset = is2d ? j * W + i : (k * H + j) * W + i;
    Vec3 n = model.normalization.apply(positions[vid]);
    for (int c = 0; c < 3; ++c) input.data()[c * S + offset] = n[c];
  }
  return input;
}

// Flat spatial offset of each vertex's cell in the (unpadded region of the)
// network grid; -1 for vertices the network does not correct.
inline std::vector<int> top_layer_offsets(const CorrectionModel& model,
                                          const TetMesh& mesh) {
  const UNetConfig& cfg = model.config;
  const bool is2d = cfg.dimensionality == 2;
  const int W = cfg.grid_shape.back();
  const int H = cfg.grid_shape[cfg.grid_shape.size() - 2];
  std::vector<int> offsets(mesh.vertex_count(), -1);
  for (int vid : mesh.top_set) {
    auto [i, j, k] = mesh.grid_coords(vid);
    offsets[vid] = is2d ? j * W + i : (k * H + j) * W + i;
  }
  return offsets;
}

// Forward pass: displacement grid with |out[c]| <= clamp_fraction * spacing[c]
// guaranteed by the tanh head.
inline Tensor correction_forward(const CorrectionModel& model,
                                 const Tensor& input, const Vec3& probe) {
  const auto& p = model.params.tensors;
  auto cv = [&](const Tensor& x, const std::string& name) {
    return conv(x, p.at(name + ".w"), p.at(name + ".b"));
  };

  Tensor e1 = relu(cv(relu(cv(input, "enc1.conv1")), "enc1.conv2"));
  Tensor e2 = relu(cv(relu(cv(maxpool(e1), "enc2.conv1")), "enc2.conv2"));
  Tensor e3 = relu(cv(relu(cv(maxpool(e2), "enc3.conv1")), "enc3.conv2"));

  Vec3 pn = model.normalization.apply(probe);
  Tensor kin = broadcast_channels({pn.x(), pn.y(), pn.z()}, e3);
  Tensor b = concat_channels(e3, kin);
  b = relu(cv(b, "bott.conv1"));
  b = relu(cv(b, "bott.conv2"));
  b = relu(cv(b, "bott.conv3"));
  b = relu(cv(b, "bott.conv4"));

  Tensor u1 = relu(cv(upsample_nearest(b), "dec1.up"));
  Tensor d1 = relu(cv(concat_channels(u1, e2), "dec1.conv1"));
  d1 = relu(cv(d1, "dec1.conv2"));
  Tensor u2 = relu(cv(upsample_nearest(d1), "dec2.up"));
  Tensor d2 = relu(cv(concat_channels(u2, e1), "dec2.conv1"));
  d2 = relu(cv(d2, "dec2.conv2"));

  Tensor head = tanh_activation(cv(d2, "head"));
  const Vec3& h = model.config.voxel_spacing;
  double f = model.config.clamp_fraction;
  return scale_per_channel(head, {f * h.x(), f * h.y(), f * h.z()});
}

inline Tensor correction_forward(const CorrectionModel& model,
                                 const TetMesh& mesh,
                                 const std::vector<Vec3>& sim_positions,
                                 const Vec3& probe) {
  return correction_forward(model, pack_input_grid(model, mesh, sim_positions),
                            probe);
}

// Apply a displacement grid to the top layer only; padded cells and interior
// values are ignored.
inline std::vector<Vec3> apply_correction(const CorrectionModel& model,
                                          const TetMesh& mesh,
                                          const std::vector<Vec3>& sim_positions,
                                          const Tensor& displacement) {
  std::vector<int> expected = model.config.grid_shape;
  expected.insert(expected.begin(), 3);
  if (displacement.shape() != expected)
    throw ShapeError("displacement grid shape mismatch");
  const int S = model.config.spatial_size();
  std::vector<int> offsets = top_layer_offsets(model, mesh);
  std::vector<Vec3> corrected = sim_positions;
  for (int vid = 0; vid < mesh.vertex_count(); ++vid) {
    if (offsets[vid] < 0) continue;
    for (int c = 0; c < 3; ++c)
      corrected[vid][c] += displacement.data()[c * S + offsets[vid]];
  }
  return corrected;
}

// ---------------------------------------------------------------------------
// Differentiable loss head: one-directional Chamfer from the observed cloud
// to the super-sampled corrected surface. Nearest-neighbor correspondences
// are treated as locally constant during backprop.

inline Tensor surface_chamfer_loss(const Tensor& displacement,
                                   const std::vector<Vec3>& base_positions,
                                   const SurfaceSamples& topology,
                                   const std::vector<int>& top_offsets,
                                   const PointCloud& observed) {
  if (observed.empty())
    throw ArgumentError("chamfer loss needs a non-empty observed cloud");
  const int S = displacement.numel() / 3;

  std::vector<Vec3> corrected = base_positions;
  for (std::size_t vid = 0; vid < corrected.size(); ++vid) {
    int off = top_offsets[vid];
    if (off < 0) continue;
    for (int c = 0; c < 3; ++c)
      corrected[vid][c] += displacement.data()[c * S + off];
  }

  std::vector<Vec3> samples(topology.size());
  for (std::size_t s = 0; s < topology.size(); ++s) {
    Vec3 acc = Vec3::Zero();
    for (int c = 0; c < 4; ++c)
      acc += topology.weights[s][c] * corrected[topology.corner_ids[s][c]];
    samples[s] = acc;
  }

  KdTree tree(samples);
  struct Pull {
    int sample = 0;
    Vec3 direction = Vec3::Zero();  // d(dist)/d(sample)
  };
  auto pulls = std::make_shared<std::vector<Pull>>();
  pulls->reserve(observed.size());
  double total = 0.0;
  for (const auto& q : observed.points()) {
    auto [idx, dist] = tree.nearest(q);
    total += dist;
    Pull pull;
    pull.sample = idx;
    if (dist > 1e-12) pull.direction = (samples[idx] - q) / dist;
    pulls->push_back(pull);
  }
  double loss = total / static_cast<double>(observed.size());

  auto topo = std::make_shared<SurfaceSamples>(topology);
  auto offsets = std::make_shared<std::vector<int>>(top_offsets);
  double inv_n = 1.0 / static_cast<double>(observed.size());
  auto backward = [pulls, topo, offsets, S, inv_n](TensorNode& self) {
    TensorNode& disp = *self.parents[0];
    if (!disp.requires_grad) return;
    auto& g = disp.grad_buffer();
    double coeff = self.grad[0] * inv_n;
    for (const auto& pull : *pulls) {
      for (int c = 0; c < 4; ++c) {
        int vid = topo->corner_ids[pull.sample][c];
        int off = (*offsets)[vid];
        if (off < 0) continue;
        double w = topo->weights[pull.sample][c];
        for (int ch = 0; ch < 3; ++ch)
          g[ch * S + off] += coeff * w * pull.direction[ch];
      }
    }
  };
  return Tensor::make_op({1}, {loss}, {displacement}, backward);
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
  std::uint64_t seed = 1;
  int patience = 5;           // epochs of non-improving validation loss
  double min_delta = 1e-6;    // improvement below this counts as flat
  int supersample_factor = 3;
  AdamConfig adam;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (supersample_factor < 1)
      throw ConfigError("supersample_factor must be >= 1");
  }
};

struct TrainSample {
  std::vector<Vec3> sim_positions;
  Vec3 probe = Vec3::Zero();
  PointCloud observed;  // registered into the simulation frame
};

struct TrainingSet {
  std::vector<TrainSample> train;
  std::vector<TrainSample> validation;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;
  int best_epoch = -1;
  bool early_stopped = false;
};

// Stop once validation has not improved by min_delta for `patience`
// consecutive epochs.
inline bool should_stop_early(const std::vector<double>& val_losses,
                              int patience, double min_delta) {
  if (static_cast<int>(val_losses.size()) <= patience) return false;
  double best = val_losses.front();
  int since_best = 0;
  for (std::size_t i = 1; i < val_losses.size(); ++i) {
    if (val_losses[i] < best - min_delta) {
      best = val_losses[i];
      since_best = 0;
    } else {
      ++since_best;
    }
  }
  return since_best >= patience;
}

inline void save_loss_curve(const TrainReport& report,
                            const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "epoch,train,val\n";
  for (std::size_t e = 0; e < report.train_loss.size(); ++e)
    out << e << ',' << format_double(report.train_loss[e]) << ','
        << format_double(report.val_loss[e]) << '\n';
}

inline TrainReport train(CorrectionModel& model, const TrainingSet& data,
                         const TetMesh& mesh, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty()) throw ArgumentError("training set is empty");

  SurfaceSamples topology =
      supersample_surface(mesh, mesh.vertices, cfg.supersample_factor);
  std::vector<int> offsets = top_layer_offsets(model, mesh);

  AdamConfig adam = cfg.adam;
  adam.learning_rate = cfg.learning_rate;
  AdamState adam_state;
  RngStream rng(cfg.seed);

  auto sample_loss = [&](const TrainSample& sample) {
    Tensor disp = correction_forward(model, mesh, sample.sim_positions,
                                     sample.probe);
    return surface_chamfer_loss(disp, sample.sim_positions, topology, offsets,
                                sample.observed);
  };

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  ParamSet best_params;

  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // seeded Fisher-Yates shuffle
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_index(i)]);

    double train_total = 0.0;
    for (std::size_t idx : order) {
      model.params.zero_grad();
      Tensor loss;
      try {
        loss = sample_loss(data.train[idx]);
        loss.backward();
      } catch (const NumericsError& e) {
        throw TrainingError("divergent loss at epoch " +
                            std::to_string(epoch) + ": " + e.what());
      }
      if (!std::isfinite(loss.item()))
        throw TrainingError("divergent loss at epoch " +
                            std::to_string(epoch));
      train_total += loss.item();
      adam_step(model.params, adam_state, adam);
    }
    report.train_loss.push_back(train_total / data.train.size());

    double val = 0.0;
    if (!data.validation.empty()) {
      for (const auto& sample : data.validation)
        val += sample_loss(sample).item();
      val /= data.validation.size();
    } else {
      val = report.train_loss.back();
    }
    report.val_loss.push_back(val);

    if (val < best_val - cfg.min_delta) {
      best_val = val;
      report.best_epoch = epoch;
      best_params.tensors.clear();
      for (const auto& [name, tensor] : model.params.tensors)
        best_params.tensors.emplace(
            name, Tensor::from_data(tensor.shape(), tensor.data(), true));
    }
    if (should_stop_early(report.val_loss, cfg.patience, cfg.min_delta)) {
      report.early_stopped = true;
      break;
    }
  }
  if (!best_params.tensors.empty()) model.params = std::move(best_params);
  return report;
}

// ---------------------------------------------------------------------------
// Evaluation: replay the FEM, apply the correction at every labeled frame,
// and report one-directional Chamfer for corrected vs uncorrected positions.

enum class FeedbackMode { none, top_layer };

struct FrameEval {
  long frame_id = 0;
  double time = 0.0;
  double uncorrected_mm = 0.0;
  double corrected_mm = 0.0;
};

struct EvalResult {
  std::vector<FrameEval> frames;
  double mean_uncorrected = 0.0;
  double mean_corrected = 0.0;
  bool diverged = false;
  long diverged_at_frame = -1;

  void finalize() {
    double u = 0.0, c = 0.0;
    for (const auto& f : frames) {
      u += f.uncorrected_mm;
      c += f.corrected_mm;
    }
    if (!frames.empty()) {
      mean_uncorrected = u / frames.size();
      mean_corrected = c / frames.size();
    }
  }
  double improvement_pct() const {
    if (mean_uncorrected <= 0.0) return 0.0;
    return 100.0 * (mean_uncorrected - mean_corrected) / mean_uncorrected;
  }
};

// Offline evaluation from stored frames (no feedback possible).
inline EvalResult evaluate_frames(const CorrectionModel* model,
                                  const TetMesh& mesh,
                                  const std::vector<ReplayFrame>& frames,
                                  const std::vector<Vec3>& probe_per_frame,
                                  const std::vector<PointCloud>& observed,
                                  int supersample_factor) {
  if (frames.size() != observed.size() ||
      frames.size() != probe_per_frame.size())
    throw ArgumentError("frames, probes, and clouds must align");
  EvalResult result;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const auto& positions = frames[k].positions;
    SurfaceSamples sim_samples =
        supersample_surface(mesh, positions, supersample_factor);
    PointCloud sim_cloud(sim_samples.points);
    double uncorrected = chamfer_one_directional(observed[k], sim_cloud);

    double corrected = uncorrected;
    if (model) {
      Tensor disp =
          correction_forward(*model, mesh, positions, probe_per_frame[k]);
      std::vector<Vec3> fixed_positions =
          apply_correction(*model, mesh, positions, disp);
      SurfaceSamples corr_samples =
          supersample_surface(mesh, fixed_positions, supersample_factor);
      corrected =
          chamfer_one_directional(observed[k], PointCloud(corr_samples.points));
    }
    result.frames.push_back(
        {frames[k].frame_id, frames[k].time, uncorrected, corrected});
  }
  result.finalize();
  return result;
}

// Live rollout; with FeedbackMode::top_layer the corrected top-layer
// positions overwrite the state (velocities preserved) before the next
// substep.
inline EvalResult evaluate_rollout(
    const CorrectionModel* model, const TetMesh& mesh,
    const MaterialParams& material, const SolverConfig& solver,
    const ProbeSphere& probe_template, const KinematicsTrajectory& trajectory,
    const FrameSchedule& schedule, const std::vector<PointCloud>& observed,
    FeedbackMode feedback, int supersample_factor,
    const std::optional<Vec3>& gravity = std::nullopt) {
  if (observed.size() != schedule.frame_times.size())
    throw ArgumentError("need one observed cloud per scheduled frame");
  trajectory.validate();

  Simulator sim(mesh, material, solver);
  FemState state = sim.rest_state();
  state.time = trajectory.start_time();

  EvalResult result;
  ProbeSphere probe = probe_template;
  for (std::size_t k = 0; k < schedule.frame_times.size(); ++k) {
    double target = schedule.frame_times[k];
    try {
      while (state.time < target - 1e-9) {
        double dt = std::min(solver.dt, target - state.time);
        probe.center = interpolate(trajectory, state.time + dt);
        sim.step(state, probe, gravity, dt);
        if (state.diverged) break;
      }
    } catch (const SolverError&) {
      state.diverged = true;
    }
    if (state.diverged) {
      result.diverged = true;
      result.diverged_at_frame = static_cast<long>(k);
      break;
    }

    Vec3 probe_now = interpolate(trajectory, target);
    SurfaceSamples sim_samples =
        supersample_surface(mesh, state.positions, supersample_factor);
    double uncorrected =
        chamfer_one_directional(observed[k], PointCloud(sim_samples.points));
    double corrected = uncorrected;
    if (model) {
      Tensor disp = correction_forward(*model, mesh, state.positions, probe_now);
      std::vector<Vec3> corr =
          apply_correction(*model, mesh, state.positions, disp);
      SurfaceSamples corr_samples =
          supersample_surface(mesh, corr, supersample_factor);
      corrected =
          chamfer_one_directional(observed[k], PointCloud(corr_samples.points));
      if (feedback == FeedbackMode::top_layer)
        for (int vid : mesh.top_set) state.positions[vid] = corr[vid];
    }
    result.frames.push_back(
        {static_cast<long>(k), target, uncorrected, corrected});
  }
  result.finalize();
  return result;
}

// ---------------------------------------------------------------------------
// Model persistence: SCNN1 weights next to a sidecar text config.

inline void save_model(const CorrectionModel& model,
                       const std::filesystem::path& stem) {
  save_weights(model.params, stem.string() + ".bin");
  auto out = open_output(stem.string() + ".cfg");
  out << "dimensionality " << model.config.dimensionality << '\n';
  out << "grid_shape";
  for (int d : model.config.grid_shape) out << ' ' << d;
  out << '\n';
  out << "voxel_spacing " << format_double(model.config.voxel_spacing.x())
      << ' ' << format_double(model.config.voxel_spacing.y()) << ' '
      << format_double(model.config.voxel_spacing.z()) << '\n';
  out << "clamp_fraction " << format_double(model.config.clamp_fraction)
      << '\n';
  out << "norm_offset " << format_double(model.normalization.offset.x()) << ' '
      << format_double(model.normalization.offset.y()) << ' '
      << format_double(model.normalization.offset.z()) << '\n';
  out << "norm_scale " << format_double(model.normalization.scale.x()) << ' '
      << format_double(model.normalization.scale.y()) << ' '
      << format_double(model.normalization.scale.z()) << '\n';
}

inline CorrectionModel load_model(const std::filesystem::path& stem) {
  CorrectionModel model;
  model.params = load_weights(stem.string() + ".bin");
  auto in = open_input(stem.string() + ".cfg");
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    if (key == "dimensionality") {
      ss >> model.config.dimensionality;
    } else if (key == "grid_shape") {
      model.config.grid_shape.clear();
      int d;
      while (ss >> d) model.config.grid_shape.push_back(d);
    } else if (key == "voxel_spacing") {
      ss >> model.config.voxel_spacing.x() >> model.config.voxel_spacing.y() >>
          model.config.voxel_spacing.z();
    } else if (key == "clamp_fraction") {
      ss >> model.config.clamp_fraction;
    } else if (key == "norm_offset") {
      ss >> model.normalization.offset.x() >> model.normalization.offset.y() >>
          model.normalization.offset.z();
    } else if (key == "norm_scale") {
      ss >> model.normalization.scale.x() >> model.normalization.scale.y() >>
          model.normalization.scale.z();
    } else if (!key.empty()) {
      throw IoError("unknown model config key: " + key);
    }
  }
  model.config.validate();
  return model;
}

}  // namespace simcor
