#pragma once

#include "simcor/core.hpp"
#include "simcor/pointcloud.hpp"

#include <Eigen/SVD>

namespace simcor {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  PointCloud apply(const PointCloud& cloud) const {
    std::vector<Vec3> out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.points()) out.push_back(apply(p));
    return PointCloud(std::move(out));
  }

  RigidTransform inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -inv.rotation * translation;
    return inv;
  }

  // this ∘ other: applies `other` first
  RigidTransform compose(const RigidTransform& other) const {
    RigidTransform out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
  }

  void validate() const {
    Mat3 should_be_identity = rotation.transpose() * rotation;
    if ((should_be_identity - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
      throw ArgumentError("rotation is not orthonormal");
    if (rotation.determinant() <= 0)
      throw ArgumentError("rotation has non-positive determinant");
  }

  static RigidTransform from_axis_angle(const Vec3& axis, double angle,
                                        const Vec3& translation) {
    RigidTransform tf;
    tf.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
    tf.translation = translation;
    return tf;
  }
};

// ---------------------------------------------------------------------------
// Least-squares rigid fit (orthogonal Procrustes with reflection correction).

inline RigidTransform fit_rigid(const std::vector<Vec3>& source,
                                const std::vector<Vec3>& target) {
  if (source.size() != target.size())
    throw ArgumentError("fit_rigid needs equal-length point lists");
  if (source.size() < 3)
    throw ArgumentError("fit_rigid needs at least 3 correspondences");

  Vec3 sc = Vec3::Zero(), tc = Vec3::Zero();
  for (const auto& p : source) sc += p;
  for (const auto& p : target) tc += p;
  sc /= static_cast<double>(source.size());
  tc /= static_cast<double>(target.size());

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i)
    cov += (target[i] - tc) * (source[i] - sc).transpose();

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sv = svd.singularValues();
  // collinear sources leave the rotation about the line undetermined
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300))
    throw GeometryError("fit_rigid: degenerate (collinear) correspondences");

  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((u * v.transpose()).determinant() < 0) d(2, 2) = -1.0;

  RigidTransform tf;
  tf.rotation = u * d * v.transpose();
  tf.translation = tc - tf.rotation * sc;
  return tf;
}

// ---------------------------------------------------------------------------
// Point-to-point ICP with a required initial pose (featureless surfaces need
// a manual seed).

struct IcpConfig {
  int max_iterations = 50;
  double convergence_tol = 1e-4;       // mm change in mean residual
  double max_correspondence_dist = 20.0;  // mm
  RigidTransform initial;

  void validate() const {
    if (max_iterations < 1) throw ConfigError("icp needs max_iterations >= 1");
    if (!(convergence_tol > 0)) throw ConfigError("icp tolerance must be > 0");
    if (!(max_correspondence_dist > 0))
      throw ConfigError("icp correspondence distance must be > 0");
  }
};

struct IcpResult {
  RigidTransform transform;  // includes the initial pose
  double mean_residual = 0.0;
  int iterations = 0;
};

inline IcpResult icp_register(const PointCloud& source,
                              const PointCloud& target, const IcpConfig& cfg) {
  cfg.validate();
  if (source.empty() || target.empty())
    throw ArgumentError("icp needs non-empty clouds");

  const KdTree& target_index = target.index();
  RigidTransform current = cfg.initial;

  auto correspondences = [&](const RigidTransform& tf,
                             std::vector<Vec3>& src_pts,
                             std::vector<Vec3>& tgt_pts) {
    src_pts.clear();
    tgt_pts.clear();
    double residual = 0.0;
    for (const auto& p : source.points()) {
      Vec3 moved = tf.apply(p);
      auto [idx, dist] = target_index.nearest(moved);
      if (dist <= cfg.max_correspondence_dist) {
        src_pts.push_back(p);
        tgt_pts.push_back(target.points()[idx]);
        residual += dist;
      }
    }
    if (src_pts.empty())
      throw RegistrationError("icp: no correspondences within range");
    return residual / static_cast<double>(src_pts.size());
  };

  std::vector<Vec3> src_pts, tgt_pts;
  double best_residual = correspondences(current, src_pts, tgt_pts);
  IcpResult result{current, best_residual, 0};

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    RigidTransform candidate = fit_rigid(src_pts, tgt_pts);
    double residual = correspondences(candidate, src_pts, tgt_pts);
    result.iterations = iter;
    if (residual > best_residual) break;  // keep the best seen, stay monotone
    result.transform = candidate;
    double improvement = best_residual - residual;
    best_residual = residual;
    result.mean_residual = residual;
    if (improvement < cfg.convergence_tol) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Files: correspondence CSV `sx,sy,sz,tx,ty,tz`; transforms as 12 numbers
// row-major (R|t).

inline void save_transform(const RigidTransform& tf,
                           const std::filesystem::path& path) {
  auto out = open_output(path);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << format_double(tf.rotation(r, c)) << ' ';
    out << format_double(tf.translation(r)) << '\n';
  }
}

inline RigidTransform load_transform(const std::filesystem::path& path) {
  auto in = open_input(path);
  RigidTransform tf;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c)
      if (!(in >> tf.rotation(r, c)))
        throw IoError("transform file truncated: " + path.string());
    if (!(in >> tf.translation(r)))
      throw IoError("transform file truncated: " + path.string());
  }
  tf.validate();
  return tf;
}

struct CorrespondenceSet {
  std::vector<Vec3> source;
  std::vector<Vec3> target;
};

inline CorrespondenceSet load_correspondences(
    const std::filesystem::path& path) {
  auto in = open_input(path);
  CorrespondenceSet set;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line.rfind("sx", 0) == 0) continue;  // optional header
    auto cols = split(line, ',');
    if (cols.size() != 6)
      throw IoError("correspondence row needs 6 columns: " + line);
    set.source.emplace_back(parse_double(cols[0]), parse_double(cols[1]),
                            parse_double(cols[2]));
    set.target.emplace_back(parse_double(cols[3]), parse_double(cols[4]),
                            parse_double(cols[5]));
  }
  return set;
}

inline void save_correspondences(const CorrespondenceSet& set,
                                 const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "sx,sy,sz,tx,ty,tz\n";
  for (std::size_t i = 0; i < set.source.size(); ++i) {
    const Vec3& s = set.source[i];
    const Vec3& t = set.target[i];
    out << format_double(s.x()) << ',' << format_double(s.y()) << ','
        << format_double(s.z()) << ',' << format_double(t.x()) << ','
        << format_double(t.y()) << ',' << format_double(t.z()) << '\n';
  }
}

}  // namespace simcor
