#pragma once

#include "simcor/core.hpp"

#include <algorithm>
#include <limits>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

namespace simcor {

// ---------------------------------------------------------------------------
// Kd-tree over 3D points. Owns a copy of the points so it can be shared
// between cloud copies. Tie-breaking on equal distances prefers the lower
// point index, matching a first-minimum brute-force scan.

class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    std::vector<int> order(points_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    nodes_.reserve(points_.size());
    root_ = build(order, 0, static_cast<int>(order.size()));
  }

  std::size_t size() const { return points_.size(); }

  // returns (index, euclidean distance)
  std::pair<int, double> nearest(const Vec3& q) const {
    int best_idx = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best_idx, best_d2);
    return {best_idx, std::sqrt(best_d2)};
  }

  // k nearest as (squared distance, index), sorted ascending
  std::vector<std::pair<double, int>> knn(const Vec3& q, int k) const {
    std::vector<std::pair<double, int>> best;
    best.reserve(k + 1);
    search_knn(root_, q, k, best);
    return best;
  }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::vector<int>& order, int lo, int hi) {
    if (lo >= hi) return -1;
    // widest axis of the current subset
    Vec3 mn = points_[order[lo]], mx = points_[order[lo]];
    for (int i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order[i]]);
      mx = mx.cwiseMax(points_[order[i]]);
    }
    Vec3 ext = mx - mn;
    int axis = 0;
    if (ext.y() > ext.x()) axis = 1;
    if (ext.z() > ext[axis]) axis = 2;

    int mid = (lo + hi) / 2;
    std::nth_element(order.begin() + lo, order.begin() + mid,
                     order.begin() + hi, [&](int a, int b) {
                       double ca = points_[a][axis], cb = points_[b][axis];
                       if (ca != cb) return ca < cb;
                       return a < b;
                     });
    int node_id = static_cast<int>(nodes_.size());
    nodes_.push_back({order[mid], axis, -1, -1});
    int left = build(order, lo, mid);
    int right = build(order, mid + 1, hi);
    nodes_[node_id].left = left;
    nodes_[node_id].right = right;
    return node_id;
  }

  void consider(int point, const Vec3& q, int& best_idx,
                double& best_d2) const {
    double d2 = (points_[point] - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && point < best_idx)) {
      best_d2 = d2;
      best_idx = point;
    }
  }

  void search(int node_id, const Vec3& q, int& best_idx,
              double& best_d2) const {
    if (node_id < 0) return;
    const Node& n = nodes_[node_id];
    consider(n.point, q, best_idx, best_d2);
    double diff = q[n.axis] - points_[n.point][n.axis];
    int near = diff < 0 ? n.left : n.right;
    int far = diff < 0 ? n.right : n.left;
    search(near, q, best_idx, best_d2);
    if (diff * diff <= best_d2) search(far, q, best_idx, best_d2);
  }

  void search_knn(int node_id, const Vec3& q, int k,
                  std::vector<std::pair<double, int>>& best) const {
    if (node_id < 0) return;
    const Node& n = nodes_[node_id];
    double d2 = (points_[n.point] - q).squaredNorm();
    std::pair<double, int> cand{d2, n.point};
    if (static_cast<int>(best.size()) < k || cand < best.back()) {
      best.insert(std::lower_bound(best.begin(), best.end(), cand), cand);
      if (static_cast<int>(best.size()) > k) best.pop_back();
    }
    double diff = q[n.axis] - points_[n.point][n.axis];
    int near = diff < 0 ? n.left : n.right;
    int far = diff < 0 ? n.right : n.left;
    search_knn(near, q, k, best);
    if (static_cast<int>(best.size()) < k || diff * diff <= best.back().first)
      search_knn(far, q, k, best);
  }

  std::vector<Vec3> points_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

// ---------------------------------------------------------------------------
// Point cloud: immutable after construction; the spatial index is built
// lazily under a lock so concurrent readers are safe.

class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<Vec3> points) : points_(std::move(points)) {
    for (const auto& p : points_)
      if (!p.allFinite())
        throw NumericsError("point cloud contains non-finite coordinates");
  }

  PointCloud(const PointCloud& other) : points_(other.points_) {
    std::scoped_lock lk(other.mu_);
    index_ = other.index_;  // KdTree owns its points, safe to share
  }
  PointCloud& operator=(const PointCloud& other) {
    if (this != &other) {
      PointCloud tmp(other);
      std::scoped_lock lk(mu_);
      points_ = std::move(tmp.points_);
      index_ = std::move(tmp.index_);
    }
    return *this;
  }
  PointCloud(PointCloud&&) = default;
  PointCloud& operator=(PointCloud&&) = default;

  const std::vector<Vec3>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  const KdTree& index() const {
    std::scoped_lock lk(mu_);
    if (!index_) index_ = std::make_shared<KdTree>(points_);
    return *index_;
  }

  std::pair<int, double> nearest(const Vec3& q) const {
    return index().nearest(q);
  }

 private:
  std::vector<Vec3> points_;
  mutable std::shared_ptr<KdTree> index_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Metrics. Both are one-directional: they scan the first cloud and look up
// nearest neighbors in the second.

inline double chamfer_one_directional(const PointCloud& observed,
                                      const PointCloud& reference) {
  if (observed.empty() || reference.empty())
    throw ArgumentError("chamfer distance needs non-empty clouds");
  const KdTree& index = reference.index();
  double sum = 0.0;
  for (const auto& p : observed.points()) sum += index.nearest(p).second;
  return sum / static_cast<double>(observed.size());
}

inline double hausdorff(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty())
    throw ArgumentError("hausdorff distance needs non-empty clouds");
  const KdTree& index = b.index();
  double worst = 0.0;
  for (const auto& p : a.points())
    worst = std::max(worst, index.nearest(p).second);
  return worst;
}

// ---------------------------------------------------------------------------
// Filtering chain: workspace crop, instrument-proxy exclusion spheres,
// statistical outlier removal, then voxel-grid decimation towards a target
// surface density.

struct FilterConfig {
  Vec3 crop_min{-1e9, -1e9, -1e9};
  Vec3 crop_max{1e9, 1e9, 1e9};
  std::vector<std::pair<Vec3, double>> exclusion_spheres;  // (center, radius)
  int outlier_k = 20;
  double outlier_stddev = 1.0;
  double target_density = 16.5;  // points per mm^2

  void validate() const {
    for (int c = 0; c < 3; ++c)
      if (!(crop_min[c] < crop_max[c]))
        throw ConfigError("filter crop box is empty");
    if (outlier_k < 1) throw ConfigError("outlier_k must be >= 1");
    if (!(target_density > 0))
      throw ConfigError("target_density must be positive");
  }
};

struct EmptyResultError : Error {
  using Error::Error;
};

inline PointCloud filter(const PointCloud& cloud, const FilterConfig& cfg) {
  cfg.validate();

  std::vector<Vec3> kept;
  for (const auto& p : cloud.points()) {
    if ((p.array() < cfg.crop_min.array()).any() ||
        (p.array() > cfg.crop_max.array()).any())
      continue;
    bool excluded = false;
    for (const auto& [center, radius] : cfg.exclusion_spheres)
      if ((p - center).norm() < radius) {
        excluded = true;
        break;
      }
    if (!excluded) kept.push_back(p);
  }
  if (kept.empty()) throw EmptyResultError("filter removed all points");

  // statistical outlier removal on mean k-NN distance
  if (kept.size() > static_cast<std::size_t>(cfg.outlier_k)) {
    KdTree tree(kept);
    std::vector<double> mean_dist(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      auto nn = tree.knn(kept[i], cfg.outlier_k + 1);  // includes self
      double sum = 0.0;
      int used = 0;
      for (const auto& [d2, idx] : nn) {
        if (idx == static_cast<int>(i)) continue;
        sum += std::sqrt(d2);
        ++used;
      }
      mean_dist[i] = used > 0 ? sum / used : 0.0;
    }
    double mean = 0.0;
    for (double d : mean_dist) mean += d;
    mean /= mean_dist.size();
    double var = 0.0;
    for (double d : mean_dist) var += (d - mean) * (d - mean);
    var /= mean_dist.size();
    double threshold = mean + cfg.outlier_stddev * std::sqrt(var);

    std::vector<Vec3> inliers;
    inliers.reserve(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i)
      if (mean_dist[i] <= threshold) inliers.push_back(kept[i]);
    kept = std::move(inliers);
    if (kept.empty()) throw EmptyResultError("outlier removal emptied cloud");
  }

  // voxel decimation: edge sized so one survivor per voxel approximates the
  // target surface density; keeps the first point seen per voxel
  double edge = 1.0 / std::sqrt(cfg.target_density);
  std::unordered_set<std::uint64_t> occupied;
  std::vector<Vec3> decimated;
  decimated.reserve(kept.size());
  for (const auto& p : kept) {
    auto cell = [&](double v) {
      return static_cast<std::int64_t>(std::floor(v / edge)) & 0x1FFFFF;
    };
    std::uint64_t key =
        (static_cast<std::uint64_t>(cell(p.x())) << 42) |
        (static_cast<std::uint64_t>(cell(p.y())) << 21) |
        static_cast<std::uint64_t>(cell(p.z()));
    if (occupied.insert(key).second) decimated.push_back(p);
  }
  return PointCloud(std::move(decimated));
}

// ---------------------------------------------------------------------------
// Persistence. Writer emits plain `x y z` rows; the reader also accepts an
// ASCII PLY header in front of the rows.

inline void save_cloud(const PointCloud& cloud,
                       const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& p : cloud.points())
    out << format_double(p.x()) << ' ' << format_double(p.y()) << ' '
        << format_double(p.z()) << '\n';
}

inline PointCloud load_cloud(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::vector<Vec3> points;

  if (!std::getline(in, line)) return PointCloud{};
  if (trim(line) == "ply") {
    long vertex_count = -1;
    while (std::getline(in, line)) {
      line = trim(line);
      if (line.rfind("element vertex", 0) == 0)
        vertex_count = std::stol(split(line, ' ').back());
      if (line == "end_header") break;
    }
    if (vertex_count < 0)
      throw IoError("ply file missing 'element vertex': " + path.string());
    for (long i = 0; i < vertex_count; ++i) {
      if (!std::getline(in, line))
        throw IoError("ply file truncated: " + path.string());
      auto cols = split(trim(line), ' ');
      if (cols.size() < 3)
        throw IoError("ply vertex row needs at least x y z: " + line);
      points.emplace_back(parse_double(cols[0]), parse_double(cols[1]),
                          parse_double(cols[2]));
    }
    return PointCloud(std::move(points));
  }

  // plain rows, first line already read
  do {
    std::string t = trim(line);
    if (t.empty()) continue;
    auto cols = split(t, ' ');
    cols.erase(std::remove_if(cols.begin(), cols.end(),
                              [](const std::string& s) { return s.empty(); }),
               cols.end());
    if (cols.size() != 3)
      throw IoError("cloud row needs exactly x y z: '" + t + "'");
    points.emplace_back(parse_double(cols[0]), parse_double(cols[1]),
                        parse_double(cols[2]));
  } while (std::getline(in, line));
  return PointCloud(std::move(points));
}

}  // namespace simcor
