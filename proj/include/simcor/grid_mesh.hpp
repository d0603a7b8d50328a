#pragma once

#include "simcor/core.hpp"

#include <array>
#include <map>
#include <tuple>

namespace simcor {

// Structured tetrahedral block mesh: a regular vertex lattice, every hex cell
// split into the same 6 tetrahedra around the cell's main diagonal.

struct GridMeshSpec {
  int nx = 2, ny = 2, nz = 2;       // node counts per axis
  Vec3 extents{1.0, 1.0, 1.0};      // mm
  Vec3 origin{0.0, 0.0, 0.0};       // mm

  void validate() const {
    if (nx < 2 || ny < 2 || nz < 2)
      throw ConfigError("grid mesh needs at least 2 nodes per axis");
    if (!(extents.x() > 0.0 && extents.y() > 0.0 && extents.z() > 0.0))
      throw ConfigError("grid mesh extents must be positive");
  }

  Vec3 spacing() const {
    return Vec3(extents.x() / (nx - 1), extents.y() / (ny - 1),
                extents.z() / (nz - 1));
  }
};

using TetIndices = std::array<int, 4>;
using QuadIndices = std::array<int, 4>;

struct TetMesh {
  GridMeshSpec spec;
  std::vector<Vec3> vertices;          // rest positions, mm
  std::vector<TetIndices> tets;        // positively oriented
  std::vector<QuadIndices> surface_quads;  // boundary faces, ccw seen from outside
  std::vector<int> fixed_set;          // k = 0 layer
  std::vector<int> top_set;            // k = nz-1 layer

  int vertex_count() const { return static_cast<int>(vertices.size()); }

  int vertex_id(int i, int j, int k) const {
    return i + spec.nx * (j + spec.ny * k);
  }

  std::tuple<int, int, int> grid_coords(int vid) const {
    int i = vid % spec.nx;
    int j = (vid / spec.nx) % spec.ny;
    int k = vid / (spec.nx * spec.ny);
    return {i, j, k};
  }

  bool is_top(int vid) const {
    return std::get<2>(grid_coords(vid)) == spec.nz - 1;
  }

  // Quads whose four corners all lie on the top layer (the observable sheet).
  std::vector<QuadIndices> top_quads() const {
    std::vector<QuadIndices> out;
    for (const auto& q : surface_quads) {
      bool top = true;
      for (int v : q) top = top && is_top(v);
      if (top) out.push_back(q);
    }
    return out;
  }
};

inline double tet_signed_volume(const Vec3& a, const Vec3& b, const Vec3& c,
                                const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

inline TetMesh build_grid_mesh(const GridMeshSpec& spec) {
  spec.validate();
  TetMesh mesh;
  mesh.spec = spec;
  const Vec3 h = spec.spacing();

  mesh.vertices.reserve(static_cast<std::size_t>(spec.nx) * spec.ny * spec.nz);
  for (int k = 0; k < spec.nz; ++k)
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i)
        mesh.vertices.push_back(spec.origin +
                                Vec3(i * h.x(), j * h.y(), k * h.z()));

  // 6-tet decomposition around the c000-c111 diagonal, identical per cell
  static const int kCellTets[6][4] = {
      {0, 1, 3, 7}, {0, 3, 2, 7}, {0, 2, 6, 7},
      {0, 6, 4, 7}, {0, 4, 5, 7}, {0, 5, 1, 7}};
  // cell corner order: bit 0 -> +x, bit 1 -> +y, bit 2 -> +z
  for (int k = 0; k + 1 < spec.nz; ++k)
    for (int j = 0; j + 1 < spec.ny; ++j)
      for (int i = 0; i + 1 < spec.nx; ++i) {
        int corner[8];
        for (int c = 0; c < 8; ++c)
          corner[c] = mesh.vertex_id(i + (c & 1), j + ((c >> 1) & 1),
                                     k + ((c >> 2) & 1));
        for (const auto& t : kCellTets) {
          TetIndices tet{corner[t[0]], corner[t[1]], corner[t[2]],
                         corner[t[3]]};
          if (tet_signed_volume(mesh.vertices[tet[0]], mesh.vertices[tet[1]],
                                mesh.vertices[tet[2]],
                                mesh.vertices[tet[3]]) <= 0.0)
            std::swap(tet[1], tet[2]);
          mesh.tets.push_back(tet);
        }
      }

  for (int k = 0; k < spec.nz; ++k)
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i) {
        if (k == 0) mesh.fixed_set.push_back(mesh.vertex_id(i, j, k));
        if (k == spec.nz - 1) mesh.top_set.push_back(mesh.vertex_id(i, j, k));
      }

  // boundary quads of the six box faces
  auto add_quad = [&](int a, int b, int c, int d) {
    mesh.surface_quads.push_back({a, b, c, d});
  };
  for (int j = 0; j + 1 < spec.ny; ++j)
    for (int i = 0; i + 1 < spec.nx; ++i) {
      add_quad(mesh.vertex_id(i, j, 0), mesh.vertex_id(i, j + 1, 0),
               mesh.vertex_id(i + 1, j + 1, 0), mesh.vertex_id(i + 1, j, 0));
      int k = spec.nz - 1;
      add_quad(mesh.vertex_id(i, j, k), mesh.vertex_id(i + 1, j, k),
               mesh.vertex_id(i + 1, j + 1, k), mesh.vertex_id(i, j + 1, k));
    }
  for (int k = 0; k + 1 < spec.nz; ++k)
    for (int i = 0; i + 1 < spec.nx; ++i) {
      add_quad(mesh.vertex_id(i, 0, k), mesh.vertex_id(i + 1, 0, k),
               mesh.vertex_id(i + 1, 0, k + 1), mesh.vertex_id(i, 0, k + 1));
      int j = spec.ny - 1;
      add_quad(mesh.vertex_id(i, j, k), mesh.vertex_id(i, j, k + 1),
               mesh.vertex_id(i + 1, j, k + 1), mesh.vertex_id(i + 1, j, k));
    }
  for (int k = 0; k + 1 < spec.nz; ++k)
    for (int j = 0; j + 1 < spec.ny; ++j) {
      add_quad(mesh.vertex_id(0, j, k), mesh.vertex_id(0, j, k + 1),
               mesh.vertex_id(0, j + 1, k + 1), mesh.vertex_id(0, j + 1, k));
      int i = spec.nx - 1;
      add_quad(mesh.vertex_id(i, j, k), mesh.vertex_id(i, j + 1, k),
               mesh.vertex_id(i, j + 1, k + 1), mesh.vertex_id(i, j, k + 1));
    }

  return mesh;
}

// ---------------------------------------------------------------------------
// Surface super-sampling.
//
// Each boundary quad is subdivided factor x factor; the emitted points are
// bilinear interpolations of the quad's current corner positions. Samples on
// shared edges and corners are deduplicated by exact lattice keys, so the
// point count is deterministic. The corner ids and weights of every sample
// are kept so gradients with respect to corner positions stay well defined.

struct SurfaceSamples {
  std::vector<Vec3> points;
  std::vector<std::array<int, 4>> corner_ids;
  std::vector<std::array<double, 4>> weights;

  std::size_t size() const { return points.size(); }
};

inline SurfaceSamples supersample_quads(
    const std::vector<QuadIndices>& quads,
    const std::vector<Vec3>& current_positions, int factor) {
  if (factor < 1) throw ArgumentError("supersample factor must be >= 1");

  SurfaceSamples out;
  // dedup keys: vertex ids for quad corners; (vmin, vmax, step) for edge
  // samples oriented from vmin to vmax; interior samples are never shared
  std::map<std::array<std::int64_t, 3>, int> seen;

  auto emit = [&](const std::array<std::int64_t, 3>& key, const QuadIndices& q,
                  double u, double v) {
    if (key[0] >= 0) {
      auto it = seen.find(key);
      if (it != seen.end()) return;
      seen.emplace(key, static_cast<int>(out.points.size()));
    }
    std::array<double, 4> w{(1 - u) * (1 - v), u * (1 - v), u * v,
                            (1 - u) * v};
    Vec3 p = Vec3::Zero();
    for (int c = 0; c < 4; ++c) p += w[c] * current_positions[q[c]];
    out.points.push_back(p);
    out.corner_ids.push_back({q[0], q[1], q[2], q[3]});
    out.weights.push_back(w);
  };

  auto edge_key = [&](int va, int vb, int step,
                      int factor_) -> std::array<std::int64_t, 3> {
    if (va < vb) return {1, (std::int64_t(va) << 32) | std::uint32_t(vb), step};
    return {1, (std::int64_t(vb) << 32) | std::uint32_t(va), factor_ - step};
  };

  for (const auto& q : quads) {
    for (int b = 0; b <= factor; ++b) {
      for (int a = 0; a <= factor; ++a) {
        double u = static_cast<double>(a) / factor;
        double v = static_cast<double>(b) / factor;
        bool a_edge = (a == 0 || a == factor);
        bool b_edge = (b == 0 || b == factor);
        std::array<std::int64_t, 3> key{-1, 0, 0};
        if (a_edge && b_edge) {
          int corner = (a == 0 ? (b == 0 ? 0 : 3) : (b == 0 ? 1 : 2));
          key = {0, q[corner], 0};
        } else if (b_edge) {
          // edge q0-q1 (b=0) or q3-q2 (b=factor)
          key = (b == 0) ? edge_key(q[0], q[1], a, factor)
                         : edge_key(q[3], q[2], a, factor);
        } else if (a_edge) {
          key = (a == 0) ? edge_key(q[0], q[3], b, factor)
                         : edge_key(q[1], q[2], b, factor);
        }
        emit(key, q, u, v);
      }
    }
  }
  return out;
}

inline SurfaceSamples supersample_surface(
    const TetMesh& mesh, const std::vector<Vec3>& current_positions,
    int factor) {
  if (static_cast<int>(current_positions.size()) != mesh.vertex_count())
    throw ArgumentError("positions array length must equal vertex count");
  return supersample_quads(mesh.surface_quads, current_positions, factor);
}

// ---------------------------------------------------------------------------
// Persistence: plain text, header `tetmesh v1 nx ny nz`, vertices then tets.
// Fixed/top sets are recomputed from the grid on load.

inline void save_tetmesh(const TetMesh& mesh,
                         const std::filesystem::path& path) {
  auto out = open_output(path);
  out << "tetmesh v1 " << mesh.spec.nx << ' ' << mesh.spec.ny << ' '
      << mesh.spec.nz << '\n';
  for (const auto& v : mesh.vertices)
    out << "v " << format_double(v.x(), 9) << ' ' << format_double(v.y(), 9)
        << ' ' << format_double(v.z(), 9) << '\n';
  for (const auto& t : mesh.tets)
    out << "t " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
}

inline TetMesh load_tetmesh(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string tag, version;
  GridMeshSpec spec;
  in >> tag >> version >> spec.nx >> spec.ny >> spec.nz;
  if (tag != "tetmesh" || version != "v1")
    throw IoError("not a tetmesh v1 file: " + path.string());

  TetMesh mesh;
  std::vector<Vec3> vertices;
  std::vector<TetIndices> tets;
  std::string kind;
  while (in >> kind) {
    if (kind == "v") {
      Vec3 v;
      in >> v.x() >> v.y() >> v.z();
      vertices.push_back(v);
    } else if (kind == "t") {
      TetIndices t;
      in >> t[0] >> t[1] >> t[2] >> t[3];
      tets.push_back(t);
    } else {
      throw IoError("unexpected record '" + kind + "' in " + path.string());
    }
  }
  if (static_cast<int>(vertices.size()) != spec.nx * spec.ny * spec.nz)
    throw IoError("vertex count does not match grid header in " +
                  path.string());

  // rebuild connectivity and boundary sets from the grid, then adopt the
  // stored coordinates and tets
  Vec3 lo = vertices.front(), hi = vertices.front();
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  spec.origin = lo;
  spec.extents = hi - lo;
  TetMesh rebuilt = build_grid_mesh(spec);
  rebuilt.vertices = vertices;
  rebuilt.tets = tets;
  return rebuilt;
}

}  // namespace simcor
