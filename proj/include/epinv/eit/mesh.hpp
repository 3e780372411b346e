#pragma once

// Triangular meshes of a disk with boundary electrodes.
//
// The generator places nodes on concentric rings. The outer ring is aligned
// with the electrode endpoints, ring spacing grows from the boundary toward
// the center, and consecutive rings are stitched by a zipper triangulation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "epinv/errors.hpp"

namespace epinv::eit {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Point = Eigen::Vector2d;
using Edge = std::array<int, 2>;
using Triangle = std::array<int, 3>;

struct Mesh {
  std::vector<Point> nodes;
  std::vector<Triangle> triangles;
  /// electrodes[l] lists the boundary edges under electrode l.
  std::vector<std::vector<Edge>> electrodes;
  /// Sorted ids of nodes not on the boundary.
  std::vector<int> interior;

  Index node_count() const { return Index(nodes.size()); }
  Index electrode_count() const { return Index(electrodes.size()); }
};

inline double signed_area(const Mesh& m, const Triangle& t) {
  const Point a = m.nodes[t[0]], b = m.nodes[t[1]], c = m.nodes[t[2]];
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

namespace detail {

inline Edge sorted_edge(int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; }

inline std::map<Edge, int> edge_counts(const Mesh& m) {
  std::map<Edge, int> counts;
  for (const auto& t : m.triangles) {
    for (int k = 0; k < 3; ++k) ++counts[sorted_edge(t[k], t[(k + 1) % 3])];
  }
  return counts;
}

}  // namespace detail

/// Nodes on edges that belong to exactly one triangle, sorted.
inline std::vector<int> boundary_nodes(const Mesh& m) {
  std::set<int> b;
  for (const auto& [e, c] : detail::edge_counts(m)) {
    if (c == 1) {
      b.insert(e[0]);
      b.insert(e[1]);
    }
  }
  return {b.begin(), b.end()};
}

/// Interior node ids recomputed from the triangulation.
inline std::vector<int> compute_interior(const Mesh& m) {
  const auto b = boundary_nodes(m);
  std::vector<int> out;
  for (int i = 0; i < int(m.nodes.size()); ++i) {
    if (!std::binary_search(b.begin(), b.end(), i)) out.push_back(i);
  }
  return out;
}

/// Throws MeshGenFailed describing the first violated invariant.
inline void validate_mesh(const Mesh& m) {
  const int n = int(m.nodes.size());
  for (std::size_t k = 0; k < m.triangles.size(); ++k) {
    for (int v : m.triangles[k]) {
      if (v < 0 || v >= n) throw MeshGenFailed("triangle " + std::to_string(k) + " has a bad node id");
    }
    if (!(signed_area(m, m.triangles[k]) > 0.0)) {
      throw MeshGenFailed("triangle " + std::to_string(k) + " is not positively oriented");
    }
  }
  const auto counts = detail::edge_counts(m);
  for (const auto& [e, c] : counts) {
    if (c > 2) throw MeshGenFailed("edge shared by more than two triangles");
  }
  std::set<Edge> seen;
  for (std::size_t l = 0; l < m.electrodes.size(); ++l) {
    if (m.electrodes[l].empty()) throw MeshGenFailed("electrode " + std::to_string(l) + " has no edges");
    for (const auto& e : m.electrodes[l]) {
      const Edge s = detail::sorted_edge(e[0], e[1]);
      const auto it = counts.find(s);
      if (it == counts.end() || it->second != 1) {
        throw MeshGenFailed("electrode " + std::to_string(l) + " has an edge off the boundary");
      }
      if (!seen.insert(s).second) throw MeshGenFailed("electrode edge sets overlap");
    }
  }
  if (m.interior != compute_interior(m)) {
    throw MeshGenFailed("interior node list does not match the triangulation");
  }
}

struct DiskMeshOptions {
  double radius = 0.14;
  int electrodes = 16;
  /// Fraction of the circumference covered by electrodes.
  double coverage = 16 * 0.025 / (2.0 * std::numbers::pi * 0.14);
  int target_nodes = 424;
  /// Boundary nodes per electrode-plus-gap period (even); 0 picks one from target_nodes.
  int boundary_per_period = 0;
  /// Angle of the center of electrode 0.
  double first_electrode_angle = 0.0;
};

namespace detail {

struct RingLayout {
  std::vector<double> radii;
  std::vector<int> counts;
  int total = 0;
};

/// Rings from the boundary inward with spacing h(r) growing linearly from
/// h_b at r = R to h_c at r = 0.
inline RingLayout ring_layout(double R, int n_boundary, double h_c) {
  const double h_b = 2.0 * std::numbers::pi * R / n_boundary;
  auto h = [&](double r) { return h_b + (h_c - h_b) * (1.0 - r / R); };
  RingLayout lay;
  lay.radii.push_back(R);
  lay.counts.push_back(n_boundary);
  lay.total = n_boundary + 1;  // plus the center node
  double r = R;
  while (true) {
    const double step = 0.5 * std::sqrt(3.0) * h(r);
    r -= step;
    if (r < 0.6 * h(r)) break;
    const int count = std::max(6, int(std::lround(2.0 * std::numbers::pi * r / h(r))));
    lay.radii.push_back(r);
    lay.counts.push_back(count);
    lay.total += count;
  }
  return lay;
}

/// Zipper triangulation between two rings given as node ids with increasing
/// angles in [0, 2 pi).
inline void zip_rings(const std::vector<int>& outer, const std::vector<double>& a_ang,
                      const std::vector<int>& inner, const std::vector<double>& b_ang,
                      std::vector<Triangle>& tris) {
  const int na = int(outer.size());
  const int nb = int(inner.size());
  const double two_pi = 2.0 * std::numbers::pi;
  auto wrap = [&](double x) {
    x = std::fmod(x, two_pi);
    return x < 0 ? x + two_pi : x;
  };
  int b0 = 0;
  double best = two_pi;
  for (int j = 0; j < nb; ++j) {
    const double d = std::abs(std::remainder(b_ang[j] - a_ang[0], two_pi));
    if (d < best) {
      best = d;
      b0 = j;
    }
  }
  auto ua = [&](int i) { return i == na ? two_pi : wrap(a_ang[i] - a_ang[0]); };
  const double ub0 = std::remainder(b_ang[b0] - a_ang[0], two_pi);
  auto ub = [&](int j) {
    if (j == nb) return ub0 + two_pi;
    return ub0 + wrap(b_ang[(b0 + j) % nb] - b_ang[b0]);
  };
  int i = 0, j = 0;
  while (i < na || j < nb) {
    const bool advance_a = j == nb || (i < na && ua(i + 1) <= ub(j + 1));
    const int a_cur = outer[i % na];
    const int b_cur = inner[(b0 + j) % nb];
    if (advance_a) {
      tris.push_back({a_cur, outer[(i + 1) % na], b_cur});
      ++i;
    } else {
      tris.push_back({a_cur, inner[(b0 + j + 1) % nb], b_cur});
      ++j;
    }
  }
}

inline int auto_boundary_per_period(int target_nodes) {
  return std::max(4, 2 * int(std::lround(3.0 * std::sqrt(target_nodes / 424.0))));
}

}  // namespace detail

/// Disk mesh graded toward the boundary, with `electrodes` equally spaced
/// electrodes covering `coverage` of the circumference.
inline Mesh gen_disk_mesh(const DiskMeshOptions& opts) {
  const double R = opts.radius;
  const int L = opts.electrodes;
  if (!(R > 0.0) || L < 1) throw MeshGenFailed("gen_disk_mesh: radius and electrode count must be positive");
  if (!(opts.coverage > 0.0 && opts.coverage < 1.0)) {
    throw MeshGenFailed("gen_disk_mesh: electrode coverage must lie in (0, 1)");
  }
  const int p = opts.boundary_per_period > 0 ? opts.boundary_per_period
                                            : detail::auto_boundary_per_period(opts.target_nodes);
  if (p < 2 || p % 2 != 0) throw MeshGenFailed("gen_disk_mesh: boundary_per_period must be even and >= 2");
  const int n_boundary = L * p;
  if (opts.target_nodes < n_boundary + 7) {
    throw MeshGenFailed("gen_disk_mesh: target_nodes too small for the boundary resolution");
  }

  // Center spacing chosen by bisection so the node count is closest to the target.
  const double h_b = 2.0 * std::numbers::pi * R / n_boundary;
  double lo = h_b, hi = 2.0 * R;
  detail::RingLayout best_layout = detail::ring_layout(R, n_boundary, lo);
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const auto lay = detail::ring_layout(R, n_boundary, mid);
    if (std::abs(lay.total - opts.target_nodes) < std::abs(best_layout.total - opts.target_nodes)) {
      best_layout = lay;
    }
    if (lay.total > opts.target_nodes) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const auto& lay = best_layout;

  Mesh mesh;
  const double two_pi = 2.0 * std::numbers::pi;
  const double half = std::numbers::pi * opts.coverage / L;  // electrode half-angle
  const double period = two_pi / L;
  const int e_edges = p / 2, g_edges = p / 2;

  std::vector<std::vector<int>> ring_ids;
  std::vector<std::vector<double>> ring_angles;
  auto wrap = [&](double x) {
    x = std::fmod(x, two_pi);
    return x < 0 ? x + two_pi : x;
  };

  // Boundary ring: electrode l spans [c_l - half, c_l + half].
  {
    std::vector<std::pair<double, int>> ring;  // (angle, electrode index or -1 for gap start)
    std::vector<double> angles;
    for (int l = 0; l < L; ++l) {
      const double c = opts.first_electrode_angle + l * period;
      for (int k = 0; k < e_edges; ++k) angles.push_back(c - half + 2.0 * half * k / e_edges);
      const double gap = period - 2.0 * half;
      for (int k = 0; k < g_edges; ++k) angles.push_back(c + half + gap * k / g_edges);
    }
    std::vector<int> ids;
    std::vector<double> wrapped;
    for (double a : angles) {
      ids.push_back(int(mesh.nodes.size()));
      mesh.nodes.emplace_back(R * std::cos(a), R * std::sin(a));
      wrapped.push_back(wrap(a));
    }
    // Electrode edges: consecutive boundary nodes within each electrode span.
    mesh.electrodes.resize(L);
    for (int l = 0; l < L; ++l) {
      const int start = l * p;
      for (int k = 0; k < e_edges; ++k) {
        mesh.electrodes[l].push_back({ids[start + k], ids[(start + k + 1) % n_boundary]});
      }
    }
    // Order by wrapped angle for zipping.
    std::vector<int> order(ids.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = int(k);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return wrapped[a] < wrapped[b]; });
    std::vector<int> sid;
    std::vector<double> sang;
    for (int k : order) {
      sid.push_back(ids[k]);
      sang.push_back(wrapped[k]);
    }
    ring_ids.push_back(sid);
    ring_angles.push_back(sang);
  }

  for (std::size_t k = 1; k < lay.radii.size(); ++k) {
    const int count = lay.counts[k];
    const double r = lay.radii[k];
    const double offset = opts.first_electrode_angle + (k % 2 == 1 ? std::numbers::pi / count : 0.0);
    std::vector<std::pair<double, int>> ring;
    for (int j = 0; j < count; ++j) {
      const double a = wrap(offset + two_pi * j / count);
      ring.emplace_back(a, int(mesh.nodes.size()));
      mesh.nodes.emplace_back(r * std::cos(a), r * std::sin(a));
    }
    std::sort(ring.begin(), ring.end());
    std::vector<int> sid;
    std::vector<double> sang;
    for (const auto& [a, id] : ring) {
      sid.push_back(id);
      sang.push_back(a);
    }
    ring_ids.push_back(sid);
    ring_angles.push_back(sang);
  }
  const int center = int(mesh.nodes.size());
  mesh.nodes.emplace_back(0.0, 0.0);

  for (std::size_t k = 0; k + 1 < ring_ids.size(); ++k) {
    detail::zip_rings(ring_ids[k], ring_angles[k], ring_ids[k + 1], ring_angles[k + 1], mesh.triangles);
  }
  const auto& last = ring_ids.back();
  for (std::size_t j = 0; j < last.size(); ++j) {
    mesh.triangles.push_back({last[j], last[(j + 1) % last.size()], center});
  }
  for (auto& t : mesh.triangles) {
    if (signed_area(mesh, t) < 0.0) std::swap(t[1], t[2]);
  }
  mesh.interior = compute_interior(mesh);
  validate_mesh(mesh);
  return mesh;
}

/// Disk mesh from the basic parameters; coverage is L * width / circumference.
inline Mesh gen_disk_mesh(double radius, int L, double coverage, int target_nodes) {
  DiskMeshOptions o;
  o.radius = radius;
  o.electrodes = L;
  o.coverage = coverage;
  o.target_nodes = target_nodes;
  return gen_disk_mesh(o);
}

/// Splits every triangle into four. Midpoints of boundary edges are pushed
/// onto the circle of radius `radius` (pass 0 to keep straight edges).
inline Mesh refine_uniform(const Mesh& m, double radius) {
  Mesh out;
  out.nodes = m.nodes;
  const auto counts = detail::edge_counts(m);
  std::map<Edge, int> mid;
  auto midpoint = [&](int a, int b) {
    const Edge e = detail::sorted_edge(a, b);
    const auto it = mid.find(e);
    if (it != mid.end()) return it->second;
    Point p = 0.5 * (m.nodes[a] + m.nodes[b]);
    if (radius > 0.0 && counts.at(e) == 1) p *= radius / p.norm();
    const int id = int(out.nodes.size());
    out.nodes.push_back(p);
    mid.emplace(e, id);
    return id;
  };
  for (const auto& t : m.triangles) {
    const int a = t[0], b = t[1], c = t[2];
    const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
    out.triangles.push_back({a, ab, ca});
    out.triangles.push_back({ab, b, bc});
    out.triangles.push_back({ca, bc, c});
    out.triangles.push_back({ab, bc, ca});
  }
  out.electrodes.resize(m.electrodes.size());
  for (std::size_t l = 0; l < m.electrodes.size(); ++l) {
    for (const auto& e : m.electrodes[l]) {
      const int c = mid.at(detail::sorted_edge(e[0], e[1]));
      out.electrodes[l].push_back({e[0], c});
      out.electrodes[l].push_back({c, e[1]});
    }
  }
  for (auto& t : out.triangles) {
    if (signed_area(out, t) < 0.0) std::swap(t[1], t[2]);
  }
  out.interior = compute_interior(out);
  validate_mesh(out);
  return out;
}

/// Triangles sharing each node.
inline std::vector<std::vector<int>> node_triangles(const Mesh& m) {
  std::vector<std::vector<int>> out(m.nodes.size());
  for (int k = 0; k < int(m.triangles.size()); ++k) {
    for (int v : m.triangles[k]) out[v].push_back(k);
  }
  return out;
}

/// Smallest interior angle over all triangles, in degrees.
inline double min_angle_degrees(const Mesh& m) {
  double worst = 180.0;
  for (const auto& t : m.triangles) {
    for (int k = 0; k < 3; ++k) {
      const Point u = m.nodes[t[(k + 1) % 3]] - m.nodes[t[k]];
      const Point v = m.nodes[t[(k + 2) % 3]] - m.nodes[t[k]];
      const double ang = std::acos(std::clamp(u.dot(v) / (u.norm() * v.norm()), -1.0, 1.0));
      worst = std::min(worst, ang * 180.0 / std::numbers::pi);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Text format. Sections, each introduced by a header line with its count:
//
//   NODES <n>          then n lines: id x y
//   TRIANGLES <t>      then t lines: id n1 n2 n3
//   ELECTRODES <L>     then L lines: electrode-id a1 b1 a2 b2 ...
//   INTERIOR <k>       then k lines: node-id
//
// Ids are 0-based and must appear in order. Blank lines and lines starting
// with '#' are ignored.
// ---------------------------------------------------------------------------

inline void write_mesh(std::ostream& os, const Mesh& m) {
  char buf[128];
  os << "NODES " << m.nodes.size() << "\n";
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu %.17e %.17e\n", i, m.nodes[i].x(), m.nodes[i].y());
    os << buf;
  }
  os << "TRIANGLES " << m.triangles.size() << "\n";
  for (std::size_t k = 0; k < m.triangles.size(); ++k) {
    const auto& t = m.triangles[k];
    os << k << ' ' << t[0] << ' ' << t[1] << ' ' << t[2] << "\n";
  }
  os << "ELECTRODES " << m.electrodes.size() << "\n";
  for (std::size_t l = 0; l < m.electrodes.size(); ++l) {
    os << l;
    for (const auto& e : m.electrodes[l]) os << ' ' << e[0] << ' ' << e[1];
    os << "\n";
  }
  os << "INTERIOR " << m.interior.size() << "\n";
  for (int v : m.interior) os << v << "\n";
}

inline void write_mesh(const std::string& path, const Mesh& m) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open " + path + " for writing");
  write_mesh(os, m);
}

inline Mesh read_mesh(std::istream& is) {
  Mesh m;
  std::vector<std::string> lines;
  for (std::string line; std::getline(is, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.push_back(line.substr(first));
  }
  std::size_t pos = 0;
  auto header = [&](const std::string& name) {
    if (pos >= lines.size()) throw ParseError("mesh: missing section " + name);
    std::istringstream hs(lines[pos++]);
    std::string tag;
    long count = -1;
    if (!(hs >> tag >> count) || tag != name || count < 0) {
      throw ParseError("mesh: expected '" + name + " <count>' header");
    }
    return std::size_t(count);
  };
  auto row = [&](const std::string& name, std::size_t expect_id) {
    if (pos >= lines.size()) throw ParseError("mesh: section " + name + " ends early");
    std::istringstream rs(lines[pos++]);
    long id = -1;
    if (!(rs >> id) || id != long(expect_id)) {
      throw ParseError("mesh: " + name + " row " + std::to_string(expect_id) + " has a bad id");
    }
    return rs;
  };
  const std::size_t n = header("NODES");
  for (std::size_t i = 0; i < n; ++i) {
    auto rs = row("NODES", i);
    double x, y;
    if (!(rs >> x >> y)) throw ParseError("mesh: bad node row " + std::to_string(i));
    m.nodes.emplace_back(x, y);
  }
  const std::size_t t = header("TRIANGLES");
  for (std::size_t k = 0; k < t; ++k) {
    auto rs = row("TRIANGLES", k);
    Triangle tri;
    if (!(rs >> tri[0] >> tri[1] >> tri[2])) throw ParseError("mesh: bad triangle row " + std::to_string(k));
    m.triangles.push_back(tri);
  }
  const std::size_t L = header("ELECTRODES");
  m.electrodes.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    auto rs = row("ELECTRODES", l);
    int a, b;
    while (rs >> a) {
      if (!(rs >> b)) throw ParseError("mesh: electrode " + std::to_string(l) + " has an odd node count");
      m.electrodes[l].push_back({a, b});
    }
  }
  const std::size_t k = header("INTERIOR");
  for (std::size_t i = 0; i < k; ++i) {
    if (pos >= lines.size()) throw ParseError("mesh: section INTERIOR ends early");
    std::istringstream rs(lines[pos++]);
    int v;
    if (!(rs >> v)) throw ParseError("mesh: bad interior row");
    m.interior.push_back(v);
  }
  try {
    validate_mesh(m);
  } catch (const MeshGenFailed& e) {
    throw ParseError(std::string("mesh: ") + e.what());
  }
  return m;
}

inline Mesh read_mesh(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open mesh file " + path);
  return read_mesh(is);
}

}  // namespace epinv::eit
