#pragma once

// Axis-aligned quadrilateral meshes of a rectangle with quad-tree refinement.
//
// Cells are leaves of a forest of quad-trees rooted at an nx-by-ny base grid.
// Geometry is kept on an integer lattice (2^kLatticeBits units per base cell)
// so that neighbor searches, facet deduplication and the midpoint ordering
// are exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "gld/errors.hpp"

namespace gld {

enum class Side : std::uint8_t { Left = 0, Right = 1, Bottom = 2, Top = 3 };

inline constexpr std::array<Side, 4> kAllSides{Side::Left, Side::Right, Side::Bottom,
                                               Side::Top};

inline const char* to_string(Side side) {
  switch (side) {
    case Side::Left: return "left";
    case Side::Right: return "right";
    case Side::Bottom: return "bottom";
    case Side::Top: return "top";
  }
  return "?";
}

enum class BoundaryMarker : std::uint8_t { Interior, DirichletV, NeumannV };

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Subset of the four sides of the rectangle.
class EdgeSet {
 public:
  EdgeSet() = default;
  EdgeSet(std::initializer_list<Side> sides) {
    for (Side s : sides) insert(s);
  }
  void insert(Side s) { bits_[static_cast<int>(s)] = true; }
  bool contains(Side s) const { return bits_[static_cast<int>(s)]; }

 private:
  std::array<bool, 4> bits_{};
};

struct MeshGeometry {
  double width = 1.0;
  double height = 1.0;
  int nx = 1;
  int ny = 1;
  std::array<BoundaryMarker, 4> side_markers{BoundaryMarker::NeumannV, BoundaryMarker::NeumannV,
                                             BoundaryMarker::DirichletV,
                                             BoundaryMarker::DirichletV};
  BoundaryMarker marker(Side s) const { return side_markers[static_cast<int>(s)]; }
};

/// Position of a quad-tree node: refinement level and index among the
/// nodes of that level.
struct CellKey {
  int level = 0;
  std::int64_t i = 0;
  std::int64_t j = 0;
  auto operator<=>(const CellKey&) const = default;

  CellKey parent() const { return {level - 1, i >> 1, j >> 1}; }
  CellKey child(int a, int b) const { return {level + 1, 2 * i + a, 2 * j + b}; }
};

struct Cell {
  CellKey key;
  std::array<std::size_t, 4> vertices{};  // counter-clockwise from lower-left
  Point2 lower;
  Point2 upper;

  int level() const { return key.level; }
  double width() const { return upper.x - lower.x; }
  double height() const { return upper.y - lower.y; }
  double area() const { return width() * height(); }
  double diameter() const { return std::hypot(width(), height()); }
  Point2 center() const { return {0.5 * (lower.x + upper.x), 0.5 * (lower.y + upper.y)}; }
};

struct Facet {
  std::array<std::size_t, 2> vertices{};  // increasing coordinate along the facet
  std::array<std::size_t, 2> cells{};     // cells[0] has the lower id
  std::size_t cell_count = 0;
  Point2 a;
  Point2 b;
  Point2 normal;  // unit, outward from cells[0]
  double length = 0.0;
  bool horizontal = false;
  BoundaryMarker marker = BoundaryMarker::Interior;
  std::optional<Side> boundary_side;

  bool is_boundary() const { return boundary_side.has_value(); }
  Point2 midpoint() const { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }
};

/// A facet as seen from one of its cells. [s0, s1] is the part of the cell
/// side covered by the facet, in the side's [-1, 1] parametrization (which
/// runs in increasing x or y, like the facet's own parametrization).
struct CellFacet {
  std::size_t facet = 0;
  Side side = Side::Left;
  double s0 = -1.0;
  double s1 = 1.0;

  Point2 outward_normal() const {
    switch (side) {
      case Side::Left: return {-1.0, 0.0};
      case Side::Right: return {1.0, 0.0};
      case Side::Bottom: return {0.0, -1.0};
      case Side::Top: return {0.0, 1.0};
    }
    return {};
  }
};

class Mesh;

namespace detail {
struct LeafSpec {
  CellKey key;
  std::size_t parent = 0;
};
Mesh assemble_mesh(const MeshGeometry& geometry, std::vector<LeafSpec> leaves);
}  // namespace detail

class Mesh {
 public:
  static constexpr int kLatticeBits = 20;
  static constexpr int kMaxLevel = kLatticeBits - 2;

  const MeshGeometry& geometry() const { return geometry_; }
  std::span<const Point2> vertices() const { return vertices_; }
  std::span<const Cell> cells() const { return cells_; }
  std::span<const Facet> facets() const { return facets_; }
  const Cell& cell(std::size_t c) const { return cells_[c]; }
  const Facet& facet(std::size_t f) const { return facets_[f]; }
  std::span<const CellFacet> cell_facets(std::size_t c) const { return cell_facets_[c]; }
  std::size_t num_cells() const { return cells_.size(); }
  std::size_t num_facets() const { return facets_.size(); }

  /// Index of the cell in the previous mesh this one was refined from.
  std::span<const std::size_t> parents() const { return parents_; }

  /// Leaf index for a key, if that key is a leaf.
  std::optional<std::size_t> find(const CellKey& key) const {
    auto it = leaf_index_.find(key);
    if (it == leaf_index_.end()) return std::nullopt;
    return it->second;
  }

  double width() const { return geometry_.width; }
  double height() const { return geometry_.height; }
  double area() const { return geometry_.width * geometry_.height; }
  double diameter() const { return std::hypot(geometry_.width, geometry_.height); }
  double max_cell_diameter() const {
    double h = 0.0;
    for (const auto& c : cells_) h = std::max(h, c.diameter());
    return h;
  }
  int max_level() const {
    int l = 0;
    for (const auto& c : cells_) l = std::max(l, c.level());
    return l;
  }

  /// Number of key positions of a level along x and y.
  std::int64_t extent_x(int level) const { return std::int64_t{geometry_.nx} << level; }
  std::int64_t extent_y(int level) const { return std::int64_t{geometry_.ny} << level; }

 private:
  friend Mesh detail::assemble_mesh(const MeshGeometry&, std::vector<detail::LeafSpec>);

  MeshGeometry geometry_;
  std::vector<Point2> vertices_;
  std::vector<Cell> cells_;
  std::vector<Facet> facets_;
  std::vector<std::vector<CellFacet>> cell_facets_;
  std::vector<std::size_t> parents_;
  std::map<CellKey, std::size_t> leaf_index_;
};

namespace detail {

using Lattice = std::int64_t;

inline Lattice lattice_lo(std::int64_t index, int level) {
  return index << (Mesh::kLatticeBits - level);
}

inline double lattice_to_x(Lattice v, const MeshGeometry& g) {
  return static_cast<double>(v) / static_cast<double>(Lattice{1} << Mesh::kLatticeBits) *
         (g.width / g.nx);
}
inline double lattice_to_y(Lattice v, const MeshGeometry& g) {
  return static_cast<double>(v) / static_cast<double>(Lattice{1} << Mesh::kLatticeBits) *
         (g.height / g.ny);
}

enum class NeighborKind { Outside, Same, Coarser, Finer };

struct NeighborInfo {
  NeighborKind kind = NeighborKind::Outside;
  CellKey key;  // same-level key, or the coarser leaf's key
};

inline CellKey shifted(const CellKey& k, Side side) {
  switch (side) {
    case Side::Left: return {k.level, k.i - 1, k.j};
    case Side::Right: return {k.level, k.i + 1, k.j};
    case Side::Bottom: return {k.level, k.i, k.j - 1};
    case Side::Top: return {k.level, k.i, k.j + 1};
  }
  return k;
}

template <class Contains>
NeighborInfo classify_neighbor(const CellKey& key, Side side, const MeshGeometry& g,
                               Contains&& contains) {
  CellKey n = shifted(key, side);
  const std::int64_t ex = std::int64_t{g.nx} << key.level;
  const std::int64_t ey = std::int64_t{g.ny} << key.level;
  if (n.i < 0 || n.j < 0 || n.i >= ex || n.j >= ey) return {NeighborKind::Outside, n};
  if (contains(n)) return {NeighborKind::Same, n};
  CellKey up = n;
  while (up.level > 0) {
    up = up.parent();
    if (contains(up)) return {NeighborKind::Coarser, up};
  }
  return {NeighborKind::Finer, n};
}

inline Mesh assemble_mesh(const MeshGeometry& g, std::vector<LeafSpec> leaves) {
  Mesh mesh;
  mesh.geometry_ = g;

  auto lower_corner = [](const CellKey& k) {
    return std::pair{lattice_lo(k.j, k.level), lattice_lo(k.i, k.level)};
  };
  std::sort(leaves.begin(), leaves.end(), [&](const LeafSpec& l, const LeafSpec& r) {
    return lower_corner(l.key) < lower_corner(r.key);
  });

  for (std::size_t c = 0; c < leaves.size(); ++c) mesh.leaf_index_.emplace(leaves[c].key, c);
  auto contains = [&](const CellKey& k) { return mesh.leaf_index_.count(k) > 0; };

  // Vertices: all cell corners, ordered by (y, x).
  std::map<std::pair<Lattice, Lattice>, std::size_t> vertex_index;
  auto corners = [](const CellKey& k) {
    const Lattice x0 = lattice_lo(k.i, k.level), x1 = lattice_lo(k.i + 1, k.level);
    const Lattice y0 = lattice_lo(k.j, k.level), y1 = lattice_lo(k.j + 1, k.level);
    return std::array<std::pair<Lattice, Lattice>, 4>{
        std::pair{y0, x0}, std::pair{y0, x1}, std::pair{y1, x1}, std::pair{y1, x0}};
  };
  for (const auto& leaf : leaves)
    for (const auto& p : corners(leaf.key)) vertex_index.emplace(p, 0);
  {
    std::size_t v = 0;
    for (auto& [p, idx] : vertex_index) {
      idx = v++;
      mesh.vertices_.push_back({lattice_to_x(p.second, g), lattice_to_y(p.first, g)});
    }
  }

  mesh.cells_.reserve(leaves.size());
  mesh.parents_.reserve(leaves.size());
  for (const auto& leaf : leaves) {
    Cell cell;
    cell.key = leaf.key;
    const auto cs = corners(leaf.key);
    for (int q = 0; q < 4; ++q) cell.vertices[q] = vertex_index.at(cs[q]);
    cell.lower = mesh.vertices_[cell.vertices[0]];
    cell.upper = mesh.vertices_[cell.vertices[2]];
    mesh.cells_.push_back(cell);
    mesh.parents_.push_back(leaf.parent);
  }

  // Facets: every cell side whose neighbor is not finer.
  struct Segment {
    Lattice ax, ay, bx, by;
    auto operator<=>(const Segment&) const = default;
  };
  std::set<Segment> segments;
  for (const auto& leaf : leaves) {
    const CellKey& k = leaf.key;
    const Lattice x0 = lattice_lo(k.i, k.level), x1 = lattice_lo(k.i + 1, k.level);
    const Lattice y0 = lattice_lo(k.j, k.level), y1 = lattice_lo(k.j + 1, k.level);
    for (Side side : kAllSides) {
      if (classify_neighbor(k, side, g, contains).kind == NeighborKind::Finer) continue;
      switch (side) {
        case Side::Left: segments.insert({x0, y0, x0, y1}); break;
        case Side::Right: segments.insert({x1, y0, x1, y1}); break;
        case Side::Bottom: segments.insert({x0, y0, x1, y0}); break;
        case Side::Top: segments.insert({x0, y1, x1, y1}); break;
      }
    }
  }

  std::vector<Segment> ordered(segments.begin(), segments.end());
  // Lexicographic by midpoint (x, then y).
  std::sort(ordered.begin(), ordered.end(), [](const Segment& l, const Segment& r) {
    return std::pair{l.ax + l.bx, l.ay + l.by} < std::pair{r.ax + r.bx, r.ay + r.by};
  });

  const Lattice x_end = Lattice{g.nx} << Mesh::kLatticeBits;
  const Lattice y_end = Lattice{g.ny} << Mesh::kLatticeBits;
  const int deepest = [&] {
    int l = 0;
    for (const auto& leaf : leaves) l = std::max(l, leaf.key.level);
    return l;
  }();
  auto locate = [&](Lattice px, Lattice py) -> std::optional<std::size_t> {
    if (px < 0 || py < 0 || px >= x_end || py >= y_end) return std::nullopt;
    for (int level = 0; level <= deepest; ++level) {
      const int shift = Mesh::kLatticeBits - level;
      auto it = mesh.leaf_index_.find(CellKey{level, px >> shift, py >> shift});
      if (it != mesh.leaf_index_.end()) return it->second;
    }
    return std::nullopt;
  };

  mesh.cell_facets_.assign(leaves.size(), {});
  mesh.facets_.reserve(ordered.size());
  for (const Segment& s : ordered) {
    Facet f;
    f.horizontal = (s.ay == s.by);
    f.a = {lattice_to_x(s.ax, g), lattice_to_y(s.ay, g)};
    f.b = {lattice_to_x(s.bx, g), lattice_to_y(s.by, g)};
    f.vertices = {vertex_index.at({s.ay, s.ax}), vertex_index.at({s.by, s.bx})};
    f.length = f.horizontal ? f.b.x - f.a.x : f.b.y - f.a.y;

    // Two-times midpoint, probed one lattice unit on each side.
    const Lattice mx = (s.ax + s.bx) / 2, my = (s.ay + s.by) / 2;
    std::optional<std::size_t> lo_side, hi_side;  // below/left and above/right
    if (f.horizontal) {
      lo_side = locate(mx, my - 1);
      hi_side = locate(mx, my);
    } else {
      lo_side = locate(mx - 1, my);
      hi_side = locate(mx, my);
    }
    std::vector<std::size_t> adj;
    if (lo_side) adj.push_back(*lo_side);
    if (hi_side) adj.push_back(*hi_side);
    std::sort(adj.begin(), adj.end());
    f.cell_count = adj.size();
    for (std::size_t q = 0; q < adj.size(); ++q) f.cells[q] = adj[q];

    if (adj.size() == 1) {
      if (f.horizontal)
        f.boundary_side = (s.ay == 0) ? Side::Bottom : Side::Top;
      else
        f.boundary_side = (s.ax == 0) ? Side::Left : Side::Right;
      f.marker = g.marker(*f.boundary_side);
    }

    const std::size_t facet_id = mesh.facets_.size();
    for (std::size_t q = 0; q < adj.size(); ++q) {
      const CellKey& k = leaves[adj[q]].key;
      const Lattice x0 = lattice_lo(k.i, k.level), x1 = lattice_lo(k.i + 1, k.level);
      const Lattice y0 = lattice_lo(k.j, k.level), y1 = lattice_lo(k.j + 1, k.level);
      CellFacet cf;
      cf.facet = facet_id;
      if (f.horizontal) {
        cf.side = (s.ay == y0) ? Side::Bottom : Side::Top;
        const double span = static_cast<double>(x1 - x0);
        cf.s0 = 2.0 * static_cast<double>(s.ax - x0) / span - 1.0;
        cf.s1 = 2.0 * static_cast<double>(s.bx - x0) / span - 1.0;
      } else {
        cf.side = (s.ax == x0) ? Side::Left : Side::Right;
        const double span = static_cast<double>(y1 - y0);
        cf.s0 = 2.0 * static_cast<double>(s.ay - y0) / span - 1.0;
        cf.s1 = 2.0 * static_cast<double>(s.by - y0) / span - 1.0;
      }
      if (q == 0) f.normal = cf.outward_normal();
      mesh.cell_facets_[adj[q]].push_back(cf);
    }
    mesh.facets_.push_back(f);
  }

  for (auto& list : mesh.cell_facets_) {
    std::sort(list.begin(), list.end(), [](const CellFacet& l, const CellFacet& r) {
      return std::pair{static_cast<int>(l.side), l.s0} < std::pair{static_cast<int>(r.side), r.s0};
    });
  }
  return mesh;
}

}  // namespace detail

/// nx-by-ny uniform mesh of [0, width] x [0, height]. Every side of the
/// rectangle must appear in exactly one of the two edge sets.
inline Mesh build_rectangle_mesh(double width, double height, int nx, int ny,
                                 const EdgeSet& dirichlet_edges, const EdgeSet& neumann_edges) {
  std::vector<std::string> errors;
  if (!(width > 0.0) || !(height > 0.0)) errors.push_back("mesh extent must be positive");
  if (nx < 1 || ny < 1) errors.push_back("mesh subdivisions nx, ny must be >= 1");
  MeshGeometry g;
  g.width = width;
  g.height = height;
  g.nx = nx;
  g.ny = ny;
  for (Side s : kAllSides) {
    const bool d = dirichlet_edges.contains(s), n = neumann_edges.contains(s);
    if (d && n)
      errors.push_back(std::string("edge '") + to_string(s) + "' is both Dirichlet and Neumann");
    else if (!d && !n)
      errors.push_back(std::string("edge '") + to_string(s) + "' has no boundary condition");
    g.side_markers[static_cast<int>(s)] = d ? BoundaryMarker::DirichletV : BoundaryMarker::NeumannV;
  }
  if (!errors.empty()) throw ConfigurationError(std::move(errors));

  std::vector<detail::LeafSpec> leaves;
  leaves.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) leaves.push_back({CellKey{0, i, j}, leaves.size()});
  return detail::assemble_mesh(g, std::move(leaves));
}

/// Splits the flagged cells into four and, where needed, further cells so
/// that edge-adjacent cells differ by at most one level.
inline Mesh refine_adaptive(const Mesh& mesh, std::span<const std::size_t> flagged_cells) {
  const auto& g = mesh.geometry();
  std::vector<char> refine(mesh.num_cells(), 0);
  std::vector<std::size_t> work;
  for (std::size_t c : flagged_cells) {
    if (c >= mesh.num_cells()) throw ConfigurationError("flagged cell id out of range");
    if (!refine[c]) {
      refine[c] = 1;
      work.push_back(c);
    }
  }
  auto contains = [&](const CellKey& k) { return mesh.find(k).has_value(); };
  while (!work.empty()) {
    const std::size_t c = work.back();
    work.pop_back();
    const CellKey& key = mesh.cell(c).key;
    if (key.level + 1 > Mesh::kMaxLevel) throw ConfigurationError("maximum refinement level reached");
    for (Side side : kAllSides) {
      auto info = detail::classify_neighbor(key, side, g, contains);
      if (info.kind != detail::NeighborKind::Coarser) continue;
      const std::size_t d = *mesh.find(info.key);
      if (!refine[d]) {
        refine[d] = 1;
        work.push_back(d);
      }
    }
  }

  std::vector<detail::LeafSpec> leaves;
  leaves.reserve(mesh.num_cells() + 3 * flagged_cells.size());
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const CellKey& k = mesh.cell(c).key;
    if (!refine[c]) {
      leaves.push_back({k, c});
      continue;
    }
    for (int b = 0; b < 2; ++b)
      for (int a = 0; a < 2; ++a) leaves.push_back({k.child(a, b), c});
  }
  return detail::assemble_mesh(g, std::move(leaves));
}

inline Mesh refine_uniform(const Mesh& mesh) {
  std::vector<std::size_t> all(mesh.num_cells());
  for (std::size_t c = 0; c < all.size(); ++c) all[c] = c;
  return refine_adaptive(mesh, all);
}

/// The facet list in its canonical order (lexicographic by midpoint).
inline std::span<const Facet> skeleton_facets(const Mesh& mesh) { return mesh.facets(); }

/// Checks every structural invariant; returns a description of each violation.
inline std::vector<std::string> validate_mesh(const Mesh& mesh) {
  std::vector<std::string> out;
  double area = 0.0;
  for (std::size_t c = 0; c < mesh.num_cells(); ++c) {
    const Cell& cell = mesh.cell(c);
    if (!(cell.area() > 0.0)) out.push_back("cell " + std::to_string(c) + " has no area");
    area += cell.area();
    std::size_t boundary_or_interior = mesh.cell_facets(c).size();
    if (boundary_or_interior < 4 || boundary_or_interior > 8)
      out.push_back("cell " + std::to_string(c) + " has " +
                    std::to_string(boundary_or_interior) + " facets");
  }
  if (std::abs(area - mesh.area()) > 1e-13 * mesh.area()) out.push_back("cell areas do not sum to the domain area");
  for (std::size_t f = 0; f < mesh.num_facets(); ++f) {
    const Facet& facet = mesh.facet(f);
    const double n = std::hypot(facet.normal.x, facet.normal.y);
    if (std::abs(n - 1.0) > 1e-14) out.push_back("facet " + std::to_string(f) + " normal not unit");
    if (!(facet.length > 0.0)) out.push_back("facet " + std::to_string(f) + " has no length");
    if (facet.is_boundary()) {
      if (facet.cell_count != 1) out.push_back("boundary facet " + std::to_string(f) + " adjacency");
      if (facet.marker == BoundaryMarker::Interior)
        out.push_back("boundary facet " + std::to_string(f) + " unmarked");
    } else {
      if (facet.cell_count != 2) out.push_back("interior facet " + std::to_string(f) + " adjacency");
      const int l0 = mesh.cell(facet.cells[0]).level(), l1 = mesh.cell(facet.cells[1]).level();
      if (std::abs(l0 - l1) > 1)
        out.push_back("facet " + std::to_string(f) + " joins levels " + std::to_string(l0) +
                      " and " + std::to_string(l1));
    }
  }
  return out;
}

}  // namespace gld
