#pragma once

// File output: atomic writes, legacy VTK snapshots and CSV tables.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gld/gld_model.hpp"
#include "gld/hdg.hpp"

namespace gld {

/// Writes to a temporary file next to `path`, then renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw std::runtime_error("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

/// Cell averages of the fields written to snapshots.
struct CellMeans {
  double V = 0.0;
  Vector2 E{};
  Vector2 P{};
  double curl_P = 0.0;  // d1 P2 - d2 P1
};

inline CellMeans cell_means(const Discretization& d, const StateFields& s, std::size_t c) {
  const auto& tab = d.linear_tabulation();
  const Cell& cell = d.mesh().cell(c);
  const double sx = 2.0 / cell.width(), sy = 2.0 / cell.height();
  const int nb = d.nb();
  CellMeans m;
  double wsum = 0.0;
  for (std::size_t q = 0; q < tab.rule.size(); ++q) {
    const double w = tab.rule.weights[q];
    const auto phi = tab.values_at(q);
    const auto grad = tab.gradients_at(q);
    wsum += w;
    m.V += w * dot(s.cell_block(d, c, block::V), phi);
    for (int j = 0; j < 2; ++j) {
      m.E[j] += w * dot(s.cell_block(d, c, block::E(j)), phi);
      m.P[j] += w * dot(s.cell_block(d, c, block::P(j)), phi);
    }
    const auto P1 = s.cell_block(d, c, block::P(0));
    const auto P2 = s.cell_block(d, c, block::P(1));
    double curl = 0.0;
    for (int a = 0; a < nb; ++a) curl += P2[a] * grad[a][0] * sx - P1[a] * grad[a][1] * sy;
    m.curl_P += w * curl;
  }
  m.V /= wsum;
  m.curl_P /= wsum;
  for (int j = 0; j < 2; ++j) {
    m.E[j] /= wsum;
    m.P[j] /= wsum;
  }
  return m;
}

/// Legacy ASCII VTK unstructured grid with cell data V, E, P and curl P,
/// converted from model units with `scale`.
inline std::string vtk_string(const Discretization& d, const StateFields& s, const Scaling& scale,
                              const std::string& title = "gld snapshot") {
  const Mesh& mesh = d.mesh();
  std::ostringstream out;
  out << std::setprecision(12);
  out << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
  out << "POINTS " << mesh.vertices().size() << " double\n";
  for (const Point2& p : mesh.vertices()) out << p.x * scale.length << ' ' << p.y * scale.length << " 0\n";
  const std::size_t nc = mesh.num_cells();
  out << "CELLS " << nc << ' ' << 5 * nc << '\n';
  for (const Cell& c : mesh.cells())
    out << "4 " << c.vertices[0] << ' ' << c.vertices[1] << ' ' << c.vertices[2] << ' ' << c.vertices[3] << '\n';
  out << "CELL_TYPES " << nc << '\n';
  for (std::size_t c = 0; c < nc; ++c) out << "9\n";
  std::vector<CellMeans> means(nc);
  for (std::size_t c = 0; c < nc; ++c) means[c] = cell_means(d, s, c);
  out << "CELL_DATA " << nc << '\n';
  out << "SCALARS V double 1\nLOOKUP_TABLE default\n";
  for (const auto& m : means) out << m.V * scale.potential() << '\n';
  out << "VECTORS E double\n";
  for (const auto& m : means) out << m.E[0] * scale.field() << ' ' << m.E[1] * scale.field() << " 0\n";
  out << "VECTORS P double\n";
  for (const auto& m : means)
    out << m.P[0] * scale.polarization << ' ' << m.P[1] * scale.polarization << " 0\n";
  out << "SCALARS curl_P double 1\nLOOKUP_TABLE default\n";
  for (const auto& m : means) out << m.curl_P * scale.polarization / scale.length << '\n';
  out << "SCALARS level int 1\nLOOKUP_TABLE default\n";
  for (const Cell& c : mesh.cells()) out << c.level() << '\n';
  return out.str();
}

inline void write_vtk(const Discretization& d, const StateFields& s, const std::filesystem::path& path,
                      const Scaling& scale = Scaling::identity()) {
  write_file_atomic(path, vtk_string(d, s, scale));
}

/// Builds CSV text with a fixed header and full-precision numbers.
class CsvWriter {
 public:
  explicit CsvWriter(const std::vector<std::string>& header) {
    out_ << std::setprecision(12);
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  template <class... Ts>
  void row(const Ts&... values) {
    bool first = true;
    ((out_ << (first ? "" : ",") << values, first = false), ...);
    out_ << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

}  // namespace gld
