#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace explore {

using CellIndex = std::size_t;

/// Row-major cell layout of a rectangular world anchored at (0, 0).
/// Column grows with x, row grows with y.
struct GridGeometry {
  int cols = 0;
  int rows = 0;
  double resolution = 0.5;

  std::size_t size() const { return static_cast<std::size_t>(cols) * static_cast<std::size_t>(rows); }
  double width_m() const { return cols * resolution; }
  double height_m() const { return rows * resolution; }

  bool contains(int col, int row) const { return col >= 0 && row >= 0 && col < cols && row < rows; }
  CellIndex index(int col, int row) const { return static_cast<CellIndex>(row) * cols + col; }
  int col_of(CellIndex i) const { return static_cast<int>(i % static_cast<std::size_t>(cols)); }
  int row_of(CellIndex i) const { return static_cast<int>(i / static_cast<std::size_t>(cols)); }

  std::optional<CellIndex> cell_at(const Eigen::Vector2d& p) const {
    const int c = static_cast<int>(std::floor(p.x() / resolution));
    const int r = static_cast<int>(std::floor(p.y() / resolution));
    if (!contains(c, r)) return std::nullopt;
    return index(c, r);
  }

  Eigen::Vector2d center(CellIndex i) const {
    return {(col_of(i) + 0.5) * resolution, (row_of(i) + 0.5) * resolution};
  }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Cells visited by a ray from `from` along `dir` (unit) up to `max_len`,
/// in traversal order, using an exact grid walk. Stops when the ray leaves the grid.
/// `visit(cell, entry_distance)` returns false to stop the walk.
template <typename Visitor>
void walk_ray(const GridGeometry& g, const Eigen::Vector2d& from, const Eigen::Vector2d& dir,
              double max_len, Visitor&& visit) {
  int c = static_cast<int>(std::floor(from.x() / g.resolution));
  int r = static_cast<int>(std::floor(from.y() / g.resolution));
  if (!g.contains(c, r)) return;

  const int step_c = dir.x() > 0 ? 1 : -1;
  const int step_r = dir.y() > 0 ? 1 : -1;
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double next_x = (c + (step_c > 0 ? 1 : 0)) * g.resolution;
  const double next_y = (r + (step_r > 0 ? 1 : 0)) * g.resolution;
  double t_max_x = dir.x() != 0.0 ? (next_x - from.x()) / dir.x() : inf;
  double t_max_y = dir.y() != 0.0 ? (next_y - from.y()) / dir.y() : inf;
  const double t_delta_x = dir.x() != 0.0 ? g.resolution / std::abs(dir.x()) : inf;
  const double t_delta_y = dir.y() != 0.0 ? g.resolution / std::abs(dir.y()) : inf;

  double t = 0.0;
  while (t <= max_len) {
    if (!visit(g.index(c, r), t)) return;
    if (t_max_x < t_max_y) {
      t = t_max_x;
      t_max_x += t_delta_x;
      c += step_c;
    } else {
      t = t_max_y;
      t_max_y += t_delta_y;
      r += step_r;
    }
    if (!g.contains(c, r)) return;
  }
}

}  // namespace explore
