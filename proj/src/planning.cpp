#include "explore/planning.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <stdexcept>
#include <string>

namespace explore {

std::vector<char> traversable_cells(const OccupancyGrid& grid, const PlannerOptions& options) {
  const GridGeometry& g = grid.geometry;
  std::vector<char> ok(g.size(), 0);
  for (CellIndex c = 0; c < g.size(); ++c) ok[c] = grid.is_free(c) ? 1 : 0;
  if (options.dilation <= 0) return ok;
  std::vector<char> out(ok);
  for (CellIndex c = 0; c < g.size(); ++c) {
    if (grid.at(c) != Occupancy::occupied) continue;
    const int col = g.col_of(c), row = g.row_of(c);
    for (int dr = -options.dilation; dr <= options.dilation; ++dr)
      for (int dc = -options.dilation; dc <= options.dilation; ++dc)
        if (g.contains(col + dc, row + dr)) out[g.index(col + dc, row + dr)] = 0;
  }
  return out;
}

ShortestPathTree::ShortestPathTree(const OccupancyGrid& grid, CellIndex start, const PlannerOptions& options)
    : geometry_(grid.geometry), start_(start) {
  const GridGeometry& g = geometry_;
  if (start >= g.size() || !grid.is_free(start))
    throw std::invalid_argument("planner start cell " + std::to_string(start) + " is not free");
  constexpr double inf = std::numeric_limits<double>::infinity();
  dist_.assign(g.size(), inf);
  parent_.assign(g.size(), start);

  const std::vector<char> inner = traversable_cells(grid, options);
  // Dilated free cells may still terminate a path.
  auto enterable = [&](CellIndex c) { return grid.is_free(c); };
  auto passable = [&](CellIndex c) { return inner[c] != 0 || c == start; };

  using Entry = std::pair<double, CellIndex>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  dist_[start] = 0.0;
  queue.emplace(0.0, start);
  const double diag = std::sqrt(2.0) * g.resolution;
  while (!queue.empty()) {
    const auto [d, c] = queue.top();
    queue.pop();
    if (d > dist_[c]) continue;
    if (!passable(c)) continue;  // reached as an endpoint only
    const int col = g.col_of(c), row = g.row_of(c);
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        if (dr == 0 && dc == 0) continue;
        const int nc = col + dc, nr = row + dr;
        if (!g.contains(nc, nr)) continue;
        const CellIndex n = g.index(nc, nr);
        if (!enterable(n)) continue;
        if (dr != 0 && dc != 0 && (!grid.is_free(g.index(col + dc, row)) || !grid.is_free(g.index(col, row + dr))))
          continue;
        const double nd = d + ((dr != 0 && dc != 0) ? diag : g.resolution);
        if (nd < dist_[n] || (nd == dist_[n] && c < parent_[n])) {
          const bool improved = nd < dist_[n];
          dist_[n] = nd;
          parent_[n] = c;
          if (improved) queue.emplace(nd, n);
        }
      }
    }
  }
}

bool ShortestPathTree::reachable(CellIndex goal) const {
  return goal < dist_.size() && std::isfinite(dist_[goal]);
}

std::optional<double> ShortestPathTree::cost(CellIndex goal) const {
  if (!reachable(goal)) return std::nullopt;
  return dist_[goal];
}

std::optional<PlannedPath> ShortestPathTree::path_to(CellIndex goal) const {
  if (!reachable(goal)) return std::nullopt;
  PlannedPath path;
  path.length_m = dist_[goal];
  for (CellIndex c = goal;; c = parent_[c]) {
    path.cells.push_back(c);
    if (c == start_) break;
  }
  std::reverse(path.cells.begin(), path.cells.end());
  return path;
}

std::optional<PlannedPath> plan_path(const OccupancyGrid& grid, CellIndex start, CellIndex goal,
                                     const PlannerOptions& options) {
  return ShortestPathTree(grid, start, options).path_to(goal);
}

std::optional<CellIndex> nearest_free_cell(const OccupancyGrid& grid, const Eigen::Vector2d& p) {
  std::optional<CellIndex> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (CellIndex c = 0; c < grid.geometry.size(); ++c) {
    if (!grid.is_free(c)) continue;
    const double d = (grid.geometry.center(c) - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace explore
