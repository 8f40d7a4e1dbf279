#pragma once

#include <optional>
#include <vector>

#include "explore/mapping.hpp"

namespace explore {

struct PlannerOptions {
  /// Cells within this many cells (Chebyshev) of an occupied cell are not traversable,
  /// except as the start or goal of a path.
  int dilation = 1;
};

struct PlannedPath {
  std::vector<CellIndex> cells;  // start..goal, consecutive cells 8-adjacent
  double length_m = 0.0;
  int goal_frontier_id = -1;
};

/// Single-source Dijkstra over free cells with 8-connectivity (no corner cutting past
/// blocked cells). Queue ties resolve to the smaller cell index.
class ShortestPathTree {
 public:
  ShortestPathTree(const OccupancyGrid& grid, CellIndex start, const PlannerOptions& options = {});

  CellIndex start() const { return start_; }
  bool reachable(CellIndex goal) const;
  /// Path cost in meters, if reachable.
  std::optional<double> cost(CellIndex goal) const;
  std::optional<PlannedPath> path_to(CellIndex goal) const;

 private:
  GridGeometry geometry_;
  CellIndex start_;
  std::vector<double> dist_;
  std::vector<CellIndex> parent_;
};

/// Traversability used by the planner: free, and outside the dilation band unless it is an endpoint.
std::vector<char> traversable_cells(const OccupancyGrid& grid, const PlannerOptions& options);

/// Throws std::invalid_argument if `start` is not a free cell.
std::optional<PlannedPath> plan_path(const OccupancyGrid& grid, CellIndex start, CellIndex goal,
                                     const PlannerOptions& options = {});

/// Nearest free cell to `p` (ties to the smaller index), if any free cell exists.
std::optional<CellIndex> nearest_free_cell(const OccupancyGrid& grid, const Eigen::Vector2d& p);

}  // namespace explore
