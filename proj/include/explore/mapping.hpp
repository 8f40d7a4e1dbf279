#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "explore/grid.hpp"
#include "explore/se2.hpp"
#include "explore/world.hpp"

namespace explore {

enum class Occupancy : std::uint8_t { unknown = 0, free = 1, occupied = 2 };

/// Estimated occupancy map in the SLAM estimate frame.
struct OccupancyGrid {
  GridGeometry geometry;
  std::vector<Occupancy> cells;
  std::vector<int> object_label;  // object id seen on an occupied cell, -1 otherwise

  static OccupancyGrid unknown(const GridGeometry& g) {
    return {g, std::vector<Occupancy>(g.size(), Occupancy::unknown), std::vector<int>(g.size(), -1)};
  }
  Occupancy at(CellIndex c) const { return cells[c]; }
  bool is_free(CellIndex c) const { return cells[c] == Occupancy::free; }
  std::size_t known_count() const;

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;
};

/// Scan cells re-expressed in the estimate frame. Cells falling outside the grid are dropped.
struct EstimatedScanCells {
  std::vector<CellIndex> free;
  std::vector<CellIndex> occupied;
  std::vector<std::pair<CellIndex, int>> objects;

  std::vector<CellIndex> all() const;
};

EstimatedScanCells scan_cells_in_estimate(const GridGeometry& g, const Pose2& pose_est, const ScanResult& scan);

/// Writes free/occupied states; occupied wins over free on the same cell within one scan.
void integrate_scan(OccupancyGrid& grid, const Pose2& pose_est, const ScanResult& scan);

struct Frontier {
  int id = 0;
  std::vector<CellIndex> cells;  // sorted
  CellIndex waypoint_cell = 0;
  Eigen::Vector2d waypoint = Eigen::Vector2d::Zero();
};

/// A free cell with at least one 4-neighbour that is unknown.
bool is_frontier_cell(const OccupancyGrid& grid, CellIndex c);

/// Maximal 4-connected frontier components of at least `min_frontier_size` cells,
/// ordered by their smallest cell index. Waypoint: centroid snapped to the nearest free cell.
std::vector<Frontier> extract_frontiers(const OccupancyGrid& grid, int min_frontier_size = 2);

/// Grid of virtual landmarks, each carrying a 2x2 position covariance.
struct VirtualMap {
  GridGeometry geometry;
  std::vector<Eigen::Matrix2d> cov;

  static VirtualMap initial(const GridGeometry& g, double sigma0 = 0.2);
  double det(CellIndex c) const { return cov[c].determinant(); }
};

/// Min-det fusion: each listed cell takes pose_cov + sigma_z^2 I when that lowers its determinant.
void update_virtual_map(VirtualMap& vmap, const Eigen::Matrix2d& pose_cov, std::span<const CellIndex> cells,
                        double sigma_z);

/// Sum over all virtual landmarks of ln det(cov). Throws on a non-PSD landmark.
double map_utility(const VirtualMap& vmap);

class MapFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian dumps with a magic tag and version header.
///   grid:  "EXOG" u32 version, i32 cols, i32 rows, f64 resolution, u8 state per cell, i32 label per cell
///   vmap:  "EXVM" u32 version, i32 cols, i32 rows, f64 resolution, 3 x f64 (xx, xy, yy) per cell
void write_grid(std::ostream& out, const OccupancyGrid& grid);
OccupancyGrid read_grid(std::istream& in);
void write_virtual_map(std::ostream& out, const VirtualMap& vmap);
VirtualMap read_virtual_map(std::istream& in);

}  // namespace explore
