#include "explore/mapping.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <string>

namespace explore {

std::size_t OccupancyGrid::known_count() const {
  return static_cast<std::size_t>(
      std::count_if(cells.begin(), cells.end(), [](Occupancy o) { return o != Occupancy::unknown; }));
}

std::vector<CellIndex> EstimatedScanCells::all() const {
  std::vector<CellIndex> out(free);
  out.insert(out.end(), occupied.begin(), occupied.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

EstimatedScanCells scan_cells_in_estimate(const GridGeometry& g, const Pose2& pose_est, const ScanResult& scan) {
  EstimatedScanCells out;
  auto map_cell = [&](CellIndex true_cell) -> std::optional<CellIndex> {
    const Eigen::Vector2d body = inverse_transform_point(scan.sensor_pose, g.center(true_cell));
    return g.cell_at(transform_point(pose_est, body));
  };
  for (CellIndex c : scan.observed_free)
    if (auto m = map_cell(c)) out.free.push_back(*m);
  for (CellIndex c : scan.observed_occupied)
    if (auto m = map_cell(c)) out.occupied.push_back(*m);
  for (const auto& [c, id] : scan.object_hits)
    if (auto m = map_cell(c)) out.objects.emplace_back(*m, id);
  for (auto* v : {&out.free, &out.occupied}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return out;
}

void integrate_scan(OccupancyGrid& grid, const Pose2& pose_est, const ScanResult& scan) {
  const EstimatedScanCells cells = scan_cells_in_estimate(grid.geometry, pose_est, scan);
  for (CellIndex c : cells.free) {
    grid.cells[c] = Occupancy::free;
    grid.object_label[c] = -1;
  }
  for (CellIndex c : cells.occupied) grid.cells[c] = Occupancy::occupied;
  for (const auto& [c, id] : cells.objects) grid.object_label[c] = id;
}

bool is_frontier_cell(const OccupancyGrid& grid, CellIndex c) {
  if (!grid.is_free(c)) return false;
  const GridGeometry& g = grid.geometry;
  const int col = g.col_of(c), row = g.row_of(c);
  constexpr int dc[4] = {1, -1, 0, 0};
  constexpr int dr[4] = {0, 0, 1, -1};
  for (int k = 0; k < 4; ++k) {
    const int nc = col + dc[k], nr = row + dr[k];
    if (g.contains(nc, nr) && grid.at(g.index(nc, nr)) == Occupancy::unknown) return true;
  }
  return false;
}

std::vector<Frontier> extract_frontiers(const OccupancyGrid& grid, int min_frontier_size) {
  const GridGeometry& g = grid.geometry;
  std::vector<char> is_frontier(g.size(), 0), seen(g.size(), 0);
  for (CellIndex c = 0; c < g.size(); ++c) is_frontier[c] = is_frontier_cell(grid, c) ? 1 : 0;

  std::vector<Frontier> out;
  std::vector<CellIndex> stack;
  for (CellIndex start = 0; start < g.size(); ++start) {
    if (!is_frontier[start] || seen[start]) continue;
    Frontier f;
    stack.assign(1, start);
    seen[start] = 1;
    while (!stack.empty()) {
      const CellIndex c = stack.back();
      stack.pop_back();
      f.cells.push_back(c);
      const int col = g.col_of(c), row = g.row_of(c);
      const int nbr[4][2] = {{col + 1, row}, {col - 1, row}, {col, row + 1}, {col, row - 1}};
      for (const auto& n : nbr) {
        if (!g.contains(n[0], n[1])) continue;
        const CellIndex nc = g.index(n[0], n[1]);
        if (is_frontier[nc] && !seen[nc]) {
          seen[nc] = 1;
          stack.push_back(nc);
        }
      }
    }
    if (static_cast<int>(f.cells.size()) < min_frontier_size) continue;
    std::sort(f.cells.begin(), f.cells.end());

    Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
    for (CellIndex c : f.cells) centroid += g.center(c);
    centroid /= static_cast<double>(f.cells.size());
    double best = std::numeric_limits<double>::infinity();
    for (CellIndex c = 0; c < g.size(); ++c) {
      if (!grid.is_free(c)) continue;
      const double d = (g.center(c) - centroid).squaredNorm();
      if (d < best) {
        best = d;
        f.waypoint_cell = c;
      }
    }
    f.waypoint = g.center(f.waypoint_cell);
    f.id = static_cast<int>(out.size());
    out.push_back(std::move(f));
  }
  return out;
}

VirtualMap VirtualMap::initial(const GridGeometry& g, double sigma0) {
  return {g, std::vector<Eigen::Matrix2d>(g.size(), sigma0 * sigma0 * Eigen::Matrix2d::Identity())};
}

void update_virtual_map(VirtualMap& vmap, const Eigen::Matrix2d& pose_cov, std::span<const CellIndex> cells,
                        double sigma_z) {
  const Eigen::Matrix2d candidate = pose_cov + sigma_z * sigma_z * Eigen::Matrix2d::Identity();
  const double candidate_det = candidate.determinant();
  for (CellIndex c : cells)
    if (candidate_det < vmap.cov[c].determinant()) vmap.cov[c] = candidate;
}

double map_utility(const VirtualMap& vmap) {
  double u = 0.0;
  for (std::size_t c = 0; c < vmap.cov.size(); ++c) {
    const Eigen::Matrix2d& m = vmap.cov[c];
    const double det = m.determinant();
    if (!(det > 0.0) || m(0, 0) <= 0.0 || std::abs(m(0, 1) - m(1, 0)) > 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
      throw std::domain_error("virtual landmark " + std::to_string(c) + " covariance is not symmetric positive definite");
    u += std::log(det);
  }
  return u;
}

namespace {

static_assert(std::endian::native == std::endian::little, "dump writers assume a little-endian host");

constexpr std::uint32_t kDumpVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw MapFormatError("truncated map dump");
  return v;
}

void put_header(std::ostream& out, const char* magic, const GridGeometry& g) {
  out.write(magic, 4);
  put<std::uint32_t>(out, kDumpVersion);
  put<std::int32_t>(out, g.cols);
  put<std::int32_t>(out, g.rows);
  put<double>(out, g.resolution);
}

GridGeometry take_header(std::istream& in, const char* magic) {
  char tag[4];
  if (!in.read(tag, 4) || std::memcmp(tag, magic, 4) != 0) throw MapFormatError(std::string("expected ") + magic + " dump");
  const auto version = take<std::uint32_t>(in);
  if (version != kDumpVersion) throw MapFormatError("unsupported dump version " + std::to_string(version));
  GridGeometry g;
  g.cols = take<std::int32_t>(in);
  g.rows = take<std::int32_t>(in);
  g.resolution = take<double>(in);
  if (g.cols <= 0 || g.rows <= 0 || !(g.resolution > 0)) throw MapFormatError("invalid dump geometry");
  return g;
}

}  // namespace

void write_grid(std::ostream& out, const OccupancyGrid& grid) {
  put_header(out, "EXOG", grid.geometry);
  for (Occupancy o : grid.cells) put<std::uint8_t>(out, static_cast<std::uint8_t>(o));
  for (int label : grid.object_label) put<std::int32_t>(out, label);
}

OccupancyGrid read_grid(std::istream& in) {
  OccupancyGrid grid = OccupancyGrid::unknown(take_header(in, "EXOG"));
  for (auto& cell : grid.cells) {
    const auto v = take<std::uint8_t>(in);
    if (v > 2) throw MapFormatError("invalid cell state " + std::to_string(v));
    cell = static_cast<Occupancy>(v);
  }
  for (auto& label : grid.object_label) label = take<std::int32_t>(in);
  return grid;
}

void write_virtual_map(std::ostream& out, const VirtualMap& vmap) {
  put_header(out, "EXVM", vmap.geometry);
  for (const Eigen::Matrix2d& m : vmap.cov) {
    put<double>(out, m(0, 0));
    put<double>(out, m(0, 1));
    put<double>(out, m(1, 1));
  }
}

VirtualMap read_virtual_map(std::istream& in) {
  VirtualMap vmap = VirtualMap::initial(take_header(in, "EXVM"), 1.0);
  for (auto& m : vmap.cov) {
    const double xx = take<double>(in), xy = take<double>(in), yy = take<double>(in);
    m << xx, xy, xy, yy;
  }
  return vmap;
}

}  // namespace explore
