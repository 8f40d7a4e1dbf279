#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "explore/grid.hpp"
#include "explore/se2.hpp"

namespace explore {

/// Thrown for malformed or inconsistent environment configs. `where` names the
/// offending location (a byte offset for syntax errors, a field path otherwise).
class EnvironmentError : public std::runtime_error {
 public:
  EnvironmentError(std::string where, const std::string& what)
      : std::runtime_error(where + ": " + what), where_(std::move(where)), detail_(what) {}
  const std::string& where() const { return where_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string where_;
  std::string detail_;
};

struct ObjectRegion {
  int id = 0;
  std::vector<CellIndex> cells;
};

struct GroundTruthWorld {
  GridGeometry grid;
  std::vector<std::uint8_t> occupied;  // 1 = occupied
  std::vector<int> object_at;          // object id per cell, -1 for none
  std::vector<ObjectRegion> objects;
  std::vector<Pose2> start_poses;

  double width_m() const { return grid.width_m(); }
  double height_m() const { return grid.height_m(); }
  double resolution() const { return grid.resolution; }
  bool is_occupied(CellIndex c) const { return occupied[c] != 0; }
  /// Points outside the grid count as occupied.
  bool is_free_at(const Eigen::Vector2d& p) const {
    const auto c = grid.cell_at(p);
    return c && !is_occupied(*c);
  }
  std::size_t free_cell_count() const;
};

struct Control {
  double forward = 0.0;  // meters, applied along the current heading
  double rotate = 0.0;   // radians, applied after the translation
};

struct NoiseParams {
  double sigma_trans = 0.01;
  double sigma_rot = 0.08 * std::numbers::pi / 180.0;
  double sigma_range = 0.02;
};

struct SensorParams {
  double max_range = 3.0;
  int n_beams = 180;
  double fov = 2.0 * std::numbers::pi;
};

struct Beam {
  double angle = 0.0;  // body frame
  double range = 0.0;
  bool hit = false;    // false: no return within max_range, range == max_range
};

/// Cells and objects observed from one true pose. Cell sets are sorted and disjoint.
struct ScanResult {
  Pose2 sensor_pose;  // true pose the scan was taken from
  std::vector<CellIndex> observed_free;
  std::vector<CellIndex> observed_occupied;
  std::vector<int> observed_objects;
  std::vector<std::pair<CellIndex, int>> object_hits;  // occupied cell -> object id
  std::vector<Beam> beams;

  bool empty() const { return observed_free.empty() && observed_occupied.empty(); }
};

struct MotionResult {
  Pose2 true_pose;
  Pose2 odometry;           // measured relative motion
  double travelled = 0.0;   // true translation length
  bool collided = false;
};

GroundTruthWorld load_environment(std::string_view config_text);
GroundTruthWorld load_environment_file(const std::filesystem::path& path);

MotionResult apply_motion(const GroundTruthWorld& world, const Pose2& true_pose, const Control& u,
                          const NoiseParams& noise, std::mt19937_64& rng);

ScanResult simulate_scan(const GroundTruthWorld& world, const Pose2& true_pose, const SensorParams& sensor);

/// Environment config text with `n_objects` randomly placed rectangular objects.
std::string random_object_config(double width_m, double height_m, double resolution, int n_objects,
                                 double object_size_m, std::mt19937_64& rng);

}  // namespace explore
