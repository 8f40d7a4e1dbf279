#include "explore/world.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace explore {

namespace {

using nlohmann::json;

double number_at(const json& j, const std::string& where) {
  if (!j.is_number()) throw EnvironmentError(where, "expected a number");
  return j.get<double>();
}

std::vector<CellIndex> rasterize_rect(const GridGeometry& g, const json& rect, const std::string& where) {
  if (!rect.is_array() || rect.size() != 4) throw EnvironmentError(where, "rect must be [x0, y0, x1, y1]");
  const double x0 = number_at(rect[0], where + "[0]");
  const double y0 = number_at(rect[1], where + "[1]");
  const double x1 = number_at(rect[2], where + "[2]");
  const double y1 = number_at(rect[3], where + "[3]");
  if (!(x1 > x0 && y1 > y0)) throw EnvironmentError(where, "rect must satisfy x1 > x0 and y1 > y0");
  std::vector<CellIndex> cells;
  for (CellIndex i = 0; i < g.size(); ++i) {
    const Eigen::Vector2d c = g.center(i);
    if (c.x() >= x0 && c.x() <= x1 && c.y() >= y0 && c.y() <= y1) cells.push_back(i);
  }
  if (cells.empty()) throw EnvironmentError(where, "rect covers no cell centers");
  return cells;
}

int cells_along(double extent, double resolution, const std::string& where) {
  const double n = extent / resolution;
  const double rounded = std::round(n);
  if (rounded < 1.0 || std::abs(n - rounded) > 1e-9 * std::max(1.0, n))
    throw EnvironmentError(where, "resolution must divide the world size");
  return static_cast<int>(rounded);
}

}  // namespace

std::size_t GroundTruthWorld::free_cell_count() const {
  return static_cast<std::size_t>(std::count(occupied.begin(), occupied.end(), std::uint8_t{0}));
}

GroundTruthWorld load_environment(std::string_view config_text) {
  json cfg;
  try {
    cfg = json::parse(config_text.begin(), config_text.end());
  } catch (const json::parse_error& e) {
    throw EnvironmentError("byte " + std::to_string(e.byte), e.what());
  }
  if (!cfg.is_object()) throw EnvironmentError("$", "config must be an object");

  GroundTruthWorld w;
  if (!cfg.contains("size_m")) throw EnvironmentError("size_m", "missing field");
  if (!cfg.contains("resolution")) throw EnvironmentError("resolution", "missing field");
  const json& size = cfg["size_m"];
  if (!size.is_array() || size.size() != 2) throw EnvironmentError("size_m", "expected [width, height]");
  const double width = number_at(size[0], "size_m[0]");
  const double height = number_at(size[1], "size_m[1]");
  const double res = number_at(cfg["resolution"], "resolution");
  if (!(width > 0 && height > 0)) throw EnvironmentError("size_m", "dimensions must be positive");
  if (!(res > 0)) throw EnvironmentError("resolution", "must be positive");
  w.grid.resolution = res;
  w.grid.cols = cells_along(width, res, "size_m[0]");
  w.grid.rows = cells_along(height, res, "size_m[1]");

  const std::size_t n = w.grid.size();
  w.occupied.assign(n, 0);
  w.object_at.assign(n, -1);
  for (int c = 0; c < w.grid.cols; ++c) {
    w.occupied[w.grid.index(c, 0)] = 1;
    w.occupied[w.grid.index(c, w.grid.rows - 1)] = 1;
  }
  for (int r = 0; r < w.grid.rows; ++r) {
    w.occupied[w.grid.index(0, r)] = 1;
    w.occupied[w.grid.index(w.grid.cols - 1, r)] = 1;
  }

  if (cfg.contains("walls")) {
    const json& walls = cfg["walls"];
    if (!walls.is_array()) throw EnvironmentError("walls", "expected a list of rects");
    for (std::size_t k = 0; k < walls.size(); ++k)
      for (CellIndex c : rasterize_rect(w.grid, walls[k], "walls[" + std::to_string(k) + "]")) w.occupied[c] = 1;
  }

  if (cfg.contains("objects")) {
    const json& objects = cfg["objects"];
    if (!objects.is_array()) throw EnvironmentError("objects", "expected a list");
    std::set<int> ids;
    for (std::size_t k = 0; k < objects.size(); ++k) {
      const std::string where = "objects[" + std::to_string(k) + "]";
      const json& o = objects[k];
      if (!o.is_object() || !o.contains("id") || !o["id"].is_number_integer())
        throw EnvironmentError(where + ".id", "missing integer id");
      if (!o.contains("rect")) throw EnvironmentError(where + ".rect", "missing field");
      ObjectRegion region;
      region.id = o["id"].get<int>();
      if (region.id < 0) throw EnvironmentError(where + ".id", "object ids must be non-negative");
      if (!ids.insert(region.id).second) throw EnvironmentError(where + ".id", "duplicate object id");
      region.cells = rasterize_rect(w.grid, o["rect"], where + ".rect");
      for (CellIndex c : region.cells) {
        w.occupied[c] = 1;
        w.object_at[c] = region.id;
      }
      w.objects.push_back(std::move(region));
    }
  }

  if (w.free_cell_count() == 0) throw EnvironmentError("$", "world has zero free cells");

  if (!cfg.contains("start_poses")) throw EnvironmentError("start_poses", "missing field");
  const json& starts = cfg["start_poses"];
  if (!starts.is_array() || starts.empty()) throw EnvironmentError("start_poses", "expected a non-empty list");
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::string where = "start_poses[" + std::to_string(k) + "]";
    const json& p = starts[k];
    if (!p.is_array() || p.size() != 3) throw EnvironmentError(where, "expected [x, y, theta]");
    Pose2 pose(number_at(p[0], where), number_at(p[1], where), number_at(p[2], where));
    if (!w.is_free_at(pose.translation())) throw EnvironmentError(where, "start pose occupied");
    w.start_poses.push_back(pose);
  }
  return w;
}

GroundTruthWorld load_environment_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EnvironmentError(path.string(), "cannot open environment file");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return load_environment(ss.str());
  } catch (const EnvironmentError& e) {
    throw EnvironmentError(path.string() + ":" + e.where(), e.detail());
  }
}

MotionResult apply_motion(const GroundTruthWorld& world, const Pose2& true_pose, const Control& u,
                          const NoiseParams& noise, std::mt19937_64& rng) {
  std::normal_distribution<double> std_normal(0.0, 1.0);
  // Fixed draw order: executed translation, executed rotation, odometry translation, odometry rotation.
  const double exec_forward = u.forward + noise.sigma_trans * std_normal(rng);
  const double exec_rotate = u.rotate + noise.sigma_rot * std_normal(rng);
  const double odom_forward_noise = noise.sigma_trans * std_normal(rng);
  const double odom_rotate_noise = noise.sigma_rot * std_normal(rng);

  MotionResult out;
  double travelled = exec_forward;
  if (exec_forward != 0.0) {
    // March along the heading; stop at the last point still in free space.
    const Eigen::Vector2d dir(std::cos(true_pose.theta), std::sin(true_pose.theta));
    const double step = world.resolution() / 16.0;
    const double len = std::abs(exec_forward);
    const double sign = exec_forward > 0 ? 1.0 : -1.0;
    double done = 0.0;
    while (done < len) {
      const double next = std::min(len, done + step);
      if (!world.is_free_at(true_pose.translation() + sign * next * dir)) {
        out.collided = true;
        break;
      }
      done = next;
    }
    travelled = sign * done;
  }
  out.true_pose = compose(true_pose, Pose2(travelled, 0.0, exec_rotate));
  out.travelled = std::abs(travelled);
  const double measured_forward = (out.collided ? travelled : u.forward) + odom_forward_noise;
  out.odometry = Pose2(measured_forward, 0.0, u.rotate + odom_rotate_noise);
  return out;
}

ScanResult simulate_scan(const GroundTruthWorld& world, const Pose2& true_pose, const SensorParams& sensor) {
  ScanResult scan;
  scan.sensor_pose = true_pose;
  std::set<CellIndex> free_cells, occupied_cells;
  std::set<int> objects;
  const GridGeometry& g = world.grid;
  const Eigen::Vector2d origin = true_pose.translation();
  const bool full_circle = sensor.fov >= 2.0 * std::numbers::pi - 1e-12;
  const int n = std::max(sensor.n_beams, 0);
  for (int b = 0; b < n; ++b) {
    double rel;
    if (full_circle) {
      rel = -std::numbers::pi + 2.0 * std::numbers::pi * b / n;
    } else {
      rel = n == 1 ? 0.0 : -sensor.fov / 2.0 + sensor.fov * b / (n - 1);
    }
    const double angle = true_pose.theta + rel;
    const Eigen::Vector2d dir(std::cos(angle), std::sin(angle));
    Beam beam{wrap_angle(rel), sensor.max_range, false};
    walk_ray(g, origin, dir, sensor.max_range, [&](CellIndex c, double t) {
      if (world.is_occupied(c)) {
        beam.hit = true;
        beam.range = t;
        occupied_cells.insert(c);
        if (world.object_at[c] >= 0) objects.insert(world.object_at[c]);
        return false;
      }
      free_cells.insert(c);
      return true;
    });
    scan.beams.push_back(beam);
  }
  for (CellIndex c : occupied_cells) free_cells.erase(c);
  scan.observed_free.assign(free_cells.begin(), free_cells.end());
  scan.observed_occupied.assign(occupied_cells.begin(), occupied_cells.end());
  scan.observed_objects.assign(objects.begin(), objects.end());
  for (CellIndex c : scan.observed_occupied)
    if (world.object_at[c] >= 0) scan.object_hits.emplace_back(c, world.object_at[c]);
  return scan;
}

std::string random_object_config(double width_m, double height_m, double resolution, int n_objects,
                                 double object_size_m, std::mt19937_64& rng) {
  nlohmann::ordered_json cfg;
  cfg["size_m"] = {width_m, height_m};
  cfg["resolution"] = resolution;
  const Eigen::Vector2d center(width_m / 2.0, height_m / 2.0);
  std::uniform_real_distribution<double> ux(resolution * 2, width_m - resolution * 2 - object_size_m);
  std::uniform_real_distribution<double> uy(resolution * 2, height_m - resolution * 2 - object_size_m);
  nlohmann::ordered_json objects = nlohmann::ordered_json::array();
  int placed = 0;
  for (int attempt = 0; placed < n_objects && attempt < 1000 * std::max(n_objects, 1); ++attempt) {
    const double x0 = ux(rng), y0 = uy(rng);
    const double x1 = x0 + object_size_m, y1 = y0 + object_size_m;
    // Keep the center clear for the start pose.
    if (center.x() > x0 - resolution && center.x() < x1 + resolution && center.y() > y0 - resolution &&
        center.y() < y1 + resolution)
      continue;
    objects.push_back({{"id", placed}, {"rect", {x0, y0, x1, y1}}});
    ++placed;
  }
  cfg["objects"] = objects;
  cfg["start_poses"] = {{center.x(), center.y(), 0.0}};
  return cfg.dump(2);
}

}  // namespace explore
