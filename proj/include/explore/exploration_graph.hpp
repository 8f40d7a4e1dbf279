#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json_fwd.hpp>

#include "explore/mapping.hpp"
#include "explore/planning.hpp"
#include "explore/slam.hpp"

namespace explore {

enum class NodeKind { current_pose, past_pose, frontier };

const char* to_string(NodeKind kind);

/// s = [uncertainty (trace of translational covariance), distance to current pose,
///      bearing from current pose, identity flag (0 current, -1 past pose, 1 frontier)].
using NodeFeatures = Eigen::Vector4d;

struct GraphNode {
  int id = 0;
  NodeKind kind = NodeKind::past_pose;
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  NodeFeatures features = NodeFeatures::Zero();
};

struct GraphEdge {
  int u = 0;
  int v = 0;
  double weight = 0.0;
};

/// Poses and selected frontiers. Node ids equal positions in `nodes`: poses by index, then frontiers.
/// An empty `actions` list signals that no frontier is reachable.
struct ExplorationGraph {
  std::vector<GraphNode> nodes;
  std::vector<GraphEdge> edges;
  std::vector<int> actions;

  const GraphNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  bool is_action(int id) const;
  int current_node() const;
};

/// Which earlier poses a visit to a location is expected to close a loop with.
struct LoopPrediction {
  std::optional<std::size_t> pm_pose;
  std::vector<std::pair<int, std::size_t>> sm;  // (object id, earliest observing pose)

  std::vector<std::size_t> poses() const;
  bool any() const { return pm_pose.has_value() || !sm.empty(); }
};

/// Predicts pose matching (an earlier pose within r_pm) and segment matching (a previously
/// observed object visible from the location, ray-cast on the estimated grid with unknown
/// cells treated as free). Only poses at least gap_min older than the next pose qualify.
class LoopClosurePredictor {
 public:
  LoopClosurePredictor(std::span<const Pose2> pose_estimates, const OccupancyGrid& grid,
                       const std::map<int, std::size_t>& object_first_seen, const LoopClosureParams& params,
                       const SensorParams& sensor);

  std::optional<std::size_t> predict_pm(const Eigen::Vector2d& position) const;
  /// Object ids whose labelled cells are visible from `position`, sorted.
  std::vector<int> visible_objects(const Eigen::Vector2d& position) const;
  LoopPrediction predict(const Eigen::Vector2d& position) const;

  std::size_t eligible_count() const { return eligible_; }
  const LoopClosureParams& params() const { return params_; }

 private:
  std::span<const Pose2> poses_;
  const OccupancyGrid& grid_;
  const std::map<int, std::size_t>& first_seen_;
  LoopClosureParams params_;
  SensorParams sensor_;
  std::size_t eligible_ = 0;  // poses [0, eligible_) may close loops
};

/// Cells seen from `position` by a full-circle ray cast over the estimated grid. Unknown cells
/// are treated as free; an occupied cell ends a ray and is included. Sorted, unique.
std::vector<CellIndex> predicted_visible_cells(const OccupancyGrid& grid, const Eigen::Vector2d& position,
                                               const SensorParams& sensor, std::vector<int>* objects = nullptr);

NodeFeatures compute_node_features(NodeKind kind, const Eigen::Vector2d& position, const Eigen::Matrix2d& cov,
                                   const Pose2& current_pose);

/// `plans[k]` is the planned path to `frontiers[k]` (nullopt when unreachable).
ExplorationGraph build_graph(const FactorGraph& slam, std::span<const Eigen::Matrix3d> marginals,
                             const VirtualMap& vmap, std::span<const Frontier> frontiers,
                             std::span<const std::optional<PlannedPath>> plans,
                             const LoopClosurePredictor& predictor);

/// Structural invariant violations (empty when valid). `weight_tol` bounds |w - euclidean|.
std::vector<std::string> validate_graph(const ExplorationGraph& g, double weight_tol = 1e-12);

class GraphFormatError : public std::runtime_error {
 public:
  GraphFormatError(std::string location, const std::string& what)
      : std::runtime_error(location + ": " + what), location_(std::move(location)) {}
  /// "byte N" for syntax errors, a JSON pointer for invalid content.
  const std::string& location() const { return location_; }

 private:
  std::string location_;
};

inline constexpr int kGraphFormatVersion = 1;

/// Canonical text: {"v":1,"nodes":[{"id","kind","pos","feat"}...],"edges":[[u,v,w]...],"actions":[...]}
/// with fixed field order and numbers at 9 significant digits.
std::string serialize_graph(const ExplorationGraph& g);
/// The `"nodes":...,"edges":...,"actions":...` body, for embedding in protocol messages.
void append_graph_fields(std::string& out, const ExplorationGraph& g);
ExplorationGraph deserialize_graph(std::string_view text);
/// Builds and validates a graph from parsed wire fields; errors carry JSON pointers.
ExplorationGraph graph_from_json(const nlohmann::json& j);

/// Formats a double with 9 significant digits (the wire precision).
std::string format_number(double v);

}  // namespace explore
