#include "explore/exploration_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

namespace explore {

const char* to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::current_pose: return "current_pose";
    case NodeKind::past_pose: return "past_pose";
    case NodeKind::frontier: return "frontier";
  }
  return "unknown";
}

bool ExplorationGraph::is_action(int id) const { return std::find(actions.begin(), actions.end(), id) != actions.end(); }

int ExplorationGraph::current_node() const {
  for (const GraphNode& n : nodes)
    if (n.kind == NodeKind::current_pose) return n.id;
  return -1;
}

std::vector<std::size_t> LoopPrediction::poses() const {
  std::vector<std::size_t> out;
  if (pm_pose) out.push_back(*pm_pose);
  for (const auto& [object, pose] : sm) out.push_back(pose);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

LoopClosurePredictor::LoopClosurePredictor(std::span<const Pose2> pose_estimates, const OccupancyGrid& grid,
                                           const std::map<int, std::size_t>& object_first_seen,
                                           const LoopClosureParams& params, const SensorParams& sensor)
    : poses_(pose_estimates), grid_(grid), first_seen_(object_first_seen), params_(params), sensor_(sensor) {
  const auto gap = static_cast<std::size_t>(std::max(params.gap_min, 0));
  eligible_ = poses_.size() > gap ? poses_.size() - gap : 0;
}

std::optional<std::size_t> LoopClosurePredictor::predict_pm(const Eigen::Vector2d& position) const {
  std::optional<std::size_t> best;
  double best_d = params_.r_pm;
  for (std::size_t j = 0; j < eligible_; ++j) {
    const double d = (poses_[j].translation() - position).norm();
    if (d <= best_d && (!best || d < best_d)) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

std::vector<CellIndex> predicted_visible_cells(const OccupancyGrid& grid, const Eigen::Vector2d& position,
                                               const SensorParams& sensor, std::vector<int>* objects) {
  std::vector<CellIndex> cells;
  std::set<int> seen_objects;
  const int n = std::max(sensor.n_beams, 1);
  for (int b = 0; b < n; ++b) {
    const double angle = -std::numbers::pi + 2.0 * std::numbers::pi * b / n;
    walk_ray(grid.geometry, position, Eigen::Vector2d(std::cos(angle), std::sin(angle)), sensor.max_range,
             [&](CellIndex c, double) {
               cells.push_back(c);
               if (grid.at(c) != Occupancy::occupied) return true;
               if (grid.object_label[c] >= 0) seen_objects.insert(grid.object_label[c]);
               return false;
             });
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  if (objects) objects->assign(seen_objects.begin(), seen_objects.end());
  return cells;
}

std::vector<int> LoopClosurePredictor::visible_objects(const Eigen::Vector2d& position) const {
  std::vector<int> objects;
  predicted_visible_cells(grid_, position, sensor_, &objects);
  return objects;
}

LoopPrediction LoopClosurePredictor::predict(const Eigen::Vector2d& position) const {
  LoopPrediction out;
  out.pm_pose = predict_pm(position);
  if (first_seen_.empty() || eligible_ == 0) return out;
  for (int object : visible_objects(position)) {
    const auto it = first_seen_.find(object);
    if (it != first_seen_.end() && it->second < eligible_) out.sm.emplace_back(object, it->second);
  }
  return out;
}

NodeFeatures compute_node_features(NodeKind kind, const Eigen::Vector2d& position, const Eigen::Matrix2d& cov,
                                   const Pose2& current_pose) {
  const double dx = position.x() - current_pose.x;
  const double dy = position.y() - current_pose.y;
  NodeFeatures s;
  s(0) = cov.trace();
  s(1) = std::hypot(dx, dy);
  s(2) = (dx == 0.0 && dy == 0.0) ? 0.0 : wrap_angle(std::atan2(dy, dx));
  s(3) = kind == NodeKind::current_pose ? 0.0 : (kind == NodeKind::frontier ? 1.0 : -1.0);
  return s;
}

ExplorationGraph build_graph(const FactorGraph& slam, std::span<const Eigen::Matrix3d> marginals,
                             const VirtualMap& vmap, std::span<const Frontier> frontiers,
                             std::span<const std::optional<PlannedPath>> plans,
                             const LoopClosurePredictor& predictor) {
  const std::size_t n = slam.pose_count();
  if (n == 0) throw std::invalid_argument("build_graph needs at least one pose");
  if (marginals.size() != n) throw std::invalid_argument("build_graph needs one marginal per pose");
  if (plans.size() != frontiers.size()) throw std::invalid_argument("build_graph needs one plan slot per frontier");
  const Pose2& current = slam.pose(n - 1);

  ExplorationGraph g;
  for (std::size_t i = 0; i < n; ++i) {
    GraphNode node;
    node.id = static_cast<int>(i);
    node.kind = i + 1 == n ? NodeKind::current_pose : NodeKind::past_pose;
    node.position = slam.pose(i).translation();
    const Eigen::Matrix3d& m = marginals[i];
    if (!m.allFinite()) throw std::invalid_argument("missing covariance for pose " + std::to_string(i));
    node.features = compute_node_features(node.kind, node.position, m.topLeftCorner<2, 2>(), current);
    g.nodes.push_back(node);
  }

  std::set<std::pair<int, int>> pose_pairs;
  for (const Factor& f : slam.factors())
    if (f.is_binary())
      pose_pairs.emplace(static_cast<int>(std::min(f.from, f.to)), static_cast<int>(std::max(f.from, f.to)));
  auto add_edge = [&](int u, int v) {
    g.edges.push_back({u, v, (g.nodes[static_cast<std::size_t>(u)].position -
                              g.nodes[static_cast<std::size_t>(v)].position).norm()});
  };
  for (const auto& [u, v] : pose_pairs) add_edge(u, v);

  std::optional<std::size_t> nearest;
  for (std::size_t k = 0; k < frontiers.size(); ++k) {
    if (!plans[k]) continue;
    if (!nearest || plans[k]->length_m < plans[*nearest]->length_m ||
        (plans[k]->length_m == plans[*nearest]->length_m && frontiers[k].id < frontiers[*nearest].id))
      nearest = k;
  }
  if (!nearest) return g;

  std::vector<std::size_t> order(frontiers.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frontiers[a].id < frontiers[b].id; });
  const int current_id = static_cast<int>(n - 1);
  for (std::size_t k : order) {
    if (!plans[k]) continue;
    const bool is_nearest = k == *nearest;
    const LoopPrediction loop = predictor.predict(frontiers[k].waypoint);
    if (!is_nearest && !loop.any()) continue;

    GraphNode node;
    node.id = static_cast<int>(g.nodes.size());
    node.kind = NodeKind::frontier;
    node.position = frontiers[k].waypoint;
    node.features = compute_node_features(NodeKind::frontier, node.position, vmap.cov[frontiers[k].waypoint_cell], current);
    g.nodes.push_back(node);
    g.actions.push_back(node.id);

    std::set<int> linked;
    if (is_nearest) linked.insert(current_id);
    for (std::size_t p : loop.poses()) linked.insert(static_cast<int>(p));
    for (int p : linked) add_edge(p, node.id);
  }
  return g;
}

std::vector<std::string> validate_graph(const ExplorationGraph& g, double weight_tol) {
  std::vector<std::string> errors;
  const auto count = static_cast<int>(g.nodes.size());
  int current = -1, last_pose = -1, currents = 0;
  bool frontier_seen = false;
  for (int i = 0; i < count; ++i) {
    const GraphNode& nd = g.nodes[static_cast<std::size_t>(i)];
    const std::string at = "node " + std::to_string(i);
    if (nd.id != i) errors.push_back(at + ": id does not match position");
    const double expected_flag = nd.kind == NodeKind::current_pose ? 0.0 : (nd.kind == NodeKind::frontier ? 1.0 : -1.0);
    if (nd.features(3) != expected_flag) errors.push_back(at + ": identity feature does not match kind");
    if (!(nd.features(0) >= 0.0)) errors.push_back(at + ": negative uncertainty feature");
    if (!(nd.features(1) >= 0.0)) errors.push_back(at + ": negative distance feature");
    if (!(nd.features(2) > -std::numbers::pi && nd.features(2) <= std::numbers::pi))
      errors.push_back(at + ": bearing outside (-pi, pi]");
    if (!nd.position.allFinite() || !nd.features.allFinite()) errors.push_back(at + ": non-finite value");
    if (nd.kind == NodeKind::frontier) {
      frontier_seen = true;
    } else {
      if (frontier_seen) errors.push_back(at + ": pose node after frontier nodes");
      last_pose = i;
    }
    if (nd.kind == NodeKind::current_pose) {
      ++currents;
      current = i;
    }
  }
  if (currents != 1) errors.push_back("expected exactly one current_pose node, found " + std::to_string(currents));
  else if (current != last_pose) errors.push_back("current_pose is not the highest-index pose");

  std::vector<std::vector<int>> adj(static_cast<std::size_t>(count));
  std::set<std::pair<int, int>> seen_edges;
  for (const GraphEdge& e : g.edges) {
    if (e.u < 0 || e.v < 0 || e.u >= count || e.v >= count || e.u == e.v) {
      errors.push_back("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ") has invalid endpoints");
      continue;
    }
    if (!seen_edges.emplace(std::min(e.u, e.v), std::max(e.u, e.v)).second)
      errors.push_back("duplicate edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ")");
    const double d = (g.nodes[static_cast<std::size_t>(e.u)].position - g.nodes[static_cast<std::size_t>(e.v)].position).norm();
    if (!(std::abs(e.weight - d) <= weight_tol * std::max(1.0, d)))
      errors.push_back("edge (" + std::to_string(e.u) + "," + std::to_string(e.v) + ") weight is not the Euclidean distance");
    adj[static_cast<std::size_t>(e.u)].push_back(e.v);
    adj[static_cast<std::size_t>(e.v)].push_back(e.u);
  }

  std::vector<int> frontier_ids;
  for (const GraphNode& nd : g.nodes)
    if (nd.kind == NodeKind::frontier) frontier_ids.push_back(nd.id);
  std::vector<int> actions(g.actions);
  std::sort(actions.begin(), actions.end());
  if (actions != frontier_ids) errors.push_back("actions are not exactly the frontier nodes");
  for (int f : frontier_ids)
    if (adj[static_cast<std::size_t>(f)].empty()) errors.push_back("frontier node " + std::to_string(f) + " has no edge");

  if (count > 0) {
    std::vector<char> reached(static_cast<std::size_t>(count), 0);
    std::vector<int> stack{0};
    reached[0] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : adj[static_cast<std::size_t>(u)])
        if (!reached[static_cast<std::size_t>(v)]) {
          reached[static_cast<std::size_t>(v)] = 1;
          stack.push_back(v);
        }
    }
    if (std::find(reached.begin(), reached.end(), 0) != reached.end()) errors.push_back("graph is not connected");
  }
  return errors;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v == 0.0 ? 0.0 : v);
  return buf;
}

void append_graph_fields(std::string& out, const ExplorationGraph& g) {
  out += "\"nodes\":[";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const GraphNode& n = g.nodes[i];
    if (i) out += ',';
    out += "{\"id\":" + std::to_string(n.id) + ",\"kind\":\"" + to_string(n.kind) + "\",\"pos\":[" +
           format_number(n.position.x()) + ',' + format_number(n.position.y()) + "],\"feat\":[";
    for (int k = 0; k < 4; ++k) {
      if (k) out += ',';
      out += format_number(n.features(k));
    }
    out += "]}";
  }
  out += "],\"edges\":[";
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const GraphEdge& e = g.edges[i];
    if (i) out += ',';
    out += '[' + std::to_string(e.u) + ',' + std::to_string(e.v) + ',' + format_number(e.weight) + ']';
  }
  out += "],\"actions\":[";
  for (std::size_t i = 0; i < g.actions.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(g.actions[i]);
  }
  out += ']';
}

std::string serialize_graph(const ExplorationGraph& g) {
  std::string out = "{\"v\":" + std::to_string(kGraphFormatVersion) + ',';
  append_graph_fields(out, g);
  out += '}';
  return out;
}

namespace {

using nlohmann::json;

const json& field(const json& obj, const char* name, const std::string& ptr) {
  if (!obj.is_object() || !obj.contains(name)) throw GraphFormatError(ptr + "/" + name, "missing field");
  return obj[name];
}

double number(const json& j, const std::string& ptr) {
  if (!j.is_number()) throw GraphFormatError(ptr, "expected a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& ptr) {
  if (!j.is_number_integer()) throw GraphFormatError(ptr, "expected an integer");
  return j.get<int>();
}

}  // namespace

ExplorationGraph graph_from_json(const json& j) {
  if (!j.is_object()) throw GraphFormatError("", "expected an object");
  if (j.contains("v") && (!j["v"].is_number_integer() || j["v"].get<int>() != kGraphFormatVersion))
    throw GraphFormatError("/v", "unsupported version");
  ExplorationGraph g;
  const json& nodes = field(j, "nodes", "");
  if (!nodes.is_array()) throw GraphFormatError("/nodes", "expected an array");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string ptr = "/nodes/" + std::to_string(i);
    const json& n = nodes[i];
    GraphNode node;
    node.id = integer(field(n, "id", ptr), ptr + "/id");
    const json& kind = field(n, "kind", ptr);
    const std::string k = kind.is_string() ? kind.get<std::string>() : std::string();
    if (k == "current_pose") node.kind = NodeKind::current_pose;
    else if (k == "past_pose") node.kind = NodeKind::past_pose;
    else if (k == "frontier") node.kind = NodeKind::frontier;
    else throw GraphFormatError(ptr + "/kind", "unknown node kind");
    const json& pos = field(n, "pos", ptr);
    if (!pos.is_array() || pos.size() != 2) throw GraphFormatError(ptr + "/pos", "expected [x, y]");
    node.position = {number(pos[0], ptr + "/pos/0"), number(pos[1], ptr + "/pos/1")};
    const json& feat = field(n, "feat", ptr);
    if (!feat.is_array() || feat.size() != 4) throw GraphFormatError(ptr + "/feat", "expected 4 features");
    for (int f = 0; f < 4; ++f) node.features(f) = number(feat[static_cast<std::size_t>(f)], ptr + "/feat/" + std::to_string(f));
    const double flag = node.features(3);
    if (flag != -1.0 && flag != 0.0 && flag != 1.0) throw GraphFormatError(ptr + "/feat/3", "identity feature must be -1, 0 or 1");
    const double expected = node.kind == NodeKind::current_pose ? 0.0 : (node.kind == NodeKind::frontier ? 1.0 : -1.0);
    if (flag != expected) throw GraphFormatError(ptr + "/feat/3", "identity feature does not match kind");
    if (node.id != static_cast<int>(i)) throw GraphFormatError(ptr + "/id", "node ids must equal their position");
    g.nodes.push_back(node);
  }
  const json& edges = field(j, "edges", "");
  if (!edges.is_array()) throw GraphFormatError("/edges", "expected an array");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const std::string ptr = "/edges/" + std::to_string(i);
    const json& e = edges[i];
    if (!e.is_array() || e.size() != 3) throw GraphFormatError(ptr, "expected [u, v, w]");
    g.edges.push_back({integer(e[0], ptr + "/0"), integer(e[1], ptr + "/1"), number(e[2], ptr + "/2")});
  }
  const json& actions = field(j, "actions", "");
  if (!actions.is_array()) throw GraphFormatError("/actions", "expected an array");
  for (std::size_t i = 0; i < actions.size(); ++i) g.actions.push_back(integer(actions[i], "/actions/" + std::to_string(i)));

  // Wire values carry 9 significant digits.
  const auto errors = validate_graph(g, 1e-7);
  if (!errors.empty()) throw GraphFormatError("", errors.front());
  return g;
}

ExplorationGraph deserialize_graph(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw GraphFormatError("byte " + std::to_string(e.byte), e.what());
  }
  return graph_from_json(j);
}

}  // namespace explore
