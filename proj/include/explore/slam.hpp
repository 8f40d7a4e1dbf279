#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "explore/se2.hpp"
#include "explore/world.hpp"

namespace explore {

class SlamError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when some pose is not tied to a prior through the factor graph.
class UnconstrainedPoseError : public SlamError {
 public:
  explicit UnconstrainedPoseError(std::size_t pose)
      : SlamError("pose " + std::to_string(pose) + " is unconstrained (no path to a prior factor)"), pose_(pose) {}
  std::size_t pose() const { return pose_; }

 private:
  std::size_t pose_;
};

enum class FactorKind { prior, odometry, ssm, pm, sm };

const char* to_string(FactorKind kind);

/// A prior (unary, `to` ignored) or a relative-pose constraint from `from` to `to`.
/// Binary residual: measurement^-1 * (x_from^-1 * x_to) in the (x, y, theta) chart.
struct Factor {
  FactorKind kind = FactorKind::prior;
  std::size_t from = 0;
  std::size_t to = 0;
  Pose2 measurement;
  Eigen::Matrix3d information = Eigen::Matrix3d::Identity();

  bool is_binary() const { return kind != FactorKind::prior; }
  bool is_loop_closure() const { return kind == FactorKind::pm || kind == FactorKind::sm; }
};

Eigen::Matrix3d diagonal_information(double sigma_trans, double sigma_rot);

Factor make_prior(std::size_t pose, const Pose2& mean, const Eigen::Matrix3d& information);
Factor make_between(FactorKind kind, std::size_t from, std::size_t to, const Pose2& measurement,
                    const Eigen::Matrix3d& information);

struct OptimizeResult {
  bool converged = false;
  double final_cost = 0.0;   // sum of squared Mahalanobis residuals
  int iterations = 0;
  std::vector<double> accepted_costs;  // cost after each accepted step, starting with the initial cost
};

struct MarginalCovariance {
  std::size_t index = 0;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
};

/// Pose-graph state: estimates plus typed factors, solved in batch by Levenberg-Marquardt.
class FactorGraph {
 public:
  std::size_t add_pose(const Pose2& initial_estimate);
  /// Validates and appends a factor; returns its id.
  std::size_t add_factor(const Factor& factor);

  std::size_t pose_count() const { return poses_.size(); }
  const std::vector<Pose2>& poses() const { return poses_; }
  const std::vector<Factor>& factors() const { return factors_; }
  const Pose2& pose(std::size_t i) const { return poses_.at(i); }
  void set_pose(std::size_t i, const Pose2& p);

  /// True when factors or estimates changed since the last optimize().
  bool stale() const { return stale_; }

  double total_cost() const;

  /// First pose (smallest index) with no path to a prior, if any.
  std::optional<std::size_t> unconstrained_pose() const;

  OptimizeResult optimize(int max_iters = 100, double tol = 1e-12);

  MarginalCovariance marginal_covariance(std::size_t index) const;
  std::vector<Eigen::Matrix3d> all_marginals() const;

  /// Dense Gauss-Newton information matrix J^T W J at the current estimate (3n x 3n).
  Eigen::MatrixXd dense_information() const;

 private:
  struct Linearization;
  const Linearization& linearization() const;
  void invalidate();

  std::vector<Pose2> poses_;
  std::vector<Factor> factors_;
  bool stale_ = true;
  mutable std::shared_ptr<const Linearization> cache_;
};

/// Residual of one factor at the given estimates.
Eigen::Vector3d factor_residual(const Factor& f, std::span<const Pose2> poses);

struct LoopClosureParams {
  double r_pm = 1.0;         // meters
  int gap_min = 5;           // pose matching needs current - j > gap_min
  double sigma_pm_trans = 0.05;
  double sigma_pm_rot = 0.5 * std::numbers::pi / 180.0;
  double sigma_sm_trans = 0.05;
  double sigma_sm_rot = 0.5 * std::numbers::pi / 180.0;
};

/// Relative measurement `between(a, b)` perturbed by noise drawn at the given sigmas.
Pose2 noisy_between(const Pose2& a, const Pose2& b, double sigma_trans, double sigma_rot, std::mt19937_64& rng);

/// Loop-closure factors for pose `current`, synthesized from the true trajectory.
/// PM: nearest pose j with current - j > gap_min within r_pm (ties to the smaller index).
/// SM: for each object re-sighted at `current` (seen now, not seen by current - 1),
/// the earliest pose that observed it. At most one factor per pose pair.
std::vector<Factor> detect_loop_closures(const FactorGraph& state, std::size_t current,
                                         std::span<const ScanResult> history,
                                         std::span<const Pose2> true_poses, const LoopClosureParams& params,
                                         std::mt19937_64& rng);

/// g2o-style text: VERTEX_SE2, EDGE_SE2 (odometry), EDGE_SE2_SSM / _PM / _SM, EDGE_SE2_PRIOR.
void write_pose_graph(std::ostream& out, const FactorGraph& graph);
FactorGraph read_pose_graph(std::istream& in);

}  // namespace explore
