#include "explore/slam.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace explore {

const char* to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::prior: return "prior";
    case FactorKind::odometry: return "odometry";
    case FactorKind::ssm: return "ssm";
    case FactorKind::pm: return "pm";
    case FactorKind::sm: return "sm";
  }
  return "unknown";
}

Eigen::Matrix3d diagonal_information(double sigma_trans, double sigma_rot) {
  return Eigen::Vector3d(1.0 / (sigma_trans * sigma_trans), 1.0 / (sigma_trans * sigma_trans),
                         1.0 / (sigma_rot * sigma_rot))
      .asDiagonal();
}

Factor make_prior(std::size_t pose, const Pose2& mean, const Eigen::Matrix3d& information) {
  return Factor{FactorKind::prior, pose, pose, mean, information};
}

Factor make_between(FactorKind kind, std::size_t from, std::size_t to, const Pose2& measurement,
                    const Eigen::Matrix3d& information) {
  return Factor{kind, from, to, measurement, information};
}

namespace {

struct FactorJacobians {
  Eigen::Vector3d error;
  Eigen::Matrix3d d_from;  // also used for priors
  Eigen::Matrix3d d_to;
};

FactorJacobians linearize_factor(const Factor& f, std::span<const Pose2> poses) {
  FactorJacobians out;
  const Pose2& xi = poses[f.from];
  if (!f.is_binary()) {
    out.error = Eigen::Vector3d(xi.x - f.measurement.x, xi.y - f.measurement.y,
                                wrap_angle(xi.theta - f.measurement.theta));
    out.d_from.setIdentity();
    out.d_to.setZero();
    return out;
  }
  const Pose2& xj = poses[f.to];
  const Eigen::Matrix2d rm_t = f.measurement.rotation().transpose();
  const Eigen::Matrix2d ri_t = xi.rotation().transpose();
  const Eigen::Vector2d dt = xj.translation() - xi.translation();
  const double c = std::cos(xi.theta), s = std::sin(xi.theta);
  Eigen::Matrix2d dri_t;
  dri_t << -s, c, -c, -s;

  out.error.head<2>() = rm_t * (ri_t * dt - f.measurement.translation());
  out.error(2) = wrap_angle(xj.theta - xi.theta - f.measurement.theta);

  out.d_from.setZero();
  out.d_from.topLeftCorner<2, 2>() = -rm_t * ri_t;
  out.d_from.block<2, 1>(0, 2) = rm_t * dri_t * dt;
  out.d_from(2, 2) = -1.0;

  out.d_to.setZero();
  out.d_to.topLeftCorner<2, 2>() = rm_t * ri_t;
  out.d_to(2, 2) = 1.0;
  return out;
}

bool is_symmetric_pd(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  return es.eigenvalues().minCoeff() > 0.0;
}

double cost_at(const std::vector<Factor>& factors, std::span<const Pose2> poses) {
  double cost = 0.0;
  for (const Factor& f : factors) {
    const Eigen::Vector3d e = factor_residual(f, poses);
    cost += e.dot(f.information * e);
  }
  return cost;
}

}  // namespace

Eigen::Vector3d factor_residual(const Factor& f, std::span<const Pose2> poses) {
  return linearize_factor(f, poses).error;
}

struct FactorGraph::Linearization {
  Eigen::SparseMatrix<double> hessian;
  Eigen::VectorXd gradient;
  std::unique_ptr<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>> solver;
};

std::size_t FactorGraph::add_pose(const Pose2& initial_estimate) {
  poses_.push_back(initial_estimate);
  invalidate();
  return poses_.size() - 1;
}

void FactorGraph::set_pose(std::size_t i, const Pose2& p) {
  poses_.at(i) = p;
  invalidate();
}

void FactorGraph::invalidate() {
  stale_ = true;
  cache_.reset();
}

std::size_t FactorGraph::add_factor(const Factor& f) {
  const std::size_t n = poses_.size();
  if (f.from >= n || (f.is_binary() && f.to >= n))
    throw SlamError(std::string("factor endpoint out of range (") + to_string(f.kind) + " " +
                    std::to_string(f.from) + "->" + std::to_string(f.to) + ", " + std::to_string(n) + " poses)");
  if (!is_symmetric_pd(f.information)) throw SlamError("information matrix is not symmetric positive definite");
  if (f.is_binary()) {
    if (f.from == f.to) throw SlamError("binary factor with identical endpoints");
    const std::size_t gap = f.from > f.to ? f.from - f.to : f.to - f.from;
    if ((f.kind == FactorKind::odometry || f.kind == FactorKind::ssm) && f.to != f.from + 1)
      throw SlamError(std::string("non-consecutive ") + to_string(f.kind) + " factor " + std::to_string(f.from) +
                      "->" + std::to_string(f.to));
    if (f.is_loop_closure() && gap < 2)
      throw SlamError(std::string("loop closure between consecutive poses ") + std::to_string(f.from) + "->" +
                      std::to_string(f.to));
  }
  factors_.push_back(f);
  invalidate();
  return factors_.size() - 1;
}

double FactorGraph::total_cost() const { return cost_at(factors_, poses_); }

std::optional<std::size_t> FactorGraph::unconstrained_pose() const {
  const std::size_t n = poses_.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (const Factor& f : factors_)
    if (f.is_binary()) parent[find(f.from)] = find(f.to);
  std::vector<bool> anchored(n, false);
  for (const Factor& f : factors_)
    if (!f.is_binary()) anchored[find(f.from)] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!anchored[find(i)]) return i;
  return std::nullopt;
}

const FactorGraph::Linearization& FactorGraph::linearization() const {
  if (cache_) return *cache_;
  if (auto bad = unconstrained_pose()) throw UnconstrainedPoseError(*bad);

  const std::size_t dim = 3 * poses_.size();
  auto lin = std::make_shared<Linearization>();
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(factors_.size() * 36);
  lin->gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));

  auto add_block = [&](std::size_t r, std::size_t c, const Eigen::Matrix3d& b) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        triplets.emplace_back(static_cast<int>(3 * r + i), static_cast<int>(3 * c + j), b(i, j));
  };
  for (const Factor& f : factors_) {
    const FactorJacobians lf = linearize_factor(f, poses_);
    const Eigen::Matrix3d at_w = lf.d_from.transpose() * f.information;
    add_block(f.from, f.from, at_w * lf.d_from);
    lin->gradient.segment<3>(static_cast<Eigen::Index>(3 * f.from)) += at_w * lf.error;
    if (f.is_binary()) {
      const Eigen::Matrix3d bt_w = lf.d_to.transpose() * f.information;
      add_block(f.from, f.to, at_w * lf.d_to);
      add_block(f.to, f.from, bt_w * lf.d_from);
      add_block(f.to, f.to, bt_w * lf.d_to);
      lin->gradient.segment<3>(static_cast<Eigen::Index>(3 * f.to)) += bt_w * lf.error;
    }
  }
  lin->hessian.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  lin->hessian.setFromTriplets(triplets.begin(), triplets.end());
  lin->solver = std::make_unique<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>>();
  lin->solver->compute(lin->hessian);
  if (lin->solver->info() != Eigen::Success) throw SlamError("singular information matrix");
  cache_ = lin;
  return *cache_;
}

OptimizeResult FactorGraph::optimize(int max_iters, double tol) {
  const bool has_prior =
      std::any_of(factors_.begin(), factors_.end(), [](const Factor& f) { return !f.is_binary(); });
  if (!has_prior) throw SlamError("optimize requires at least one prior factor");
  if (auto bad = unconstrained_pose()) throw UnconstrainedPoseError(*bad);

  OptimizeResult result;
  double cost = total_cost();
  result.accepted_costs.push_back(cost);
  double lambda = 1e-6;
  const std::size_t n = poses_.size();

  for (int iter = 0; iter < max_iters; ++iter) {
    result.iterations = iter + 1;
    if (cost <= 1e-30) {
      result.converged = true;
      break;
    }
    const Linearization& lin = linearization();
    const Eigen::VectorXd diag = lin.hessian.diagonal();

    bool accepted = false;
    double step_norm = 0.0;
    double previous = cost;
    while (lambda < 1e16) {
      Eigen::SparseMatrix<double> damped = lin.hessian;
      for (Eigen::Index k = 0; k < damped.rows(); ++k) damped.coeffRef(k, k) += lambda * std::max(diag(k), 1e-12);
      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd delta = -solver.solve(lin.gradient);
      std::vector<Pose2> candidate(poses_);
      for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d d = delta.segment<3>(static_cast<Eigen::Index>(3 * i));
        candidate[i] = Pose2(poses_[i].x + d(0), poses_[i].y + d(1), poses_[i].theta + d(2));
      }
      const double new_cost = cost_at(factors_, candidate);
      if (std::isfinite(new_cost) && new_cost <= cost) {
        poses_ = std::move(candidate);
        cache_.reset();
        cost = new_cost;
        result.accepted_costs.push_back(cost);
        step_norm = delta.norm();
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No descent direction left at machine precision.
      result.converged = true;
      break;
    }
    double scale = 1.0;
    for (const Pose2& p : poses_) scale = std::max(scale, p.vector().cwiseAbs().maxCoeff());
    if (previous - cost <= tol * previous || step_norm <= 1e-10 * scale) {
      result.converged = true;
      break;
    }
  }
  result.final_cost = cost;
  stale_ = false;
  return result;
}

MarginalCovariance FactorGraph::marginal_covariance(std::size_t index) const {
  if (index >= poses_.size()) throw SlamError("marginal requested for unknown pose " + std::to_string(index));
  const Linearization& lin = linearization();
  const auto dim = static_cast<Eigen::Index>(3 * poses_.size());
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(dim, 3);
  rhs.block<3, 3>(static_cast<Eigen::Index>(3 * index), 0).setIdentity();
  const Eigen::MatrixXd cols = lin.solver->solve(rhs);
  MarginalCovariance out;
  out.index = index;
  const Eigen::Matrix3d block = cols.block<3, 3>(static_cast<Eigen::Index>(3 * index), 0);
  out.cov = 0.5 * (block + block.transpose());
  return out;
}

std::vector<Eigen::Matrix3d> FactorGraph::all_marginals() const {
  std::vector<Eigen::Matrix3d> out;
  out.reserve(poses_.size());
  for (std::size_t i = 0; i < poses_.size(); ++i) out.push_back(marginal_covariance(i).cov);
  return out;
}

Eigen::MatrixXd FactorGraph::dense_information() const {
  const auto dim = static_cast<Eigen::Index>(3 * poses_.size());
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim, dim);
  for (const Factor& f : factors_) {
    const FactorJacobians lf = linearize_factor(f, poses_);
    const auto a = static_cast<Eigen::Index>(3 * f.from);
    h.block<3, 3>(a, a) += lf.d_from.transpose() * f.information * lf.d_from;
    if (f.is_binary()) {
      const auto b = static_cast<Eigen::Index>(3 * f.to);
      h.block<3, 3>(a, b) += lf.d_from.transpose() * f.information * lf.d_to;
      h.block<3, 3>(b, a) += lf.d_to.transpose() * f.information * lf.d_from;
      h.block<3, 3>(b, b) += lf.d_to.transpose() * f.information * lf.d_to;
    }
  }
  return h;
}

Pose2 noisy_between(const Pose2& a, const Pose2& b, double sigma_trans, double sigma_rot, std::mt19937_64& rng) {
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const double nx = sigma_trans * std_normal(rng);
  const double ny = sigma_trans * std_normal(rng);
  const double nt = sigma_rot * std_normal(rng);
  return compose(between(a, b), Pose2(nx, ny, nt));
}

std::vector<Factor> detect_loop_closures(const FactorGraph& state, std::size_t current,
                                         std::span<const ScanResult> history,
                                         std::span<const Pose2> true_poses, const LoopClosureParams& params,
                                         std::mt19937_64& rng) {
  std::vector<Factor> out;
  if (current >= state.pose_count() || current >= true_poses.size() || current >= history.size()) return out;
  if (current < 2) return out;
  const auto gap = static_cast<std::size_t>(std::max(params.gap_min, 1));
  std::set<std::size_t> linked;

  std::optional<std::size_t> pm_target;
  double best = params.r_pm;
  for (std::size_t j = 0; j + gap < current; ++j) {  // current - j > gap_min
    const double d = distance(true_poses[j], true_poses[current]);
    if (d <= best && (!pm_target || d < best)) {
      best = d;
      pm_target = j;
    }
  }
  if (pm_target) {
    const Pose2 z = noisy_between(true_poses[*pm_target], true_poses[current], params.sigma_pm_trans,
                                  params.sigma_pm_rot, rng);
    out.push_back(make_between(FactorKind::pm, *pm_target, current, z,
                               diagonal_information(params.sigma_pm_trans, params.sigma_pm_rot)));
    linked.insert(*pm_target);
  }

  const auto& now = history[current].observed_objects;
  const auto& before = history[current - 1].observed_objects;
  for (int object : now) {
    if (std::binary_search(before.begin(), before.end(), object)) continue;
    for (std::size_t j = 0; j + 1 < current; ++j) {
      const auto& seen = history[j].observed_objects;
      if (!std::binary_search(seen.begin(), seen.end(), object)) continue;
      if (linked.insert(j).second) {
        const Pose2 z = noisy_between(true_poses[j], true_poses[current], params.sigma_sm_trans,
                                      params.sigma_sm_rot, rng);
        out.push_back(make_between(FactorKind::sm, j, current, z,
                                   diagonal_information(params.sigma_sm_trans, params.sigma_sm_rot)));
      }
      break;
    }
  }
  return out;
}

namespace {

const char* edge_tag(FactorKind kind) {
  switch (kind) {
    case FactorKind::prior: return "EDGE_SE2_PRIOR";
    case FactorKind::odometry: return "EDGE_SE2";
    case FactorKind::ssm: return "EDGE_SE2_SSM";
    case FactorKind::pm: return "EDGE_SE2_PM";
    case FactorKind::sm: return "EDGE_SE2_SM";
  }
  return "";
}

void write_information(std::ostream& out, const Eigen::Matrix3d& m) {
  out << ' ' << m(0, 0) << ' ' << m(0, 1) << ' ' << m(0, 2) << ' ' << m(1, 1) << ' ' << m(1, 2) << ' ' << m(2, 2);
}

Eigen::Matrix3d read_information(std::istream& in) {
  double a, b, c, d, e, f;
  in >> a >> b >> c >> d >> e >> f;
  Eigen::Matrix3d m;
  m << a, b, c, b, d, e, c, e, f;
  return m;
}

}  // namespace

void write_pose_graph(std::ostream& out, const FactorGraph& graph) {
  const auto old_precision = out.precision(17);
  for (std::size_t i = 0; i < graph.pose_count(); ++i) {
    const Pose2& p = graph.pose(i);
    out << "VERTEX_SE2 " << i << ' ' << p.x << ' ' << p.y << ' ' << p.theta << '\n';
  }
  for (const Factor& f : graph.factors()) {
    out << edge_tag(f.kind) << ' ' << f.from;
    if (f.is_binary()) out << ' ' << f.to;
    out << ' ' << f.measurement.x << ' ' << f.measurement.y << ' ' << f.measurement.theta;
    write_information(out, f.information);
    out << '\n';
  }
  out.precision(old_precision);
}

FactorGraph read_pose_graph(std::istream& in) {
  FactorGraph graph;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::pair<std::size_t, Factor>> pending;
  std::vector<std::size_t> fixed;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    auto fail = [&](const std::string& why) {
      return SlamError("pose graph line " + std::to_string(line_no) + ": " + why);
    };
    if (tag == "VERTEX_SE2") {
      std::size_t id;
      double x, y, t;
      if (!(ls >> id >> x >> y >> t)) throw fail("malformed VERTEX_SE2");
      if (id != graph.pose_count()) throw fail("vertex ids must be consecutive from 0");
      graph.add_pose(Pose2(x, y, t));
    } else if (tag == "FIX") {
      std::size_t id;
      if (!(ls >> id)) throw fail("malformed FIX");
      fixed.push_back(id);
    } else if (tag.rfind("EDGE_SE2", 0) == 0) {
      Factor f;
      double x, y, t;
      if (tag == "EDGE_SE2_PRIOR") {
        f.kind = FactorKind::prior;
        if (!(ls >> f.from >> x >> y >> t)) throw fail("malformed " + tag);
        f.to = f.from;
      } else {
        if (!(ls >> f.from >> f.to >> x >> y >> t)) throw fail("malformed " + tag);
        if (tag == "EDGE_SE2") {
          f.kind = f.to == f.from + 1 ? FactorKind::odometry : FactorKind::pm;
        } else if (tag == "EDGE_SE2_SSM") {
          f.kind = FactorKind::ssm;
        } else if (tag == "EDGE_SE2_PM") {
          f.kind = FactorKind::pm;
        } else if (tag == "EDGE_SE2_SM") {
          f.kind = FactorKind::sm;
        } else {
          throw fail("unknown record " + tag);
        }
      }
      f.measurement = Pose2(x, y, t);
      f.information = read_information(ls);
      if (!ls) throw fail("malformed information block");
      pending.emplace_back(line_no, f);
    } else {
      throw fail("unknown record " + tag);
    }
  }
  for (const auto& [no, f] : pending) {
    try {
      graph.add_factor(f);
    } catch (const SlamError& e) {
      throw SlamError("pose graph line " + std::to_string(no) + ": " + e.what());
    }
  }
  for (std::size_t id : fixed) {
    if (id >= graph.pose_count()) throw SlamError("FIX references unknown vertex " + std::to_string(id));
    graph.add_factor(make_prior(id, graph.pose(id), diagonal_information(1e-3, 1e-3)));
  }
  return graph;
}

}  // namespace explore
