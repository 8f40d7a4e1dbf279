#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace explore {

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar wrap_angle(Scalar a) {
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi_v<Scalar>) a += two_pi;
  if (a > std::numbers::pi_v<Scalar>) a -= two_pi;
  return a;
}

/// Planar rigid transform (x, y, theta). Theta is kept in (-pi, pi].
template <typename Scalar>
struct Pose2T {
  using Vector2 = Eigen::Matrix<Scalar, 2, 1>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
  using Matrix2 = Eigen::Matrix<Scalar, 2, 2>;

  Scalar x{0};
  Scalar y{0};
  Scalar theta{0};

  Pose2T() = default;
  Pose2T(Scalar x_, Scalar y_, Scalar theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}
  explicit Pose2T(const Vector3& v) : Pose2T(v(0), v(1), v(2)) {}

  Vector2 translation() const { return {x, y}; }
  Vector3 vector() const { return {x, y, theta}; }

  Matrix2 rotation() const {
    const Scalar c = std::cos(theta), s = std::sin(theta);
    Matrix2 r;
    r << c, -s, s, c;
    return r;
  }

  friend bool operator==(const Pose2T&, const Pose2T&) = default;
};

using Pose2 = Pose2T<double>;

template <typename Scalar>
Pose2T<Scalar> compose(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  const Scalar c = std::cos(a.theta), s = std::sin(a.theta);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta};
}

template <typename Scalar>
Pose2T<Scalar> inverse(const Pose2T<Scalar>& p) {
  const Scalar c = std::cos(p.theta), s = std::sin(p.theta);
  return {-c * p.x - s * p.y, s * p.x - c * p.y, -p.theta};
}

/// Relative transform a^-1 * b.
template <typename Scalar>
Pose2T<Scalar> between(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  return compose(inverse(a), b);
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> transform_point(const Pose2T<Scalar>& p,
                                            const Eigen::Matrix<Scalar, 2, 1>& local) {
  return p.rotation() * local + p.translation();
}

template <typename Scalar>
Eigen::Matrix<Scalar, 2, 1> inverse_transform_point(const Pose2T<Scalar>& p,
                                                    const Eigen::Matrix<Scalar, 2, 1>& world) {
  return p.rotation().transpose() * (world - p.translation());
}

/// Jacobian of compose(a, b) with respect to a, for the (x, y, theta) chart.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> compose_jacobian_first(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  const Scalar c = std::cos(a.theta), s = std::sin(a.theta);
  Eigen::Matrix<Scalar, 3, 3> j = Eigen::Matrix<Scalar, 3, 3>::Identity();
  j(0, 2) = -s * b.x - c * b.y;
  j(1, 2) = c * b.x - s * b.y;
  return j;
}

/// Jacobian of compose(a, b) with respect to b.
template <typename Scalar>
Eigen::Matrix<Scalar, 3, 3> compose_jacobian_second(const Pose2T<Scalar>& a) {
  Eigen::Matrix<Scalar, 3, 3> j = Eigen::Matrix<Scalar, 3, 3>::Identity();
  j.template topLeftCorner<2, 2>() = a.rotation();
  return j;
}

template <typename Scalar>
Scalar distance(const Pose2T<Scalar>& a, const Pose2T<Scalar>& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

}  // namespace explore
