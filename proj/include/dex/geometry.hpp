#pragma once

// Rigid-body pose algebra shared by every module.
//
// Conventions:
//   * Quaternions are stored (w, x, y, z) and multiplied with the Hamilton
//     product. Every product is renormalized immediately.
//   * Pose3 a maps coordinates from frame B into frame A (T^A_B), so
//     compose(a, b) is the homogeneous product a * b.
//   * Angles are wrapped to (-pi, pi]; a tie at -pi maps to +pi.
//   * World frames are z-up; a body's forward axis is its local +x.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <span>
#include <stdexcept>
#include <string>

namespace dex {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = 3.14159265358979323846;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by yaw_project when the forward axis is within 1 degree of vertical.
class DegeneratePoseError : public Error {
 public:
  using Error::Error;
};

double wrap_angle(double a);

class UnitQuat {
 public:
  UnitQuat() = default;
  /// Normalizes the input; throws Error on a zero or non-finite quaternion.
  UnitQuat(double w, double x, double y, double z);

  static UnitQuat identity() { return {}; }
  static UnitQuat from_axis_angle(const Vec3& axis, double angle);
  static UnitQuat rot_x(double angle) { return from_axis_angle(Vec3::UnitX(), angle); }
  static UnitQuat rot_y(double angle) { return from_axis_angle(Vec3::UnitY(), angle); }
  static UnitQuat rot_z(double angle) { return from_axis_angle(Vec3::UnitZ(), angle); }
  /// Rotation vector (axis * angle) to quaternion.
  static UnitQuat exp(const Vec3& rotation_vector);

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }
  std::array<double, 4> coeffs() const { return {w_, x_, y_, z_}; }

  UnitQuat conjugate() const;
  UnitQuat inverse() const { return conjugate(); }
  /// Same rotation with w >= 0.
  UnitQuat canonical() const;
  UnitQuat negated() const;
  double dot(const UnitQuat& other) const;

  Vec3 rotate(const Vec3& v) const;
  Mat3 matrix() const;
  /// Rotation vector with angle in [0, pi].
  Vec3 log() const;

  friend UnitQuat operator*(const UnitQuat& a, const UnitQuat& b);

 private:
  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

struct Pose3 {
  UnitQuat rotation;
  Vec3 translation = Vec3::Zero();

  Pose3() = default;
  Pose3(const UnitQuat& q, const Vec3& t) : rotation(q), translation(t) {}

  static Pose3 identity() { return {}; }
  static Pose3 from_translation(const Vec3& t) { return {UnitQuat::identity(), t}; }

  Vec3 transform_point(const Vec3& p) const { return rotation.rotate(p) + translation; }
  Mat4 matrix() const;
};

struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double theta_) : x(x_), y(y_), theta(wrap_angle(theta_)) {}

  Eigen::Vector2d position() const { return {x, y}; }
};

template <typename T>
struct Timestamped {
  double t = 0.0;
  T value{};
};

Pose3 compose(const Pose3& a, const Pose3& b);
Pose3 inverse(const Pose3& p);
inline Pose3 operator*(const Pose3& a, const Pose3& b) { return compose(a, b); }

/// Spherical interpolation; q1 is hemisphere-aligned to q0 first.
UnitQuat slerp(const UnitQuat& q0, const UnitQuat& q1, double s);
/// Linear translation, slerp rotation.
Pose3 interpolate(const Pose3& a, const Pose3& b, double s);

/// Geodesic angle between two rotations, in [0, pi].
double geodesic_so3(const UnitQuat& r0, const UnitQuat& r1);

inline constexpr double kDefaultFoldRadius = 0.5;
/// Planar distance with the heading difference folded into a length by fold_radius.
double dist_se2(const Pose2& a, const Pose2& b, double fold_radius = kDefaultFoldRadius);

/// Planar (x, y, heading) of a 3-D pose. Throws DegeneratePoseError when the
/// forward axis is pitched more than 89 degrees from level.
Pose2 yaw_project(const Pose3& p);
/// Level pose at the given height with the planar pose's heading.
Pose3 lift(const Pose2& p, double height);

/// q_{t+1} = dq * q_t, renormalized.
UnitQuat quat_increment_apply(const UnitQuat& q_t, const UnitQuat& dq);

/// b expressed in a's frame: (R(-a.theta) (b - a), wrap(b.theta - a.theta)).
Pose2 between(const Pose2& a, const Pose2& b);
/// Applies a body-frame increment (dx, dy, dtheta) to a.
Pose2 oplus(const Pose2& a, const Pose2& delta);

// Serialization: [px, py, pz, qw, qx, qy, qz] and [x, y, theta].
std::array<double, 7> to_array(const Pose3& p);
Pose3 pose3_from_array(std::span<const double> a);
std::array<double, 3> to_array(const Pose2& p);
Pose2 pose2_from_array(std::span<const double> a);

}  // namespace dex
