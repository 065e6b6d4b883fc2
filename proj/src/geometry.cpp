#include "dex/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace dex {

double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * kPi);
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

UnitQuat::UnitQuat(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error("UnitQuat: zero or non-finite quaternion");
  w_ = w / n;
  x_ = x / n;
  y_ = y / n;
  z_ = z / n;
}

UnitQuat UnitQuat::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw Error("UnitQuat: zero rotation axis");
  const Vec3 u = axis / n;
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), u.x() * s, u.y() * s, u.z() * s};
}

UnitQuat UnitQuat::exp(const Vec3& rv) {
  const double angle = rv.norm();
  if (angle < 1e-300) return identity();
  return from_axis_angle(rv / angle, angle);
}

UnitQuat UnitQuat::conjugate() const {
  UnitQuat q;
  q.w_ = w_;
  q.x_ = -x_;
  q.y_ = -y_;
  q.z_ = -z_;
  return q;
}

UnitQuat UnitQuat::negated() const {
  UnitQuat q;
  q.w_ = -w_;
  q.x_ = -x_;
  q.y_ = -y_;
  q.z_ = -z_;
  return q;
}

UnitQuat UnitQuat::canonical() const { return w_ < 0.0 ? negated() : *this; }

double UnitQuat::dot(const UnitQuat& o) const {
  return w_ * o.w_ + x_ * o.x_ + y_ * o.y_ + z_ * o.z_;
}

Vec3 UnitQuat::rotate(const Vec3& v) const {
  // v' = v + 2 u x (u x v + w v)
  const Vec3 u(x_, y_, z_);
  const Vec3 t = 2.0 * u.cross(v);
  return v + w_ * t + u.cross(t);
}

Mat3 UnitQuat::matrix() const {
  const double w = w_, x = x_, y = y_, z = z_;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec3 UnitQuat::log() const {
  const UnitQuat c = canonical();
  const Vec3 v(c.x_, c.y_, c.z_);
  const double s = v.norm();
  if (s < 1e-300) return Vec3::Zero();
  const double angle = 2.0 * std::atan2(s, c.w_);
  return v * (angle / s);
}

UnitQuat operator*(const UnitQuat& a, const UnitQuat& b) {
  return {a.w_ * b.w_ - a.x_ * b.x_ - a.y_ * b.y_ - a.z_ * b.z_,
          a.w_ * b.x_ + a.x_ * b.w_ + a.y_ * b.z_ - a.z_ * b.y_,
          a.w_ * b.y_ - a.x_ * b.z_ + a.y_ * b.w_ + a.z_ * b.x_,
          a.w_ * b.z_ + a.x_ * b.y_ - a.y_ * b.x_ + a.z_ * b.w_};
}

Mat4 Pose3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation.matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Pose3 compose(const Pose3& a, const Pose3& b) {
  return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
}

Pose3 inverse(const Pose3& p) {
  const UnitQuat qi = p.rotation.conjugate();
  return {qi, -qi.rotate(p.translation)};
}

namespace {

UnitQuat nlerp(const UnitQuat& q0, const UnitQuat& q1, double s) {
  return {(1 - s) * q0.w() + s * q1.w(), (1 - s) * q0.x() + s * q1.x(),
          (1 - s) * q0.y() + s * q1.y(), (1 - s) * q0.z() + s * q1.z()};
}

}  // namespace

UnitQuat slerp(const UnitQuat& q0, const UnitQuat& q1_in, double s) {
  if (s == 0.0) return q0;
  const UnitQuat q1 = q0.dot(q1_in) < 0.0 ? q1_in.negated() : q1_in;
  if (s == 1.0) return q1_in;
  const double d = q0.dot(q1);
  if (d < 1e-6) return nlerp(q0, q1, s);
  // Half-angle from chord lengths; accurate for nearly equal inputs.
  const Eigen::Vector4d a(q0.w(), q0.x(), q0.y(), q0.z());
  const Eigen::Vector4d b(q1.w(), q1.x(), q1.y(), q1.z());
  const double half = 2.0 * std::atan2((b - a).norm(), (b + a).norm());
  if (half < 1e-12) return nlerp(q0, q1, s);
  const double sh = std::sin(half);
  const double c0 = std::sin((1.0 - s) * half) / sh;
  const double c1 = std::sin(s * half) / sh;
  const Eigen::Vector4d r = c0 * a + c1 * b;
  return {r[0], r[1], r[2], r[3]};
}

Pose3 interpolate(const Pose3& a, const Pose3& b, double s) {
  return {slerp(a.rotation, b.rotation, s), a.translation + s * (b.translation - a.translation)};
}

double geodesic_so3(const UnitQuat& r0, const UnitQuat& r1) {
  const UnitQuat rel = r0.conjugate() * r1;
  const double v = std::sqrt(rel.x() * rel.x() + rel.y() * rel.y() + rel.z() * rel.z());
  return 2.0 * std::atan2(v, std::abs(rel.w()));
}

double dist_se2(const Pose2& a, const Pose2& b, double fold_radius) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double dh = fold_radius * wrap_angle(b.theta - a.theta);
  return std::sqrt(dx * dx + dy * dy + dh * dh);
}

Pose2 yaw_project(const Pose3& p) {
  const Vec3 fwd = p.rotation.rotate(Vec3::UnitX());
  const double horizontal = std::hypot(fwd.x(), fwd.y());
  // cos(89 deg): forward axis must keep at least this much horizontal length.
  if (horizontal < 0.0174524064372835) {
    throw DegeneratePoseError("yaw_project: forward axis within 1 degree of vertical");
  }
  return {p.translation.x(), p.translation.y(), std::atan2(fwd.y(), fwd.x())};
}

Pose3 lift(const Pose2& p, double height) {
  return {UnitQuat::rot_z(p.theta), Vec3(p.x, p.y, height)};
}

UnitQuat quat_increment_apply(const UnitQuat& q_t, const UnitQuat& dq) { return dq * q_t; }

Pose2 between(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  const double dx = b.x - a.x, dy = b.y - a.y;
  return {c * dx + s * dy, -s * dx + c * dy, wrap_angle(b.theta - a.theta)};
}

Pose2 oplus(const Pose2& a, const Pose2& d) {
  const double c = std::cos(a.theta), s = std::sin(a.theta);
  return {a.x + c * d.x - s * d.y, a.y + s * d.x + c * d.y, a.theta + d.theta};
}

std::array<double, 7> to_array(const Pose3& p) {
  const auto& q = p.rotation;
  return {p.translation.x(), p.translation.y(), p.translation.z(), q.w(), q.x(), q.y(), q.z()};
}

Pose3 pose3_from_array(std::span<const double> a) {
  if (a.size() != 7) throw Error("pose must have 7 components [px,py,pz,qw,qx,qy,qz]");
  return {UnitQuat(a[3], a[4], a[5], a[6]), Vec3(a[0], a[1], a[2])};
}

std::array<double, 3> to_array(const Pose2& p) { return {p.x, p.y, p.theta}; }

Pose2 pose2_from_array(std::span<const double> a) {
  if (a.size() != 3) throw Error("planar pose must have 3 components [x,y,theta]");
  return {a[0], a[1], a[2]};
}

}  // namespace dex
