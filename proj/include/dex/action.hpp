#pragma once

// The 11-D action vector shared by labels, the denoiser, and the executor:
//   [dx, dy, dtheta, dpx, dpy, dpz, dqw, dqx, dqy, dqz, grip]
// Base increments are expressed in the current base frame; the hand
// increment is a translation difference plus a left-multiplied quaternion
// increment of the chest-relative hand pose; grip is absolute.

#include "dex/geometry.hpp"

#include <Eigen/Core>

namespace dex {

inline constexpr int kActionDim = 11;
using ActionVec = Eigen::Matrix<double, kActionDim, 1>;

namespace action_index {
inline constexpr int base_x = 0;
inline constexpr int base_y = 1;
inline constexpr int base_theta = 2;
inline constexpr int hand_p = 3;  // 3 components
inline constexpr int hand_q = 6;  // 4 components, w first
inline constexpr int grip = 10;
}  // namespace action_index

struct Action {
  Pose2 base_delta;
  Vec3 hand_dp = Vec3::Zero();
  UnitQuat hand_dq;
  double grip = 0.0;

  ActionVec to_vector() const;
  /// Renormalizes and canonicalizes the quaternion block.
  static Action from_vector(const ActionVec& v);
};

/// Planar base state plus chest-relative hand pose and aperture.
struct RobotState {
  Pose2 base;
  Pose3 hand_rel;
  double grip = 0.0;
};

/// Applies one action: base oplus the increment, hand p += dp and q = dq * q,
/// grip set absolutely.
RobotState apply_action(const RobotState& s, const Action& a);
/// The action that maps a onto b under apply_action.
Action action_between(const RobotState& a, const RobotState& b);

}  // namespace dex
