#include "dex/action.hpp"

namespace dex {

ActionVec Action::to_vector() const {
  using namespace action_index;
  ActionVec v;
  v[base_x] = base_delta.x;
  v[base_y] = base_delta.y;
  v[base_theta] = base_delta.theta;
  v.segment<3>(hand_p) = hand_dp;
  v[hand_q] = hand_dq.w();
  v[hand_q + 1] = hand_dq.x();
  v[hand_q + 2] = hand_dq.y();
  v[hand_q + 3] = hand_dq.z();
  v[action_index::grip] = grip;
  return v;
}

Action Action::from_vector(const ActionVec& v) {
  using namespace action_index;
  Action a;
  a.base_delta = Pose2(v[base_x], v[base_y], v[base_theta]);
  a.hand_dp = v.segment<3>(hand_p);
  a.hand_dq = UnitQuat(v[hand_q], v[hand_q + 1], v[hand_q + 2], v[hand_q + 3]).canonical();
  a.grip = v[action_index::grip];
  return a;
}

RobotState apply_action(const RobotState& s, const Action& a) {
  RobotState out;
  out.base = oplus(s.base, a.base_delta);
  out.hand_rel = Pose3(quat_increment_apply(s.hand_rel.rotation, a.hand_dq),
                       s.hand_rel.translation + a.hand_dp);
  out.grip = a.grip;
  return out;
}

Action action_between(const RobotState& a, const RobotState& b) {
  Action out;
  out.base_delta = between(a.base, b.base);
  out.hand_dp = b.hand_rel.translation - a.hand_rel.translation;
  out.hand_dq = (b.hand_rel.rotation * a.hand_rel.rotation.conjugate()).canonical();
  out.grip = b.grip;
  return out;
}

}  // namespace dex
