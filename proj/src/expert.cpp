#include "dex/sim.hpp"

#include <algorithm>
#include <cmath>

namespace dex {

ExpertPlanner::ExpertPlanner(const SimScenario& sc, ExpertConfig cfg, LabelFrame frame, double chest_height)
    : sc_(sc), cfg_(cfg), frame_(frame), h_(chest_height) {
  if (!(cfg_.v_cruise > 0.0)) throw Error("expert cruise speed must be positive");
  if (cfg_.horizon < 1) throw Error("expert horizon must be positive");
}

namespace {

double approach(double x, double target, double max_step) {
  return x + std::clamp(target - x, -max_step, max_step);
}

// Moves the hand toward target by bounded translation and rotation steps.
Pose3 move_hand(const Pose3& hand, const Pose3& target, double step, double rot_step) {
  Vec3 d = target.translation - hand.translation;
  const double n = d.norm();
  if (n > step) d *= step / n;
  const double ang = geodesic_so3(hand.rotation, target.rotation);
  const double f = ang > rot_step ? rot_step / ang : 1.0;
  return Pose3(slerp(hand.rotation, target.rotation, f), hand.translation + d);
}

struct PlanState {
  RobotState s;
  double v = 0.0;
  double w = 0.0;
  int stage = 0;
  int dwell = 0;
};

}  // namespace

std::vector<RobotState> ExpertPlanner::plan_states(const RobotState& rel_state, double v0, double w0,
                                                   int stage) const {
  const double dt = cfg_.dt;
  const double dv = cfg_.accel * dt;
  const double dw = cfg_.alpha * dt;
  const double grip_step = 4.0 * dt;
  PlanState p{rel_state, v0, w0, stage, 0};
  std::vector<RobotState> out;
  out.reserve(static_cast<std::size_t>(cfg_.horizon) + 1);
  out.push_back(p.s);

  auto brake = [&] {
    p.v = approach(p.v, 0.0, dv);
    p.w = approach(p.w, 0.0, dw);
  };

  for (int i = 0; i < cfg_.horizon; ++i) {
    const int n_stages = sc_.stage_count();
    if (p.stage >= n_stages) {
      brake();
    } else {
      const Stage& st = sc_.stages[static_cast<std::size_t>(p.stage)];
      bool done = false;
      switch (st.kind) {
        case StageKind::cruise:
          p.v = cfg_.v_cruise;
          p.w = 0.0;
          break;
        case StageKind::navigate: {
          const bool arm_ready =
              (p.s.hand_rel.translation - sc_.carry_hand.translation).norm() < 0.01 &&
              geodesic_so3(p.s.hand_rel.rotation, sc_.carry_hand.rotation) < 0.05;
          if (!arm_ready) {
            p.s.hand_rel = move_hand(p.s.hand_rel, sc_.carry_hand, cfg_.hand_step, cfg_.hand_rot_step);
            brake();
            break;
          }
          const Pose2 d = between(p.s.base, st.goal);
          const double dist = std::hypot(d.x, d.y);
          const double bearing = std::atan2(d.y, d.x);
          if (dist > 0.5 * st.pos_tol) {
            const bool reverse = dist < 0.3 && std::abs(bearing) > kPi / 2;
            const double heading_err = reverse ? wrap_angle(bearing - kPi) : bearing;
            const double d_stop = std::max(0.0, dist - 0.2 * st.pos_tol);
            const double v_stop = std::min(std::sqrt(2.0 * cfg_.accel * d_stop), cfg_.approach_gain * d_stop);
            if (std::abs(heading_err) > cfg_.turn_in_place && dist > st.pos_tol) {
              // Stop, then turn in place toward the goal.
              p.v = approach(p.v, 0.0, dv);
              if (std::abs(p.v) < 1e-9) {
                const double w_des = std::clamp(1.5 * heading_err, -cfg_.omega_max, cfg_.omega_max);
                const double w_cap = std::sqrt(2.0 * cfg_.alpha * std::abs(heading_err));
                p.w = approach(p.w, std::clamp(w_des, -w_cap, w_cap), dw);
              } else {
                p.w = approach(p.w, 0.0, dw);
              }
            } else {
              const double v_mag = std::min(cfg_.v_cruise, v_stop);
              p.v = approach(p.v, reverse ? -v_mag : v_mag, dv);
              const double w_des = dist < 0.05 ? 0.0 : std::clamp(2.0 * heading_err, -cfg_.omega_max, cfg_.omega_max);
              p.w = approach(p.w, w_des, dw);
            }
          } else {
            p.v = approach(p.v, 0.0, dv);
            const double err = d.theta;
            if (std::abs(p.v) < 1e-9) {
              const double w_cap = std::sqrt(2.0 * cfg_.alpha * std::abs(err));
              const double w_des = std::clamp(1.5 * err, -std::min(cfg_.omega_max, w_cap), std::min(cfg_.omega_max, w_cap));
              p.w = approach(p.w, w_des, dw);
            } else {
              p.w = approach(p.w, 0.0, dw);
            }
            done = std::abs(err) < 0.5 * st.heading_tol && std::abs(p.v) < 1e-9 && std::abs(p.w) < 0.05;
          }
          break;
        }
        case StageKind::grasp:
        case StageKind::place: {
          brake();
          const bool grasp = st.kind == StageKind::grasp;
          const double release_to = grasp ? 0.0 : 1.0;
          const Pose3 target(sc_.grasp_rotation_hand.rotation,
                             inverse(lift(p.s.base, h_)).transform_point(st.point));
          const bool settled = std::abs(p.v) < 0.02 && std::abs(p.w) < 0.05;
          if (settled && p.s.grip != release_to) {
            p.s.hand_rel = move_hand(p.s.hand_rel, target, cfg_.hand_step, cfg_.hand_rot_step);
          }
          const bool at_point = (p.s.hand_rel.translation - target.translation).norm() <= cfg_.grip_close_dist;
          if (at_point || p.s.grip != (grasp ? 1.0 : 0.0)) p.s.grip = approach(p.s.grip, release_to, grip_step);
          if (p.s.grip == release_to && ++p.dwell > 2) done = true;
          break;
        }
        case StageKind::retract:
          brake();
          p.s.hand_rel = move_hand(p.s.hand_rel, sc_.carry_hand, cfg_.hand_step, cfg_.hand_rot_step);
          done = (p.s.hand_rel.translation - sc_.carry_hand.translation).norm() < 0.005;
          break;
      }
      if (done) {
        ++p.stage;
        p.dwell = 0;
      }
    }
    // Unicycle chord over one step.
    const double a = p.w * dt;
    p.s.base = oplus(p.s.base, Pose2(p.v * dt * std::cos(0.5 * a), p.v * dt * std::sin(0.5 * a), a));
    out.push_back(p.s);
  }
  return out;
}

std::vector<Action> ExpertPlanner::plan(const Observation& obs) {
  RobotState rel = obs.state;
  if (frame_ == LabelFrame::global) rel.hand_rel = inverse(lift(obs.state.base, h_)) * obs.state.hand_rel;
  const double v0 = obs.prev_action.base_delta.x / cfg_.dt;
  const double w0 = obs.prev_action.base_delta.theta / cfg_.dt;
  const std::vector<RobotState> states = plan_states(rel, v0, w0, obs.stage);

  std::vector<RobotState> labels = states;
  if (frame_ == LabelFrame::global) {
    // World-frame labels carry the demonstrator's vertical gait oscillation.
    double travelled = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      if (i > 0) travelled += std::abs(between(states[i - 1].base, states[i].base).x);
      const double bob = cfg_.bob_amplitude * std::sin(2.0 * kPi * travelled / cfg_.stride);
      labels[i].hand_rel = lift(states[i].base, h_ + bob) * states[i].hand_rel;
    }
    labels[0].hand_rel = obs.state.hand_rel;
  }
  std::vector<Action> chunk;
  chunk.reserve(static_cast<std::size_t>(cfg_.horizon));
  for (std::size_t i = 0; i + 1 < labels.size(); ++i) chunk.push_back(action_between(labels[i], labels[i + 1]));
  return chunk;
}

}  // namespace dex
