#include "dex/sim.hpp"

#include <algorithm>
#include <cmath>

namespace dex {

std::string to_string(ScenarioId id) {
  switch (id) {
    case ScenarioId::nav_reach: return "nav_reach";
    case ScenarioId::nav_turn_place: return "nav_turn_place";
    case ScenarioId::long_horizon: return "long_horizon";
    default: return "cruise";
  }
}

ScenarioId scenario_from_string(const std::string& s) {
  if (s == "nav_reach") return ScenarioId::nav_reach;
  if (s == "nav_turn_place") return ScenarioId::nav_turn_place;
  if (s == "long_horizon") return ScenarioId::long_horizon;
  if (s == "cruise") return ScenarioId::cruise;
  throw Error("unknown scenario '" + s + "' (expected nav_reach, nav_turn_place, long_horizon or cruise)");
}

std::string to_string(StageKind k) {
  switch (k) {
    case StageKind::navigate: return "navigate";
    case StageKind::grasp: return "grasp";
    case StageKind::retract: return "retract";
    case StageKind::place: return "place";
    default: return "cruise";
  }
}

namespace {

Stage navigate(double x, double y, double theta) {
  Stage s;
  s.kind = StageKind::navigate;
  s.goal = Pose2(x, y, theta);
  return s;
}

Stage at_point(StageKind kind, double x, double y, double z) {
  Stage s;
  s.kind = kind;
  s.point = Vec3(x, y, z);
  return s;
}

Stage retract() {
  Stage s;
  s.kind = StageKind::retract;
  return s;
}

}  // namespace

SimScenario make_scenario(ScenarioId id) {
  SimScenario sc;
  sc.id = id;
  sc.carry_hand = Pose3(UnitQuat::rot_y(0.4), Vec3(0.35, 0.0, -0.25));
  sc.grasp_rotation_hand = sc.carry_hand;
  switch (id) {
    case ScenarioId::nav_reach:
      sc.stages = {navigate(2.5, 0.5, 0.3), at_point(StageKind::grasp, 2.5 + 0.55 * std::cos(0.3) - 0.05 * std::sin(0.3),
                                                    0.5 + 0.55 * std::sin(0.3) + 0.05 * std::cos(0.3), 0.78),
                   retract()};
      break;
    case ScenarioId::nav_turn_place:
      sc.start_holding = true;
      sc.stages = {navigate(1.5, 1.5, kPi / 2), at_point(StageKind::place, 1.5, 2.05, 0.75)};
      break;
    case ScenarioId::long_horizon:
      sc.stages = {navigate(2.0, 0.0, 0.0), at_point(StageKind::grasp, 2.55, 0.05, 0.80), retract(),
                   navigate(1.0, 1.6, kPi), at_point(StageKind::place, 0.45, 1.6, 0.75)};
      break;
    case ScenarioId::cruise: {
      Stage s;
      s.kind = StageKind::cruise;
      s.distance = 2.4;
      sc.stages = {s};
      sc.initial_speed = 0.3;
      sc.time_limit = 12.0;
      break;
    }
  }
  return sc;
}

void SimScenario::validate(const PlantConfig& plant) const {
  if (stages.empty()) throw Error("scenario has no stages");
  if (!(time_limit > 0.0)) throw Error("scenario time limit must be positive");
  Pose2 base = start;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Stage& s = stages[i];
    if (s.kind == StageKind::navigate) base = s.goal;
    if (s.kind == StageKind::grasp || s.kind == StageKind::place) {
      const Vec3 rel = inverse(lift(base, chest_height)).transform_point(s.point);
      const Vec3 margin = Vec3::Constant(0.01);
      if ((rel.array() < (plant.reach_min + margin).array()).any() ||
          (rel.array() > (plant.reach_max - margin).array()).any()) {
        throw Error("unreachable goal: stage " + std::to_string(i) + " (" + to_string(s.kind) +
                    ") point is outside the reach box from its base pose");
      }
    }
    if (s.kind == StageKind::cruise && !(s.distance > 0.0)) throw Error("cruise distance must be positive");
  }
  const Vec3 c = carry_hand.translation;
  if ((c.array() < plant.reach_min.array()).any() || (c.array() > plant.reach_max.array()).any()) {
    throw Error("unreachable goal: carry pose outside the reach box");
  }
}

Eigen::VectorXd scenario_features(const SimScenario& sc, int stage, const RobotState& robot) {
  Eigen::VectorXd f = Eigen::VectorXd::Zero(kScenarioFeatureDim);
  const int n = sc.stage_count();
  const int k = std::clamp(stage, 0, n - 1);
  const Stage& s = sc.stages[static_cast<std::size_t>(k)];
  if (s.kind == StageKind::navigate) {
    const Pose2 d = between(robot.base, s.goal);
    f << d.x, d.y, std::sin(d.theta), std::cos(d.theta), 0, 0, 0, 0;
  } else if (s.kind == StageKind::grasp || s.kind == StageKind::place) {
    const Vec3 p = inverse(lift(robot.base, sc.chest_height)).transform_point(s.point);
    f.segment<3>(4) = p;
  }
  f[7] = static_cast<double>(stage) / n;
  return f;
}

TaskTracker::TaskTracker(const SimScenario& sc, TrackerConfig cfg, const PlantState& initial)
    : sc_(sc), cfg_(cfg), cruise_start_(initial.base) {
  st_.holding = sc.start_holding;
}

void TaskTracker::fail(const std::string& reason) {
  if (finished()) return;
  st_.failed = true;
  st_.failure = reason;
}

void TaskTracker::update(const PlantState& s, double peak_accel) {
  if (finished()) return;
  const double h = sc_.chest_height;
  const Vec3 hand_world = (lift(s.base, h) * s.hand_rel).translation;

  if (st_.holding) {
    if (peak_accel > cfg_.slip_accel) return fail("slip");
    const Stage& cur = sc_.stages[static_cast<std::size_t>(st_.stage)];
    if (cur.kind == StageKind::navigate && std::abs(s.v) > cfg_.moving_speed &&
        (s.hand_rel.translation - sc_.carry_hand.translation).norm() > cfg_.envelope_tol) {
      return fail("carry envelope");
    }
    if (s.grip > cfg_.open_above && cur.kind != StageKind::place) return fail("drop");
  }

  while (st_.stage < sc_.stage_count()) {
    const Stage& cur = sc_.stages[static_cast<std::size_t>(st_.stage)];
    bool advance = false;
    switch (cur.kind) {
      case StageKind::navigate: {
        const Pose2 d = between(s.base, cur.goal);
        advance = std::hypot(d.x, d.y) <= cur.pos_tol && std::abs(d.theta) <= cur.heading_tol &&
                  std::abs(s.v) < cfg_.stop_speed;
        break;
      }
      case StageKind::grasp:
        if (s.grip < cfg_.closed_below) {
          if ((hand_world - cur.point).norm() > cfg_.grasp_tol) return fail("missed grasp");
          st_.holding = true;
          advance = true;
        }
        break;
      case StageKind::retract:
        advance = (s.hand_rel.translation - sc_.carry_hand.translation).norm() <= cfg_.retract_tol;
        break;
      case StageKind::place:
        if (st_.holding && s.grip > cfg_.open_above) {
          if ((hand_world - cur.point).norm() > cfg_.place_tol) return fail("drop");
          st_.holding = false;
          advance = true;
        }
        break;
      case StageKind::cruise:
        advance = between(cruise_start_, s.base).x >= cur.distance;
        break;
    }
    if (!advance) break;
    ++st_.stage;
  }
  if (st_.stage >= sc_.stage_count()) {
    st_.done = true;
    st_.done_time = s.t;
  }
}

}  // namespace dex
