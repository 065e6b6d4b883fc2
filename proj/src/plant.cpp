#include "dex/plant.hpp"

#include <algorithm>
#include <cmath>

namespace dex {

void PlantConfig::validate() const {
  if (!(substep > 0.0)) throw Error("plant: substep must be positive");
  if (!(v_max > 0.0) || !(omega_max > 0.0)) throw Error("plant: velocity limits must be positive");
  if (!(grip_rate > 0.0)) throw Error("plant: grip rate must be positive");
  if (!(lateral_clip >= 0.0)) throw Error("plant: lateral clip must be non-negative");
  if ((reach_max - reach_min).minCoeff() <= 0.0) throw Error("plant: empty reach box");
}

PlantConfig PlantConfig::kinematic() {
  PlantConfig c;
  c.tau_base = 0.0;
  c.tau_arm = 0.0;
  c.lateral_tau = 0.0;
  c.v_max = std::numeric_limits<double>::infinity();
  c.omega_max = std::numeric_limits<double>::infinity();
  c.grip_rate = std::numeric_limits<double>::infinity();
  c.reach_min = Vec3::Constant(-1e9);
  c.reach_max = Vec3::Constant(1e9);
  return c;
}

namespace {

// Exact first-order lag over dt: end value and mean value.
std::pair<double, double> lag(double x, double target, double tau, double dt) {
  if (tau <= 0.0) return {target, target};
  const double e = std::exp(-dt / tau);
  const double end = target + (x - target) * e;
  const double mean = target + (x - target) * (tau / dt) * (1.0 - e);
  return {end, mean};
}

}  // namespace

PlantState step_plant(const PlantState& s, const PlantCommand& cmd, double dt, const PlantConfig& cfg) {
  PlantState n = s;
  n.t = s.t + dt;
  if (dt <= 0.0) return n;
  const double v_cmd = std::clamp(cmd.v, -cfg.v_max, cfg.v_max);
  const double w_cmd = std::clamp(cmd.omega, -cfg.omega_max, cfg.omega_max);
  const double lat_cmd = std::clamp(cmd.v_lat, -cfg.lateral_clip, cfg.lateral_clip);

  const auto [v_end, v_mean] = lag(s.v, v_cmd, cfg.tau_base, dt);
  const auto [w_end, w_mean] = lag(s.omega, w_cmd, cfg.tau_base, dt);
  const auto [l_end, l_mean] = lag(s.v_lat, lat_cmd, cfg.lateral_tau, dt);
  n.v = v_end;
  n.omega = w_end;
  n.v_lat = l_end;
  n.accel = (v_end - s.v) / dt;

  const double mid = s.base.theta + 0.5 * w_mean * dt;
  const double c = std::cos(mid), sn = std::sin(mid);
  n.base = Pose2(s.base.x + dt * (v_mean * c - l_mean * sn), s.base.y + dt * (v_mean * sn + l_mean * c),
                 s.base.theta + w_mean * dt);

  const double a = cfg.tau_arm <= 0.0 ? 1.0 : 1.0 - std::exp(-dt / cfg.tau_arm);
  Vec3 p = s.hand_rel.translation + a * (cmd.hand_target.translation - s.hand_rel.translation);
  p = p.cwiseMax(cfg.reach_min).cwiseMin(cfg.reach_max);
  n.hand_rel = Pose3(slerp(s.hand_rel.rotation, cmd.hand_target.rotation, a), p);

  const double g_target = std::clamp(cmd.grip_target, 0.0, 1.0);
  const double g_step = cfg.grip_rate * dt;
  n.grip = s.grip + std::clamp(g_target - s.grip, -g_step, g_step);
  return n;
}

Plant::Plant(PlantConfig cfg, PlantState initial) : cfg_(std::move(cfg)), state_(std::move(initial)) {
  cfg_.validate();
  now_ = std::llround(state_.t * 1e6);
  active_.v = state_.v;
  active_.omega = state_.omega;
  active_.hand_target = state_.hand_rel;
  active_.grip_target = state_.grip;
}

void Plant::schedule(const PlantCommand& cmd, Micros effect_time) {
  if (effect_time < now_) throw Error("plant: command scheduled in the past");
  auto it = std::upper_bound(queue_.begin(), queue_.end(), effect_time,
                             [](Micros t, const auto& e) { return t < e.first; });
  queue_.insert(it, {effect_time, cmd});
  // Zero-delay commands apply immediately.
  while (!queue_.empty() && queue_.front().first <= now_) {
    active_ = queue_.front().second;
    queue_.pop_front();
  }
}

void Plant::advance_to(Micros t) {
  if (t < now_) throw Error("plant: cannot advance backwards");
  const Micros sub = std::max<Micros>(1, std::llround(cfg_.substep * 1e6));
  double lateral = 0.0;
  while (now_ < t) {
    while (!queue_.empty() && queue_.front().first <= now_) {
      active_ = queue_.front().second;
      queue_.pop_front();
    }
    Micros next = std::min(t, now_ + sub);
    if (!queue_.empty()) next = std::min(next, queue_.front().first);
    const double dt = static_cast<double>(next - now_) * 1e-6;
    const PlantState prev = state_;
    state_ = step_plant(state_, active_, dt, cfg_);
    const double mid = prev.base.theta + 0.5 * wrap_angle(state_.base.theta - prev.base.theta);
    lateral += std::abs(-std::sin(mid) * (state_.base.x - prev.base.x) +
                        std::cos(mid) * (state_.base.y - prev.base.y));
    state_.t = static_cast<double>(next) * 1e-6;
    now_ = next;
    peak_accel_ = std::max(peak_accel_, std::abs(state_.accel));
  }
  while (!queue_.empty() && queue_.front().first <= now_) {
    active_ = queue_.front().second;
    queue_.pop_front();
  }
  max_lateral_step_ = std::max(max_lateral_step_, lateral);
}

}  // namespace dex
