#pragma once

// Differential-drive base with first-order motor lag, a pose-tracked arm and a
// rate-limited gripper, stepped on a virtual clock.

#include "dex/executor.hpp"

#include <deque>
#include <limits>

namespace dex {

struct PlantConfig {
  double tau_base = 0.15;     // s, forward and yaw-rate lag; <= 0 means no lag
  double tau_arm = 0.08;      // s, hand tracking; <= 0 means the hand jumps to target
  double lateral_clip = 0.05;  // m/s, saturation of the lateral leakage channel
  double lateral_tau = 0.2;    // s, low-pass on the clipped lateral command
  double substep = 0.01;       // s
  double v_max = 0.35;         // m/s
  double omega_max = 1.2;      // rad/s
  double grip_rate = 4.0;      // aperture per second
  Vec3 reach_min{0.05, -0.6, -0.9};  // chest-relative hand box, m
  Vec3 reach_max{0.85, 0.6, 0.3};

  void validate() const;
  /// No lag, no limits: v equals the command after one substep.
  static PlantConfig kinematic();
};

struct PlantState {
  Pose2 base;
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s
  double v_lat = 0.0;  // filtered lateral leakage, m/s
  Pose3 hand_rel;
  double grip = 1.0;
  double t = 0.0;       // s
  double accel = 0.0;   // forward acceleration over the last substep, m/s^2

  RobotState robot() const { return {base, hand_rel, grip}; }
};

/// One substep of length dt under a constant command.
PlantState step_plant(const PlantState& s, const PlantCommand& cmd, double dt, const PlantConfig& cfg);

/// Event-driven plant: scheduled commands take effect at their effect times,
/// splitting substeps where needed.
class Plant : public ExecutorPlant {
 public:
  Plant(PlantConfig cfg, PlantState initial);

  Micros now() const override { return now_; }
  void advance_to(Micros t) override;
  RobotState read() const override { return state_.robot(); }
  void schedule(const PlantCommand& cmd, Micros effect_time) override;

  const PlantState& state() const { return state_; }
  const PlantConfig& config() const { return cfg_; }
  /// Largest |forward acceleration| since the last reset.
  double peak_accel() const { return peak_accel_; }
  void reset_peak_accel() { peak_accel_ = 0.0; }
  /// Largest body-frame lateral displacement accumulated over one advance, m.
  double max_lateral_step() const { return max_lateral_step_; }

 private:
  PlantConfig cfg_;
  PlantState state_;
  PlantCommand active_;
  std::deque<std::pair<Micros, PlantCommand>> queue_;
  Micros now_ = 0;
  double peak_accel_ = 0.0;
  double max_lateral_step_ = 0.0;
};

}  // namespace dex
