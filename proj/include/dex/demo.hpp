#pragma once

// Synthetic human demonstrations: the scripted expert drives an ideal
// kinematic body through a scenario, and the resulting motion is rendered
// as two-node VIO streams, board detections and fingertip-marker distances.

#include "dex/pipeline.hpp"
#include "dex/sim.hpp"

namespace dex {

struct DemoOptions {
  double chest_height = 1.3;     // m, chest camera height of the demonstrator
  double bob_amplitude = 0.015;  // m, vertical gait oscillation
  double sway_lateral = 0.0015;  // m, side-to-side gait sway
  double sway_yaw = 0.01;        // rad, torso yaw oscillation
  double stride = 0.6;           // m walked per gait cycle
  double chest_rate = 30.0;      // Hz
  double hand_rate = 20.0;       // Hz
  double marker_rate = 30.0;     // Hz
  double t0 = 100.0;             // s, first sample time
  // VIO-like noise: white pose noise plus a position random walk.
  double vio_pos_noise = 0.0;    // m
  double vio_rot_noise = 0.0;    // rad
  double vio_drift = 0.0;        // m / sqrt(s)
  double cov_trace = 1e-4;       // reported position covariance trace, m^2
  int detections_per_node = 30;
  double detection_pos_noise = 0.0;  // m
  double detection_rot_noise = 0.0;  // rad
  bool images = true;
  GripperCalib calib;
  /// Demonstration speed; <= 0 draws it from the episode seed.
  double demo_speed = 0.0;
};

/// Retained ground truth on the 10 Hz demonstration grid.
struct DemoTruth {
  std::vector<Pose3> chest_world;  // T^{W_c}_{C_c}
  std::vector<Pose3> hand_world;   // T^{W_c}_{C_h}
  std::vector<DemoStep> labels;    // decoupled labels, session-relative times
  Pose3 cross;                     // T^{W_c}_{W_h}
  Pose3 board_world;               // T^{W_c}_{tag}
  double demo_speed = 0.0;
};

struct ExpertDemo {
  RawSession session;
  DemoTruth truth;
};

/// Throws Error when the scenario is unreachable or the expert fails it.
ExpertDemo scripted_expert(const SimScenario& sc, std::uint64_t seed, const DemoOptions& opts = {});

}  // namespace dex
