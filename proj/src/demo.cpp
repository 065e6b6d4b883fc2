#include "dex/demo.hpp"

#include "dex/rng.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace dex {

namespace {

// Sample instants at `rate` starting at t0, with every instant that falls on
// the 10 Hz grid written exactly as t0 + k / 10.
std::vector<double> stream_times(double t0, double duration, double rate) {
  std::vector<double> t;
  const int per_grid = static_cast<int>(std::lround(rate / 10.0));
  const auto n = static_cast<int>(std::floor(duration * rate + 1e-9));
  for (int j = 0; j <= n; ++j) {
    if (per_grid > 0 && j % per_grid == 0 && std::abs(rate - 10.0 * per_grid) < 1e-12) {
      t.push_back(t0 + static_cast<double>(j / per_grid) / 10.0);
    } else {
      t.push_back(t0 + static_cast<double>(j) / rate);
    }
  }
  return t;
}

// Grid interval and fraction for a session-relative time.
std::pair<std::size_t, double> grid_at(double rel, std::size_t n) {
  const double x = rel * 10.0;
  auto k = static_cast<std::size_t>(std::floor(x + 1e-9));
  if (k >= n - 1) return {n - 2, 1.0};
  double f = x - static_cast<double>(k);
  if (std::abs(f) < 1e-9) f = 0.0;
  return {k, f};
}

Pose3 interp_series(const std::vector<Pose3>& s, double rel) {
  const auto [k, f] = grid_at(rel, s.size());
  if (f == 0.0) return s[k];
  if (f == 1.0) return s[k + 1];
  return interpolate(s[k], s[k + 1], f);
}

VioTrajectory render(Node node, const std::vector<double>& times, double t0, const std::vector<Pose3>& imu_world,
                     double cov) {
  VioTrajectory tr{node, {}};
  for (double t : times) tr.samples.push_back({t, interp_series(imu_world, t - t0), cov});
  return tr;
}

void add_vio_noise(VioTrajectory& tr, const DemoOptions& o, std::mt19937_64& rng) {
  if (o.vio_pos_noise <= 0.0 && o.vio_rot_noise <= 0.0 && o.vio_drift <= 0.0) return;
  std::normal_distribution<double> n(0.0, 1.0);
  Vec3 drift = Vec3::Zero();
  double prev_t = tr.samples.front().t;
  for (VioSample& s : tr.samples) {
    const double dt = s.t - prev_t;
    prev_t = s.t;
    drift += o.vio_drift * std::sqrt(std::max(dt, 0.0)) * Vec3(n(rng), n(rng), n(rng));
    const Vec3 dp = o.vio_pos_noise * Vec3(n(rng), n(rng), n(rng)) + drift;
    const Vec3 dr = o.vio_rot_noise * Vec3(n(rng), n(rng), n(rng));
    s.pose = Pose3(s.pose.rotation * UnitQuat::exp(dr), s.pose.translation + dp);
    s.cov_trace = o.cov_trace + 3.0 * o.vio_pos_noise * o.vio_pos_noise + drift.squaredNorm();
  }
}

}  // namespace

ExpertDemo scripted_expert(const SimScenario& sc, std::uint64_t seed, const DemoOptions& o) {
  o.calib.validate();
  if (!(o.chest_rate > 0.0) || !(o.hand_rate > 0.0) || !(o.marker_rate > 0.0)) {
    throw Error("scripted_expert: stream rates must be positive");
  }

  // Ideal demonstrator: kinematic body, no latency, chest-relative planning.
  EpisodeConfig cfg;
  cfg.plant = PlantConfig::kinematic();
  cfg.plant.reach_min = PlantConfig{}.reach_min;
  cfg.plant.reach_max = PlantConfig{}.reach_max;
  cfg.executor.latency = LatencyConfig::zero();
  cfg.executor.frame = LabelFrame::relative;
  cfg.slip_lo = cfg.slip_hi = std::numeric_limits<double>::infinity();
  cfg.tracker.envelope_tol = std::numeric_limits<double>::infinity();
  if (o.demo_speed > 0.0) {
    cfg.locomotion_variation = false;
    cfg.expert.v_cruise = o.demo_speed;
  }
  const EpisodeResult ep = run_expert_episode(sc, cfg, seed);
  if (!ep.metrics.success) {
    throw Error("scripted_expert: demonstrator failed the " + to_string(sc.id) + " scenario (" +
                ep.metrics.failure + ")");
  }
  const std::vector<PlantState>& trace = ep.trace;
  const std::size_t n = trace.size();
  if (n < 3) throw Error("scripted_expert: demonstration too short");

  ExpertDemo demo;
  DemoTruth& tr = demo.truth;
  tr.demo_speed = ep.metrics.demo_speed;

  // Chest camera with gait bob and sway; the hand rides on the chest-relative plan.
  double travelled = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) travelled += std::abs(between(trace[k - 1].base, trace[k].base).x);
    const double phase = 2.0 * kPi * travelled / o.stride;
    const Pose2& b = trace[k].base;
    const double lat = o.sway_lateral * std::sin(phase);
    const Vec3 pos(b.x - lat * std::sin(b.theta), b.y + lat * std::cos(b.theta),
                   o.chest_height + o.bob_amplitude * std::sin(2.0 * phase));
    const Pose3 chest(UnitQuat::rot_z(b.theta + o.sway_yaw * std::sin(phase)), pos);
    tr.chest_world.push_back(chest);
    tr.hand_world.push_back(chest * trace[k].hand_rel);
  }
  for (std::size_t k = 0; k < n; ++k) {
    DemoStep s;
    s.t = static_cast<double>(k) / 10.0;
    s.base = yaw_project(tr.chest_world[k]);
    s.hand_rel = inverse(tr.chest_world[k]) * tr.hand_world[k];
    s.grip = trace[k].grip;
    tr.labels.push_back(s);
  }

  // Frames, extrinsics and the board.
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto geo = make_rng(seed, "demo-geometry");
  tr.cross = Pose3(UnitQuat::rot_z(kPi * u(geo)), Vec3(2.0 * u(geo), 2.0 * u(geo), 0.2 * u(geo)));
  const Pose2 s0 = trace.front().base;
  tr.board_world = lift(oplus(s0, Pose2(1.5, 0.3 * u(geo), 0.0)), 1.2) *
                   Pose3(UnitQuat::rot_z(kPi) * UnitQuat::rot_y(0.2 * u(geo)), Vec3::Zero());
  RawSession& s = demo.session;
  s.id = to_string(sc.id) + "-" + std::to_string(seed);
  s.chest_ext = Extrinsic{Node::chest, Pose3(UnitQuat::rot_y(0.05 * u(geo)), Vec3(0.03, 0.0, 0.02))};
  s.hand_ext = Extrinsic{Node::hand, Pose3(UnitQuat::rot_x(0.1 * u(geo)), Vec3(0.0, 0.02, 0.01))};

  std::vector<Pose3> chest_imu, hand_imu;
  const Pose3 g_inv = inverse(tr.cross);
  for (std::size_t k = 0; k < n; ++k) {
    chest_imu.push_back(tr.chest_world[k] * inverse(s.chest_ext.imu_from_camera));
    hand_imu.push_back(g_inv * tr.hand_world[k] * inverse(s.hand_ext.imu_from_camera));
  }
  const double duration = static_cast<double>(n - 1) / 10.0;
  const std::vector<double> chest_t = stream_times(o.t0, duration, o.chest_rate);
  const std::vector<double> hand_t = stream_times(o.t0, duration, o.hand_rate);
  s.chest = render(Node::chest, chest_t, o.t0, chest_imu, o.cov_trace);
  s.hand = render(Node::hand, hand_t, o.t0, hand_imu, o.cov_trace);

  // Detections from the noiseless streams over the first 30% of the session.
  auto det_rng = make_rng(seed, "demo-detections");
  std::normal_distribution<double> nd(0.0, 1.0);
  auto detect = [&](const VioTrajectory& traj, const Extrinsic& ext, const Pose3& board) {
    for (int i = 0; i < o.detections_per_node; ++i) {
      const double t = o.t0 + 0.3 * duration * (i + 0.5) / o.detections_per_node;
      Pose3 c_tag = inverse(traj.pose_at(t) * ext.imu_from_camera) * board;
      if (o.detection_pos_noise > 0.0 || o.detection_rot_noise > 0.0) {
        const Vec3 dp(nd(det_rng), nd(det_rng), nd(det_rng));
        const Vec3 dr(nd(det_rng), nd(det_rng), nd(det_rng));
        c_tag = Pose3(c_tag.rotation * UnitQuat::exp(o.detection_rot_noise * dr),
                      c_tag.translation + o.detection_pos_noise * dp);
      }
      s.detections.push_back({traj.node, t, c_tag});
    }
  };
  detect(s.chest, s.chest_ext, tr.board_world);
  detect(s.hand, s.hand_ext, g_inv * tr.board_world);

  auto vio_rng = make_rng(seed, "demo-vio");
  add_vio_noise(s.chest, o, vio_rng);
  add_vio_noise(s.hand, o, vio_rng);

  std::vector<double> grip(n);
  for (std::size_t k = 0; k < n; ++k) grip[k] = trace[k].grip;
  for (double t : stream_times(o.t0, duration, o.marker_rate)) {
    const auto [k, f] = grid_at(t - o.t0, n);
    const double g = grip[k] + f * (grip[k + 1] - grip[k]);
    s.marker_distance.push_back({t, o.calib.d_closed + g * (o.calib.d_open - o.calib.d_closed)});
  }
  if (o.images) {
    char buf[64];
    int i = 0;
    for (double t : chest_t) {
      std::snprintf(buf, sizeof buf, "chest/%06d.png", i++);
      s.chest_images.push_back({t, buf});
    }
    i = 0;
    for (double t : stream_times(o.t0, duration, o.chest_rate)) {
      std::snprintf(buf, sizeof buf, "hand/%06d.png", i++);
      s.hand_images.push_back({t, buf});
    }
  }
  return demo;
}

}  // namespace dex
