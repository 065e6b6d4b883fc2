#include "dex/pipeline.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>

namespace dex {

void GripperCalib::validate() const {
  if (!(d_open > d_closed)) throw Error("gripper calibration requires d_open > d_closed");
}

std::size_t nearest_index(const ImageStream& stream, double t) {
  if (stream.empty()) throw Error("nearest_index: empty stream");
  auto it = std::lower_bound(stream.begin(), stream.end(), t,
                             [](const Timestamped<std::string>& s, double v) { return s.t < v; });
  if (it == stream.begin()) return 0;
  if (it == stream.end()) return stream.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - stream.begin());
  const std::size_t lo = hi - 1;
  return (t - stream[lo].t) <= (stream[hi].t - t) ? lo : hi;
}

namespace {

double marker_at(const MarkerStream& m, double t) {
  auto it = std::upper_bound(m.begin(), m.end(), t,
                             [](double v, const Timestamped<double>& s) { return v < s.t; });
  if (it == m.begin()) return m.front().value;
  if (it == m.end()) return m.back().value;
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double f = (t - a.t) / (b.t - a.t);
  return a.value + f * (b.value - a.value);
}

template <typename Stream>
void check_ordered(const Stream& s, const std::string& name) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (!(s[i].t > s[i - 1].t)) throw Error(name + " stream is not strictly time-ordered");
  }
}

}  // namespace

std::vector<AlignedSample> resample_to_grid(const RawSession& session, double rate_hz) {
  if (!(rate_hz > 0.0)) throw Error("resample_to_grid: rate must be positive");
  if (session.chest.empty()) throw Error("resample_to_grid: chest trajectory is empty");
  if (session.hand.empty()) throw Error("resample_to_grid: hand trajectory is empty");
  if (session.marker_distance.empty()) throw Error("resample_to_grid: marker stream is empty");
  if (!session.cross_node) throw Error("resample_to_grid: cross-node transform not set");
  session.chest.validate();
  session.hand.validate();
  check_ordered(session.marker_distance, "marker");
  check_ordered(session.chest_images, "chest image");
  check_ordered(session.hand_images, "hand image");

  double start = std::max({session.chest.start_time(), session.hand.start_time(),
                           session.marker_distance.front().t});
  double end = std::min({session.chest.end_time(), session.hand.end_time(),
                         session.marker_distance.back().t});
  for (const ImageStream* s : {&session.chest_images, &session.hand_images}) {
    if (s->empty()) continue;
    start = std::max(start, s->front().t);
    end = std::min(end, s->back().t);
  }
  if (end < start) throw Error("resample_to_grid: streams do not overlap in time");
  const auto count = static_cast<std::size_t>(std::floor((end - start) * rate_hz + 1e-9)) + 1;

  const Pose3& g = *session.cross_node;
  std::vector<AlignedSample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    AlignedSample a;
    a.t = static_cast<double>(k) / rate_hz;
    const double abs_t = std::min(start + a.t, end);
    a.chest_world = session.chest.pose_at(abs_t) * session.chest_ext.imu_from_camera;
    a.hand_world = g * session.hand.pose_at(abs_t) * session.hand_ext.imu_from_camera;
    a.marker_distance = marker_at(session.marker_distance, abs_t);
    if (!session.chest_images.empty()) {
      a.chest_image = session.chest_images[nearest_index(session.chest_images, abs_t)].value;
    }
    if (!session.hand_images.empty()) {
      a.hand_image = session.hand_images[nearest_index(session.hand_images, abs_t)].value;
    }
    out.push_back(std::move(a));
  }
  return out;
}

namespace {

// Weights giving the least-squares polynomial value at the centre of a
// symmetric window of 2*half+1 samples.
Eigen::VectorXd savgol_center_weights(int half, int order) {
  const int n = 2 * half + 1;
  const int deg = std::min(order, 2 * half);
  Eigen::MatrixXd a(n, deg + 1);
  for (int i = 0; i < n; ++i) {
    double p = 1.0;
    for (int j = 0; j <= deg; ++j) {
      a(i, j) = p;
      p *= static_cast<double>(i - half);
    }
  }
  const Eigen::MatrixXd m = a.transpose() * a;
  Eigen::VectorXd e0 = Eigen::VectorXd::Zero(deg + 1);
  e0[0] = 1.0;
  return a * m.ldlt().solve(e0);
}

void check_savgol_args(std::size_t length, int window, int order) {
  if (window % 2 == 0) throw Error("savgol_smooth: window must be odd");
  if (window < 5) throw Error("savgol_smooth: window must be at least 5");
  if (order < 0 || order >= window) throw Error("savgol_smooth: order must be in [0, window)");
  if (static_cast<std::size_t>(window) > length) {
    throw Error("savgol_smooth: window " + std::to_string(window) + " exceeds series length " +
                std::to_string(length));
  }
}

}  // namespace

std::vector<double> savgol_smooth(std::span<const double> series, int window, int order) {
  check_savgol_args(series.size(), window, order);
  const int n = static_cast<int>(series.size());
  const int h = window / 2;
  std::map<int, Eigen::VectorXd> weights;
  std::vector<double> out(series.size());
  for (int i = 0; i < n; ++i) {
    const int half = std::min({h, i, n - 1 - i});
    auto it = weights.find(half);
    if (it == weights.end()) it = weights.emplace(half, savgol_center_weights(half, order)).first;
    double acc = 0.0;
    for (int j = -half; j <= half; ++j) acc += it->second[j + half] * series[i + j];
    out[i] = acc;
  }
  return out;
}

std::vector<Pose3> savgol_smooth_poses(std::span<const Pose3> poses, int window, int order) {
  check_savgol_args(poses.size(), window, order);
  const std::size_t n = poses.size();
  std::vector<std::vector<double>> comp(7, std::vector<double>(n));
  UnitQuat prev = poses.front().rotation;
  for (std::size_t i = 0; i < n; ++i) {
    const UnitQuat q = prev.dot(poses[i].rotation) < 0.0 ? poses[i].rotation.negated()
                                                         : poses[i].rotation;
    prev = q;
    for (int c = 0; c < 3; ++c) comp[c][i] = poses[i].translation[c];
    comp[3][i] = q.w();
    comp[4][i] = q.x();
    comp[5][i] = q.y();
    comp[6][i] = q.z();
  }
  for (auto& c : comp) c = savgol_smooth(c, window, order);
  std::vector<Pose3> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = Pose3(UnitQuat(comp[3][i], comp[4][i], comp[5][i], comp[6][i]),
                   Vec3(comp[0][i], comp[1][i], comp[2][i]));
  }
  return out;
}

QualityReport quality_filter(const RawSession& session, double cov_threshold,
                             const Vec3& workspace_half_extent) {
  QualityReport r;
  bool cov_fail = false, ws_fail = false;
  for (const VioTrajectory* traj : {&session.chest, &session.hand}) {
    if (traj->empty()) continue;
    const Vec3 origin = traj->samples.front().pose.translation;
    for (const VioSample& s : traj->samples) {
      r.max_cov_trace = std::max(r.max_cov_trace, s.cov_trace);
      if (s.cov_trace > cov_threshold) cov_fail = true;
      const Vec3 d = (s.pose.translation - origin).cwiseAbs();
      r.max_displacement = std::max(r.max_displacement, d.maxCoeff());
      if ((d.array() > workspace_half_extent.array()).any()) ws_fail = true;
    }
  }
  if (cov_fail) r.reasons.push_back("covariance");
  if (ws_fail) r.reasons.push_back("workspace");
  r.accepted = r.reasons.empty();
  return r;
}

Pose3 decouple_step(const Pose3& chest_world, const Pose3& hand_world) {
  return inverse(chest_world) * hand_world;
}

NonholonomicProjection project_nonholonomic(std::span<const Pose2> series, double dt) {
  if (!(dt > 0.0)) throw Error("project_nonholonomic: dt must be positive");
  NonholonomicProjection out;
  for (std::size_t i = 0; i + 1 < series.size(); ++i) {
    const Pose2& a = series[i];
    const Pose2& b = series[i + 1];
    const double xd = (b.x - a.x) / dt;
    const double yd = (b.y - a.y) / dt;
    const double dth = wrap_angle(b.theta - a.theta);
    const double th = a.theta + 0.5 * dth;
    const double c = std::cos(th), s = std::sin(th);
    out.commands.push_back({xd * c + yd * s, dth / dt});
    out.lateral.push_back(-xd * s + yd * c);
  }
  return out;
}

double lateral_quantile(std::span<const double> residuals, double q) {
  if (residuals.empty()) throw Error("lateral_quantile: empty residual series");
  if (!(q > 0.0 && q <= 1.0)) throw Error("lateral_quantile: q must be in (0, 1]");
  std::vector<double> a(residuals.size());
  std::transform(residuals.begin(), residuals.end(), a.begin(),
                 [](double v) { return std::abs(v); });
  std::sort(a.begin(), a.end());
  const auto n = static_cast<double>(a.size());
  const auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-12));
  return a[std::clamp<std::size_t>(rank, 1, a.size()) - 1];
}

std::vector<double> saturation_filter(std::span<const double> v_perp, double clip, double tau,
                                      double dt) {
  if (!(clip >= 0.0)) throw Error("saturation_filter: clip must be non-negative");
  const double alpha = tau > 0.0 ? 1.0 - std::exp(-dt / tau) : 1.0;
  std::vector<double> out;
  out.reserve(v_perp.size());
  double y = 0.0;
  for (double u : v_perp) {
    y += alpha * (std::clamp(u, -clip, clip) - y);
    out.push_back(y);
  }
  return out;
}

double grip_from_markers(double d, const GripperCalib& calib) {
  return std::clamp((d - calib.d_closed) / (calib.d_open - calib.d_closed), 0.0, 1.0);
}

DemoDataset assemble_dataset(const RawSession& session, const Pose3& cross_node,
                             const GripperCalib& calib, const PipelineConfig& config) {
  calib.validate();
  DemoDataset ds;
  ds.session_id = session.id;
  ds.rate_hz = config.rate_hz;
  ds.report = quality_filter(session, config.cov_threshold, config.workspace_half_extent);
  if (!ds.report.accepted) {
    std::string why;
    for (const auto& r : ds.report.reasons) why += (why.empty() ? "" : ", ") + r;
    throw QualityRejected("session '" + session.id + "' rejected by quality filter (" + why + ")",
                          ds.report);
  }

  RawSession mapped = session;
  mapped.cross_node = cross_node;
  const std::vector<AlignedSample> grid = resample_to_grid(mapped, config.rate_hz);

  std::vector<Pose3> chest(grid.size()), hand(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    chest[i] = grid[i].chest_world;
    hand[i] = grid[i].hand_world;
  }
  if (config.smoothing) {
    chest = savgol_smooth_poses(chest, config.savgol_window, config.savgol_order);
    hand = savgol_smooth_poses(hand, config.savgol_window, config.savgol_order);
  }

  ds.steps.reserve(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    DemoStep s;
    s.t = grid[i].t;
    try {
      s.base = yaw_project(chest[i]);
    } catch (const DegeneratePoseError& e) {
      throw DegeneratePoseError("step " + std::to_string(i) + " (t=" + std::to_string(s.t) +
                                "): " + e.what());
    }
    s.hand_rel = decouple_step(chest[i], hand[i]);
    s.grip = grip_from_markers(grid[i].marker_distance, calib);
    s.chest_image = grid[i].chest_image;
    s.hand_image = grid[i].hand_image;
    ds.steps.push_back(std::move(s));
  }
  return ds;
}

std::vector<Action> make_action_labels(const DemoDataset& dataset) {
  if (dataset.steps.size() < 2) throw Error("make_action_labels: need at least two steps");
  std::vector<Action> out;
  out.reserve(dataset.steps.size() - 1);
  for (std::size_t i = 0; i + 1 < dataset.steps.size(); ++i) {
    out.push_back(action_between(dataset.steps[i].state(), dataset.steps[i + 1].state()));
  }
  return out;
}

}  // namespace dex
