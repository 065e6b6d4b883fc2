#include "dex/anchoring.hpp"

#include <algorithm>
#include <cmath>

namespace dex {

std::string to_string(Node n) { return n == Node::chest ? "chest" : "hand"; }

Node node_from_string(const std::string& s) {
  if (s == "chest") return Node::chest;
  if (s == "hand") return Node::hand;
  throw Error("unknown node '" + s + "' (expected chest or hand)");
}

double VioTrajectory::start_time() const {
  if (samples.empty()) throw Error("empty trajectory");
  return samples.front().t;
}

double VioTrajectory::end_time() const {
  if (samples.empty()) throw Error("empty trajectory");
  return samples.back().t;
}

bool VioTrajectory::covers(double t) const {
  return !samples.empty() && t >= samples.front().t && t <= samples.back().t;
}

namespace {

// Index i with samples[i].t <= t < samples[i+1].t (or the last interval), and
// the interpolation fraction inside it.
std::pair<std::size_t, double> bracket(const std::vector<VioSample>& s, double t) {
  if (s.size() == 1) return {0, 0.0};
  auto it = std::upper_bound(s.begin(), s.end(), t,
                             [](double v, const VioSample& x) { return v < x.t; });
  std::size_t i = it == s.begin() ? 0 : static_cast<std::size_t>(it - s.begin()) - 1;
  i = std::min(i, s.size() - 2);
  const double span = s[i + 1].t - s[i].t;
  return {i, (t - s[i].t) / span};
}

}  // namespace

Pose3 VioTrajectory::pose_at(double t) const {
  if (!covers(t)) {
    throw OutOfSpanError(to_string(node) + " trajectory does not cover t=" + std::to_string(t));
  }
  const auto [i, f] = bracket(samples, t);
  if (f == 0.0) return samples[i].pose;
  return interpolate(samples[i].pose, samples[i + 1].pose, f);
}

double VioTrajectory::cov_trace_at(double t) const {
  if (!covers(t)) {
    throw OutOfSpanError(to_string(node) + " trajectory does not cover t=" + std::to_string(t));
  }
  const auto [i, f] = bracket(samples, t);
  if (f == 0.0) return samples[i].cov_trace;
  return samples[i].cov_trace + f * (samples[i + 1].cov_trace - samples[i].cov_trace);
}

void VioTrajectory::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].cov_trace < 0.0 || !std::isfinite(samples[i].cov_trace)) {
      throw Error(to_string(node) + " trajectory: negative covariance trace at sample " +
                  std::to_string(i));
    }
    if (i > 0 && !(samples[i].t > samples[i - 1].t)) {
      throw Error(to_string(node) + " trajectory: timestamps not strictly increasing at sample " +
                  std::to_string(i));
    }
  }
}

Pose3 board_pose_in_world(const VioTrajectory& traj, const Extrinsic& ext, const TagDetection& det) {
  return traj.pose_at(det.t) * ext.imu_from_camera * det.cam_from_tag;
}

PoseAverage average_poses(std::span<const Pose3> poses) {
  if (poses.empty()) throw Error("average_poses: empty input");
  const UnitQuat& ref = poses.front().rotation;
  Vec3 t_sum = Vec3::Zero();
  Eigen::Vector4d q_sum = Eigen::Vector4d::Zero();
  for (const Pose3& p : poses) {
    t_sum += p.translation;
    const UnitQuat q = ref.dot(p.rotation) < 0.0 ? p.rotation.negated() : p.rotation;
    q_sum += Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
  }
  const double n = static_cast<double>(poses.size());
  PoseAverage out;
  out.mean = Pose3(UnitQuat(q_sum[0], q_sum[1], q_sum[2], q_sum[3]), t_sum / n);
  for (std::size_t i = 0; i < poses.size() && !out.ill_conditioned; ++i) {
    for (std::size_t j = i + 1; j < poses.size(); ++j) {
      if (geodesic_so3(poses[i].rotation, poses[j].rotation) > 0.5 * kPi) {
        out.ill_conditioned = true;
        break;
      }
    }
  }
  return out;
}

Pose3 cross_node_transform(const Pose3& anchor_chest, const Pose3& anchor_hand) {
  return anchor_chest * inverse(anchor_hand);
}

NodeAnchor anchor_node(const VioTrajectory& traj, const Extrinsic& ext,
                       std::span<const TagDetection> detections, double cov_threshold) {
  NodeAnchor out;
  out.node = traj.node;
  std::vector<Pose3> boards;
  for (const TagDetection& d : detections) {
    if (d.node != traj.node) continue;
    if (!traj.covers(d.t) || traj.cov_trace_at(d.t) > cov_threshold) {
      ++out.rejected_count;
      continue;
    }
    boards.push_back(board_pose_in_world(traj, ext, d));
  }
  if (boards.empty()) {
    throw AnchorRejected("no valid board detections for the " + to_string(traj.node) + " node");
  }
  const PoseAverage avg = average_poses(boards);
  out.world_from_tag = avg.mean;
  out.ill_conditioned = avg.ill_conditioned;
  out.detection_count = boards.size();
  double pos_sq = 0.0, rot_sq = 0.0;
  for (const Pose3& b : boards) {
    pos_sq += (b.translation - avg.mean.translation).squaredNorm();
    const double a = geodesic_so3(b.rotation, avg.mean.rotation);
    rot_sq += a * a;
  }
  out.position_rms = std::sqrt(pos_sq / static_cast<double>(boards.size()));
  out.rotation_rms = std::sqrt(rot_sq / static_cast<double>(boards.size()));
  return out;
}

AnchorResult compute_anchor(const VioTrajectory& chest, const VioTrajectory& hand,
                            const Extrinsic& chest_ext, const Extrinsic& hand_ext,
                            std::span<const TagDetection> detections, double cov_threshold) {
  AnchorResult r;
  r.chest = anchor_node(chest, chest_ext, detections, cov_threshold);
  r.hand = anchor_node(hand, hand_ext, detections, cov_threshold);
  r.chest_world_from_hand_world = cross_node_transform(r.chest.world_from_tag, r.hand.world_from_tag);
  return r;
}

}  // namespace dex
