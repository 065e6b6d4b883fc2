#pragma once

// Unifies the independently initialized VIO world frames of the chest and
// hand nodes through repeated detections of one static fiducial board.

#include "dex/geometry.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dex {

enum class Node { chest, hand };

std::string to_string(Node n);
Node node_from_string(const std::string& s);

struct VioSample {
  double t = 0.0;
  Pose3 pose;              // T^{W_i}_{I_i}(t)
  double cov_trace = 0.0;  // position covariance trace, m^2
};

/// Thrown when a query time falls outside a trajectory's sample span.
class OutOfSpanError : public Error {
 public:
  using Error::Error;
};

/// Thrown when a node has no usable detection to anchor against.
class AnchorRejected : public Error {
 public:
  using Error::Error;
};

struct VioTrajectory {
  Node node = Node::chest;
  std::vector<VioSample> samples;

  bool empty() const { return samples.empty(); }
  double start_time() const;
  double end_time() const;
  bool covers(double t) const;
  /// Linear position, slerp rotation between bracketing samples.
  Pose3 pose_at(double t) const;
  /// Linear interpolation of the covariance trace.
  double cov_trace_at(double t) const;
  /// Throws Error unless timestamps strictly increase and traces are >= 0.
  void validate() const;
};

struct Extrinsic {
  Node node = Node::chest;
  Pose3 imu_from_camera;  // T^{I_i}_{C_i}
};

struct TagDetection {
  Node node = Node::chest;
  double t = 0.0;
  Pose3 cam_from_tag;  // T^{C_i}_{tag}(t)
};

struct PoseAverage {
  Pose3 mean;
  /// Set when two input rotations are more than 90 degrees apart.
  bool ill_conditioned = false;
};

struct NodeAnchor {
  Node node = Node::chest;
  Pose3 world_from_tag;  // averaged T^{W_i}_{tag}
  std::size_t detection_count = 0;
  std::size_t rejected_count = 0;
  double position_rms = 0.0;  // m, per-detection scatter about the mean
  double rotation_rms = 0.0;  // rad
  bool ill_conditioned = false;
};

struct AnchorResult {
  NodeAnchor chest;
  NodeAnchor hand;
  Pose3 chest_world_from_hand_world;  // T^{W_c}_{W_h}
};

/// T^{W}_{tag}(t) = T^{W}_{I}(t) T^{I}_{C} T^{C}_{tag}(t). Throws OutOfSpanError
/// when the detection time lies outside the trajectory.
Pose3 board_pose_in_world(const VioTrajectory& traj, const Extrinsic& ext, const TagDetection& det);

/// Arithmetic mean translation and chordal L2 mean rotation (quaternions
/// hemisphere-aligned to the first sample, averaged, renormalized).
PoseAverage average_poses(std::span<const Pose3> poses);

/// T^{W_c}_{W_h} = anchor_chest * anchor_hand^-1.
Pose3 cross_node_transform(const Pose3& anchor_chest, const Pose3& anchor_hand);

/// Averages every valid detection of one node. A detection is valid when its
/// time is inside the trajectory span and the interpolated covariance trace is
/// at most cov_threshold. Throws AnchorRejected if none are valid.
NodeAnchor anchor_node(const VioTrajectory& traj, const Extrinsic& ext,
                       std::span<const TagDetection> detections, double cov_threshold);

AnchorResult compute_anchor(const VioTrajectory& chest, const VioTrajectory& hand,
                            const Extrinsic& chest_ext, const Extrinsic& hand_ext,
                            std::span<const TagDetection> detections, double cov_threshold);

}  // namespace dex
