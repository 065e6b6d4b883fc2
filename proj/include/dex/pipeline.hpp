#pragma once

// Turns raw multi-rate chest/hand recordings into the decoupled 10 Hz
// demonstration dataset and its 11-D action labels.

#include "dex/action.hpp"
#include "dex/anchoring.hpp"
#include "dex/geometry.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dex {

using ImageStream = std::vector<Timestamped<std::string>>;
using MarkerStream = std::vector<Timestamped<double>>;

struct RawSession {
  std::string id;
  VioTrajectory chest{Node::chest, {}};
  VioTrajectory hand{Node::hand, {}};
  Extrinsic chest_ext{Node::chest, {}};
  Extrinsic hand_ext{Node::hand, {}};
  std::optional<Pose3> cross_node;  // T^{W_c}_{W_h}
  MarkerStream marker_distance;     // fingertip marker distance, m
  ImageStream chest_images;
  ImageStream hand_images;
  std::vector<TagDetection> detections;
};

struct GripperCalib {
  double d_closed = 0.020;  // m, aperture 0
  double d_open = 0.085;    // m, aperture 1
  void validate() const;
};

struct DemoStep {
  double t = 0.0;  // session-relative, on the exact grid
  Pose2 base;      // chest SE(2)
  Pose3 hand_rel;  // T^{C_c}_{C_h}
  double grip = 0.0;
  std::optional<std::string> chest_image;
  std::optional<std::string> hand_image;

  RobotState state() const { return {base, hand_rel, grip}; }
};

struct QualityReport {
  bool accepted = true;
  std::vector<std::string> reasons;  // "covariance" and/or "workspace"
  double max_cov_trace = 0.0;        // m^2, over both nodes
  double max_displacement = 0.0;     // m, largest per-axis excursion from the start
};

struct DemoDataset {
  std::string session_id;
  double rate_hz = 10.0;
  QualityReport report;
  std::vector<DemoStep> steps;
};

struct BaseCommand {
  double v = 0.0;      // m/s forward
  double omega = 0.0;  // rad/s
};

struct NonholonomicProjection {
  std::vector<BaseCommand> commands;
  std::vector<double> lateral;  // v_perp, m/s
};

/// One grid instant with both camera poses in the chest world frame W_c.
struct AlignedSample {
  double t = 0.0;  // session-relative
  Pose3 chest_world;
  Pose3 hand_world;
  double marker_distance = 0.0;
  std::optional<std::string> chest_image;
  std::optional<std::string> hand_image;
};

struct PipelineConfig {
  double rate_hz = 10.0;
  bool smoothing = true;
  int savgol_window = 9;
  int savgol_order = 2;
  double cov_threshold = 0.01;                 // m^2 trace
  Vec3 workspace_half_extent{5.0, 5.0, 5.0};  // m, box centred on the start
};

/// Thrown by assemble_dataset when the session fails the quality filter.
class QualityRejected : public Error {
 public:
  QualityRejected(const std::string& what, QualityReport r) : Error(what), report(std::move(r)) {}
  QualityReport report;
};

/// Index of the stream entry nearest to t; ties go to the earlier entry.
std::size_t nearest_index(const ImageStream& stream, double t);

/// Samples every stream on a uniform grid covering the common time span.
/// Positions are interpolated linearly, rotations by slerp, marker distances
/// linearly, images by nearest timestamp. The IMU poses are interpolated and
/// then mapped to camera poses in W_c, which requires session.cross_node.
std::vector<AlignedSample> resample_to_grid(const RawSession& session, double rate_hz = 10.0);

/// Local least-squares polynomial fit evaluated at each centre. Near the ends
/// the window shrinks symmetrically around the sample.
std::vector<double> savgol_smooth(std::span<const double> series, int window = 9, int order = 2);

/// Component-wise smoothing of positions and hemisphere-continuous
/// quaternions followed by renormalization.
std::vector<Pose3> savgol_smooth_poses(std::span<const Pose3> poses, int window, int order);

QualityReport quality_filter(const RawSession& session, double cov_threshold,
                             const Vec3& workspace_half_extent);

/// T^{C_c}_{C_h} = (T^{W_c}_{C_c})^-1 T^{W_c}_{C_h}
Pose3 decouple_step(const Pose3& chest_world, const Pose3& hand_world);

/// Forward differences over dt with the heading taken at the interval
/// midpoint. Returns one command and one lateral residual per interval.
NonholonomicProjection project_nonholonomic(std::span<const Pose2> series, double dt);

/// Nearest-rank quantile of |residual|, q in (0, 1].
double lateral_quantile(std::span<const double> residuals, double q);

/// Clamp to +-clip, then exact first-order low-pass from a zero initial state.
std::vector<double> saturation_filter(std::span<const double> v_perp, double clip = 0.05,
                                      double tau = 0.2, double dt = 0.1);

double grip_from_markers(double d, const GripperCalib& calib);

DemoDataset assemble_dataset(const RawSession& session, const Pose3& cross_node,
                             const GripperCalib& calib, const PipelineConfig& config = {});

/// Label t maps step t onto step t+1; returns steps.size() - 1 labels.
std::vector<Action> make_action_labels(const DemoDataset& dataset);

}  // namespace dex
