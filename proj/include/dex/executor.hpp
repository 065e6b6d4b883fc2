#pragma once

// Asynchronous receding-horizon dispatch of action chunks with
// spatial-temporal state matching.
//
// Tick contract (virtual clock, integer microseconds, tick n at n * dt):
//   1. the plant is advanced to t_n and the stop hook is consulted;
//   2. if no plan is in flight and a capture is due, the plant state at t_n is
//      captured, the request is issued at t_n + in_us and the plan arrives at
//      request + net_us (+ optional jitter);
//   3. a plan whose arrival time is <= t_n replaces the active chunk, matched
//      against a fresh state read at t_n (or started at index 0 when matching
//      is off);
//   4. one command is dispatched toward the next waypoint and takes effect
//      at t_n + exe_us.

#include "dex/action.hpp"
#include "dex/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace dex {

using Micros = std::int64_t;

struct MatchWeights {
  double w_b = 1.0;
  double w_t = 1.0;
  double w_r = 0.2;
  double w_g = 0.1;
  double fold_radius = kDefaultFoldRadius;

  void validate() const;
  /// All four weights times c > 0.
  MatchWeights scaled(double c) const;
};

/// Which frame the hand part of states and actions lives in. Relative is the
/// chest frame; global is the world frame with the chest at a fixed height.
enum class LabelFrame { relative, global };
std::string to_string(LabelFrame f);
LabelFrame label_frame_from_string(const std::string& s);

/// states[0] = s0 and states[i+1] = apply_action(states[i], chunk[i]); no
/// inertia, lag or limits.
std::vector<RobotState> forward_rollout(const RobotState& s0, const std::vector<Action>& chunk);

struct ChunkPlan {
  std::uint64_t id = 0;
  Micros t0_obs = 0;
  std::vector<Action> chunk;     // T_p actions
  std::vector<RobotState> states;  // T_p + 1 rolled-out states

  static ChunkPlan make(std::uint64_t id, Micros t0_obs, const RobotState& s0,
                        std::vector<Action> chunk);
  int horizon() const { return static_cast<int>(chunk.size()); }
  /// Matching candidates: the first T_p states (state i precedes action i).
  std::vector<RobotState> rollout() const {
    return {states.begin(), states.begin() + horizon()};
  }
  /// Where executing waypoint i should leave the robot.
  const RobotState& target(int i) const { return states[static_cast<std::size_t>(i) + 1]; }
};

struct MatchTerms {
  double base = 0.0;
  double translation = 0.0;
  double rotation = 0.0;
  double grip = 0.0;
  double total() const { return base + translation + rotation + grip; }
};

struct SpliceReport {
  int i_star = 0;
  int discarded = 0;
  MatchTerms terms;       // weighted terms at i_star
  std::int64_t match_ns = 0;  // wall time of the match; 0 in virtual-time mode
};

/// argmin_i of w_b dist_se2^2 + w_t |dp|^2 + w_r geodesic^2 + w_g dgrip^2;
/// ties (costs within a relative 1e-9) go to the smaller index.
SpliceReport state_match(const std::vector<RobotState>& rollout, const RobotState& now,
                         const MatchWeights& w);

struct SplicedChunk {
  int first = 0;      // first waypoint to execute
  int remaining = 0;  // waypoints first..T_p-1
  bool replan = false;
};

/// Waypoints i >= i_star remain; i_star = T_p - 1 also raises the replan flag.
SplicedChunk splice(const ChunkPlan& plan, int i_star);

struct LatencyConfig {
  Micros in_us = 33000;
  Micros net_us = 87000;
  Micros exe_us = 22000;
  /// Standard deviation of Gaussian jitter added to the network delay.
  double net_jitter_us = 0.0;

  Micros total() const { return in_us + net_us + exe_us; }
  /// The default triple scaled so the total equals total_ms.
  static LatencyConfig scaled_total(double total_ms);
  static LatencyConfig zero() { return {0, 0, 0, 0.0}; }
};

struct ExecutorConfig {
  int horizon = 16;        // T_p
  int action_horizon = 8;  // T_a
  Micros dt_us = 100000;
  bool matching = true;
  MatchWeights weights;
  LatencyConfig latency;
  LabelFrame frame = LabelFrame::relative;
  double chest_height = 1.0;  // used to express the hand in the world frame
  /// Install the first plan synchronously at tick 0.
  bool warm_start = false;
  int max_ticks = 1200;
  std::uint64_t seed = 0;
  double rollback_threshold = 0.005;  // m along the current heading
  int jitter_window_ticks = 5;

  void validate() const;
  double dt() const { return static_cast<double>(dt_us) * 1e-6; }
};

struct Observation {
  Micros t_us = 0;
  RobotState state;  // in the executor's label frame
  Action prev_action;
  int stage = 0;
  Eigen::VectorXd features;
};

class ChunkPolicy {
 public:
  virtual ~ChunkPolicy() = default;
  /// Returns exactly T_p actions in the executor's label frame.
  virtual std::vector<Action> plan(const Observation& obs) = 0;
};

struct PlantCommand {
  double v = 0.0;
  double omega = 0.0;
  double v_lat = 0.0;
  Pose3 hand_target;  // chest-relative
  double grip_target = 0.0;
};

class ExecutorPlant {
 public:
  virtual ~ExecutorPlant() = default;
  virtual Micros now() const = 0;
  /// Integrates up to t, applying scheduled commands at their effect times.
  virtual void advance_to(Micros t) = 0;
  /// One atomic read of base, hand and grip (chest-relative hand).
  virtual RobotState read() const = 0;
  virtual void schedule(const PlantCommand& cmd, Micros effect_time) = 0;
};

// Log events. Payload fields are plain values so logs serialize exactly.
struct CommandEvent {
  std::uint64_t chunk = 0;  // 0 when no chunk is active
  int index = -1;           // waypoint index, -1 while holding
  Micros issue_us = 0;
  Micros effect_us = 0;
  PlantCommand command;
  Pose2 target_base;
  double along_track = 0.0;  // target displacement on the current heading, m
  bool chunk_forward = false;
  bool rollback = false;
};

struct SpliceEvent {
  std::uint64_t chunk = 0;
  bool matching = true;
  SpliceReport report;
  int remaining = 0;
  bool replan = false;
};

struct PlanRequestEvent {
  std::uint64_t chunk = 0;
  Micros obs_us = 0;
  Micros request_us = 0;
  Micros arrival_us = 0;
};

struct PlanArrivalEvent {
  std::uint64_t chunk = 0;
  Micros request_us = 0;
  Micros arrival_us = 0;
  bool warm_start = false;
};

struct LogEvent {
  std::int64_t tick = 0;
  Micros t_us = 0;
  std::variant<CommandEvent, SpliceEvent, PlanRequestEvent, PlanArrivalEvent> payload;

  std::string kind() const;
};

struct EpisodeLog {
  std::vector<LogEvent> events;
};

struct ExecutorSummary {
  int ticks = 0;
  int splices = 0;
  int rollbacks = 0;
  int jitter = 0;
  std::vector<int> i_stars;
  bool stopped = false;  // the stop hook ended the run
  std::string fault;     // non-empty after a policy failure
};

struct ExecutorHooks {
  /// Called after the plant reaches each tick; returning true ends the run.
  std::function<bool(std::int64_t tick, Micros t)> stop;
  /// Builds the planner observation from a captured state (stage, features).
  std::function<Observation(const RobotState& frame_state, Micros t)> observe;
};

/// Expresses a chest-relative robot state in the label frame.
RobotState to_label_frame(const RobotState& robot, LabelFrame frame, double chest_height);
/// Chest-relative hand command for a target hand pose in the label frame.
Pose3 hand_command(const RobotState& robot, const Pose3& target_hand, LabelFrame frame,
                   double chest_height);

/// Deterministic virtual-time run. A throwing policy ends the run with a
/// controlled stop (zero base command) and a recorded fault.
ExecutorSummary run_executor(ChunkPolicy& policy, ExecutorPlant& plant, const ExecutorConfig& cfg,
                             EpisodeLog& log, const ExecutorHooks& hooks = {});

/// Wall-clock run: the planner runs on a background thread and waits out the
/// configured latency scaled by time_scale; the dispatcher ticks every
/// dt * time_scale. Obeys the same ordering contract as run_executor.
ExecutorSummary run_executor_realtime(ChunkPolicy& policy, ExecutorPlant& plant,
                                      const ExecutorConfig& cfg, EpisodeLog& log,
                                      double time_scale, const ExecutorHooks& hooks = {});

/// Rollbacks recomputed from logged command payloads.
int count_rollbacks(const EpisodeLog& log, double threshold = 0.005);
/// Forward-velocity sign reversals (|v| > dead_band, m/s) from the last
/// command before each splice through window_ticks commands after it.
int count_splice_jitter(const EpisodeLog& log, int window_ticks = 5, double dead_band = 0.01);

}  // namespace dex
