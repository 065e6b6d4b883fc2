#pragma once

// Staged geometric tasks, a scripted closed-loop expert, and the episode
// loop that runs a chunk policy through the executor on the simulated plant.

#include "dex/executor.hpp"
#include "dex/plant.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dex {

enum class ScenarioId { nav_reach, nav_turn_place, long_horizon, cruise };

std::string to_string(ScenarioId id);
ScenarioId scenario_from_string(const std::string& s);

enum class StageKind { navigate, grasp, retract, place, cruise };

std::string to_string(StageKind k);

struct Stage {
  StageKind kind = StageKind::navigate;
  Pose2 goal;                       // navigate: base goal
  Vec3 point = Vec3::Zero();        // grasp/place: world point of the hand
  double pos_tol = 0.05;            // m
  double heading_tol = 0.10;        // rad
  double distance = 0.0;            // cruise: distance to cover, m
};

struct SimScenario {
  ScenarioId id = ScenarioId::long_horizon;
  std::vector<Stage> stages;
  Pose2 start;
  double start_radius = 0.10;         // m
  double start_heading = 15.0 * kPi / 180.0;  // rad, half-width
  double time_limit = 120.0;          // s
  double chest_height = 1.0;          // m
  double initial_speed = 0.0;         // m/s, cruise only
  bool start_holding = false;
  Pose3 carry_hand;                   // chest-relative carry pose
  Pose3 grasp_rotation_hand;          // chest-relative orientation used at grasp/place

  /// Throws Error when a goal cannot be reached (hand point outside the
  /// reach box from the stage's base goal, or no stages).
  void validate(const PlantConfig& plant) const;
  int stage_count() const { return static_cast<int>(stages.size()); }
};

SimScenario make_scenario(ScenarioId id);

/// Low-dimensional observation features: the active stage's base goal in the
/// base frame (x, y, sin, cos), its hand point in the level chest frame
/// (3), and the stage progress fraction. Zeros where a field does not apply.
inline constexpr int kScenarioFeatureDim = 8;
Eigen::VectorXd scenario_features(const SimScenario& sc, int stage, const RobotState& robot);

struct TrackerConfig {
  double grasp_tol = 0.02;        // m, hand to object when the grip closes
  double place_tol = 0.03;        // m, hand to place point when the grip opens
  double closed_below = 0.2;
  double open_above = 0.8;
  double retract_tol = 0.02;      // m
  double stop_speed = 0.05;       // m/s, "stopped" for navigation goals
  double slip_accel = 3.0;        // m/s^2 while holding
  double envelope_tol = 0.06;     // m, carry pose deviation while moving
  double moving_speed = 0.05;     // m/s
};

struct TaskStatus {
  int stage = 0;
  bool holding = false;
  bool done = false;
  bool failed = false;
  std::string failure;  // missed grasp | drop | slip | carry envelope | timeout | policy: ...
  double done_time = 0.0;
  double cruise_origin_x = 0.0;
};

/// Advances stages from plant measurements and flags task failures.
class TaskTracker {
 public:
  TaskTracker(const SimScenario& sc, TrackerConfig cfg, const PlantState& initial);
  /// peak_accel is the largest |forward acceleration| since the last update.
  void update(const PlantState& s, double peak_accel);
  const TaskStatus& status() const { return st_; }
  bool finished() const { return st_.done || st_.failed; }
  void fail(const std::string& reason);

 private:
  const SimScenario& sc_;
  TrackerConfig cfg_;
  TaskStatus st_;
  Pose2 cruise_start_;
};

struct ExpertConfig {
  double v_cruise = 0.3;        // m/s, demonstration speed
  double accel = 0.5;           // m/s^2
  double omega_max = 0.6;       // rad/s
  double alpha = 1.5;           // rad/s^2
  double approach_gain = 1.0;   // 1/s, speed per metre of remaining distance near a goal
  double turn_in_place = 0.35;  // rad, bearing beyond which the base turns first
  double hand_step = 0.015;     // m per step
  double hand_rot_step = 0.1;   // rad per step
  double grip_close_dist = 0.005;  // m
  double bob_amplitude = 0.015;  // m, vertical gait oscillation in world-frame labels
  double stride = 0.6;           // m per gait cycle
  int horizon = 16;
  double dt = 0.1;
};

/// Scripted closed-loop planner: a stage machine run forward over the
/// horizon from the observed state.
class ExpertPlanner : public ChunkPolicy {
 public:
  ExpertPlanner(const SimScenario& sc, ExpertConfig cfg, LabelFrame frame, double chest_height);
  std::vector<Action> plan(const Observation& obs) override;

  /// The chest-relative plan (T_p + 1 states), before label conversion.
  std::vector<RobotState> plan_states(const RobotState& rel_state, double v0, double w0, int stage) const;

 private:
  const SimScenario& sc_;
  ExpertConfig cfg_;
  LabelFrame frame_;
  double h_;
};

struct EpisodeConfig {
  PlantConfig plant;
  ExecutorConfig executor;
  TrackerConfig tracker;
  ExpertConfig expert;
  /// Demonstration cruise speed drawn per episode from [lo, hi].
  bool locomotion_variation = true;
  double demo_speed_lo = 0.2;
  double demo_speed_hi = 0.5;
  /// Slip threshold drawn per episode from [lo, hi] (m/s^2).
  double slip_lo = 2.5;
  double slip_hi = 5.0;
  bool randomize_start = true;
};

/// Per-episode random draws, each from its own named stream of the seed.
struct EpisodeDraw {
  Pose2 start;
  double demo_speed = 0.3;
  double slip_accel = 3.0;
};

EpisodeDraw draw_episode(const SimScenario& sc, const EpisodeConfig& cfg, std::uint64_t seed);

struct EpisodeMetrics {
  std::uint64_t seed = 0;
  std::string scenario;
  std::string frame;
  bool matching = true;
  double latency_ms = 0.0;
  bool success = false;
  std::string failure;
  double completion_time = 0.0;  // s; time limit on failure
  int stages_done = 0;
  int splices = 0;
  int rollbacks = 0;
  int jitter = 0;
  double i_star_mean = 0.0;
  double i_star_std = 0.0;
  std::vector<int> i_stars;
  double tracking_rms = 0.0;  // m, base vs. the previous tick's target waypoint
  double demo_speed = 0.0;
  double peak_accel = 0.0;
};

struct EpisodeResult {
  EpisodeMetrics metrics;
  EpisodeLog log;
  std::vector<PlantState> trace;  // plant state at every tick
};

/// Runs one episode of the given policy. The policy must plan in
/// cfg.executor.frame.
EpisodeResult run_episode(ChunkPolicy& policy, const SimScenario& sc, const EpisodeConfig& cfg,
                          std::uint64_t seed);

/// Runs the scripted expert with the per-episode demonstration speed.
EpisodeResult run_expert_episode(const SimScenario& sc, const EpisodeConfig& cfg, std::uint64_t seed);

struct Condition {
  LabelFrame frame = LabelFrame::relative;
  bool matching = true;
};

struct ConditionSummary {
  Condition condition;
  int trials = 0;
  double success_rate = 0.0;
  double mean_time = 0.0;  // over successful episodes
  double rollbacks_mean = 0.0;
  double jitter_mean = 0.0;
  double i_star_mean = 0.0;
  double i_star_std = 0.0;
  std::map<std::string, int> failures;
};

/// Per-trial seed shared across conditions.
std::uint64_t trial_seed(std::uint64_t master, int trial);

struct ComparisonResult {
  std::vector<EpisodeMetrics> episodes;
  std::vector<ConditionSummary> summaries;
};

/// Runs the scripted expert under every condition with shared trial seeds.
ComparisonResult compare_conditions(const SimScenario& sc, const EpisodeConfig& base,
                                    const std::vector<Condition>& conditions, int n_trials,
                                    std::uint64_t master_seed);

/// Builds a fresh policy for one episode; cfg already carries the condition.
using PolicyFactory =
    std::function<std::unique_ptr<ChunkPolicy>(const EpisodeConfig& cfg, std::uint64_t seed)>;

/// Same, with policies from the factory (the expert when it is empty).
ComparisonResult compare_conditions(const SimScenario& sc, const EpisodeConfig& base,
                                    const std::vector<Condition>& conditions, int n_trials,
                                    std::uint64_t master_seed, const PolicyFactory& factory);

ConditionSummary summarize(const Condition& c, const std::vector<EpisodeMetrics>& episodes);

/// One CSV row per episode with a header line; i_stars is space-separated.
std::string metrics_csv(const std::vector<EpisodeMetrics>& episodes);

}  // namespace dex
