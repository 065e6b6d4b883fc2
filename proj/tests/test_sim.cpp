#include "doctest.h"
#include "test_util.hpp"

#include "dex/anchoring.hpp"
#include "dex/demo.hpp"
#include "dex/plant.hpp"
#include "dex/sim.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace dex;
using namespace dex::testing;

namespace {

PlantCommand forward(double v, double omega = 0.0, double v_lat = 0.0) {
  PlantCommand c;
  c.v = v;
  c.omega = omega;
  c.v_lat = v_lat;
  c.hand_target = PlantState{}.hand_rel;
  c.grip_target = 1.0;
  return c;
}

PlantState run_substeps(PlantState s, const PlantCommand& c, int n, const PlantConfig& cfg) {
  for (int i = 0; i < n; ++i) s = step_plant(s, c, cfg.substep, cfg);
  return s;
}

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("first-order lag over one control tick") {
  const PlantConfig cfg;
  const PlantState s = run_substeps(PlantState{}, forward(0.3), 10, cfg);
  CHECK(s.v == doctest::Approx(0.3 * (1.0 - std::exp(-2.0 / 3.0))).epsilon(1e-12));
  CHECK(s.v == doctest::Approx(0.1460).epsilon(1e-3));
  // A single 0.1 s step gives the same exact discretization.
  const PlantState one = step_plant(PlantState{}, forward(0.3), 0.1, cfg);
  CHECK(one.v == doctest::Approx(s.v).epsilon(1e-12));
}

TEST_CASE("distance travelled under the lag matches the closed-form integral") {
  PlantConfig cfg;
  cfg.v_max = 10.0;
  const double tau = cfg.tau_base, T = 0.7, c = 0.3;
  const PlantState s = run_substeps(PlantState{}, forward(c), 70, cfg);
  // x(T) = c (T - tau (1 - e^{-T/tau})) from rest.
  CHECK(s.base.x == doctest::Approx(c * (T - tau * (1.0 - std::exp(-T / tau)))).epsilon(1e-12));
  CHECK(std::abs(s.base.y) < 1e-15);
}

TEST_CASE("zero command from rest is a fixed point") {
  const PlantConfig cfg;
  PlantState s0;
  s0.base = Pose2(1.0, -2.0, 0.7);
  s0.hand_rel = Pose3(UnitQuat::rot_x(0.2), Vec3(0.4, 0.1, -0.2));
  s0.grip = 0.3;
  PlantCommand z;
  z.hand_target = s0.hand_rel;
  z.grip_target = s0.grip;
  const PlantState s = run_substeps(s0, z, 100, cfg);
  CHECK(s.base.x == s0.base.x);
  CHECK(s.base.y == s0.base.y);
  CHECK(s.base.theta == s0.base.theta);
  CHECK(s.v == 0.0);
  CHECK(pose_translation_error(s.hand_rel, s0.hand_rel) == 0.0);
  CHECK(s.grip == s0.grip);
}

TEST_CASE("kinematic limit: velocity equals the command after one substep") {
  const PlantConfig cfg = PlantConfig::kinematic();
  const PlantState s = step_plant(PlantState{}, forward(0.3, 0.2), cfg.substep, cfg);
  CHECK(s.v == 0.3);
  CHECK(s.omega == 0.2);
}

TEST_CASE("velocity limits and grip slew") {
  const PlantConfig cfg;
  PlantCommand c = forward(5.0, -9.0);
  c.grip_target = 0.0;
  const PlantState s = run_substeps(PlantState{}, c, 300, cfg);
  CHECK(s.v == doctest::Approx(cfg.v_max));
  CHECK(s.omega == doctest::Approx(-cfg.omega_max));
  const PlantState g = step_plant(PlantState{}, c, 0.1, cfg);
  CHECK(g.grip == doctest::Approx(1.0 - cfg.grip_rate * 0.1));
}

TEST_CASE("hand tracks its target with the arm lag and stays in the reach box") {
  const PlantConfig cfg;
  PlantState s;
  PlantCommand c = forward(0.0);
  c.hand_target = Pose3(UnitQuat::rot_z(0.5), Vec3(0.6, 0.0, -0.2));
  const PlantState one = step_plant(s, c, 0.08, cfg);
  const double a = 1.0 - std::exp(-1.0);
  CHECK(one.hand_rel.translation.x() == doctest::Approx(a * 0.6).epsilon(1e-12));
  c.hand_target = Pose3(UnitQuat::identity(), Vec3(3.0, -3.0, 3.0));
  const PlantState far = run_substeps(s, c, 200, cfg);
  CHECK(far.hand_rel.translation.x() == doctest::Approx(cfg.reach_max.x()));
  CHECK(far.hand_rel.translation.y() == doctest::Approx(cfg.reach_min.y()));
  CHECK(far.hand_rel.translation.z() == doctest::Approx(cfg.reach_max.z()));
}

TEST_CASE("lateral leakage per tick never exceeds clip times dt") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const PlantConfig cfg;
  PlantState s;
  s.v = 0.2;
  Plant plant(cfg, s);
  for (int tick = 1; tick <= 300; ++tick) {
    plant.schedule(forward(0.4 * u(rng), 1.0 * u(rng), 0.5 * u(rng)), plant.now() + 22000);
    plant.advance_to(tick * 100000);
  }
  CHECK(plant.max_lateral_step() <= cfg.lateral_clip * 0.1 + 1e-12);
  CHECK(plant.max_lateral_step() > 0.5 * cfg.lateral_clip * 0.1);
}

TEST_CASE("scheduled commands split substeps at their effect times") {
  PlantConfig cfg = PlantConfig::kinematic();
  Plant plant(cfg, PlantState{});
  plant.schedule(forward(0.3), 22000);
  plant.advance_to(100000);
  // Still for 22 ms, then 78 ms at 0.3 m/s.
  CHECK(plant.state().base.x == doctest::Approx(0.3 * 0.078).epsilon(1e-12));
  CHECK_THROWS_AS(plant.schedule(forward(0.1), 50000), Error);
  CHECK_THROWS_AS(plant.advance_to(0), Error);
}

TEST_CASE("zero-delay commands pass straight through") {
  Plant plant(PlantConfig::kinematic(), PlantState{});
  plant.schedule(forward(0.25), plant.now());
  plant.advance_to(100000);
  CHECK(plant.state().base.x == doctest::Approx(0.025).epsilon(1e-12));
}

TEST_CASE("plant configuration validation") {
  PlantConfig c;
  CHECK_NOTHROW(c.validate());
  c.substep = 0.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = PlantConfig{};
  c.reach_max = c.reach_min;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("scenario catalogue is reachable") {
  for (ScenarioId id : {ScenarioId::nav_reach, ScenarioId::nav_turn_place, ScenarioId::long_horizon,
                        ScenarioId::cruise}) {
    const SimScenario sc = make_scenario(id);
    CHECK_NOTHROW(sc.validate(PlantConfig{}));
    CHECK(scenario_from_string(to_string(id)) == id);
    CHECK(sc.time_limit > 0.0);
  }
  CHECK(make_scenario(ScenarioId::long_horizon).time_limit == 120.0);
  CHECK_THROWS_AS(scenario_from_string("kitchen"), Error);
}

TEST_CASE("an out-of-reach goal is rejected") {
  SimScenario sc = make_scenario(ScenarioId::nav_reach);
  sc.stages[1].point += Vec3(1.0, 0.0, 0.0);
  CHECK_THROWS_WITH_AS(sc.validate(PlantConfig{}), doctest::Contains("unreachable"), Error);
  CHECK_THROWS_AS(scripted_expert(sc, 1), Error);
}

TEST_CASE("start randomization stays inside the disc and heading band") {
  const SimScenario sc = make_scenario(ScenarioId::long_horizon);
  const EpisodeConfig cfg;
  for (int k = 0; k < 500; ++k) {
    const EpisodeDraw d = draw_episode(sc, cfg, trial_seed(3, k));
    CHECK(std::hypot(d.start.x - sc.start.x, d.start.y - sc.start.y) <= 0.10 + 1e-12);
    CHECK(std::abs(wrap_angle(d.start.theta - sc.start.theta)) <= 15.0 * kPi / 180.0 + 1e-12);
    CHECK(d.demo_speed >= cfg.demo_speed_lo);
    CHECK(d.demo_speed <= cfg.demo_speed_hi);
  }
}

TEST_CASE("tracker flags a grasp closed away from the object") {
  const SimScenario sc = make_scenario(ScenarioId::nav_reach);
  PlantState s;
  s.base = sc.stages[0].goal;
  s.hand_rel = sc.carry_hand;
  TaskTracker t(sc, TrackerConfig{}, s);
  t.update(s, 0.0);
  CHECK(t.status().stage == 1);
  s.grip = 0.1;
  t.update(s, 0.0);
  CHECK(t.status().failed);
  CHECK(t.status().failure == "missed grasp");
}

TEST_CASE("tracker completes a grasp at the object and flags slips while holding") {
  const SimScenario sc = make_scenario(ScenarioId::nav_reach);
  PlantState s;
  s.base = sc.stages[0].goal;
  s.hand_rel = Pose3(sc.carry_hand.rotation,
                     inverse(lift(s.base, sc.chest_height)).transform_point(sc.stages[1].point));
  TaskTracker t(sc, TrackerConfig{}, s);
  s.grip = 0.1;
  t.update(s, 0.0);
  CHECK(t.status().holding);
  CHECK(t.status().stage == 2);
  t.update(s, 3.5);
  CHECK(t.status().failure == "slip");
}

TEST_CASE("tracker flags the carry envelope only while moving") {
  const SimScenario sc = make_scenario(ScenarioId::nav_turn_place);
  PlantState s;
  s.grip = 0.0;
  s.hand_rel = Pose3(sc.carry_hand.rotation, sc.carry_hand.translation + Vec3(0.1, 0, 0));
  TaskTracker still(sc, TrackerConfig{}, s);
  still.update(s, 0.0);
  CHECK_FALSE(still.status().failed);
  s.v = 0.2;
  TaskTracker moving(sc, TrackerConfig{}, s);
  moving.update(s, 0.0);
  CHECK(moving.status().failure == "carry envelope");
}

TEST_CASE("expert plan respects its step limits") {
  const SimScenario sc = make_scenario(ScenarioId::long_horizon);
  ExpertConfig ec;
  ExpertPlanner ex(sc, ec, LabelFrame::relative, sc.chest_height);
  RobotState s;
  s.hand_rel = sc.carry_hand;
  s.grip = 1.0;
  const auto states = ex.plan_states(s, 0.0, 0.0, 0);
  REQUIRE(states.size() == 17);
  double v_prev = 0.0;
  for (std::size_t i = 1; i < states.size(); ++i) {
    const Pose2 d = between(states[i - 1].base, states[i].base);
    const double v = std::hypot(d.x, d.y) / 0.1;
    CHECK(v <= ec.v_cruise + 1e-9);
    CHECK(std::abs(v - v_prev) <= ec.accel * 0.1 + 1e-9);
    v_prev = v;
    CHECK((states[i].hand_rel.translation - states[i - 1].hand_rel.translation).norm() <= ec.hand_step + 1e-12);
  }
  CHECK(states.back().base.x > 0.1);
}

TEST_CASE("expert chunks are identical in both label frames up to the hand frame") {
  const SimScenario sc = make_scenario(ScenarioId::long_horizon);
  ExpertConfig ec;
  ec.bob_amplitude = 0.0;
  ExpertPlanner rel(sc, ec, LabelFrame::relative, 1.0), glob(sc, ec, LabelFrame::global, 1.0);
  Observation o;
  o.state.base = Pose2(0.5, 0.1, 0.2);
  o.state.hand_rel = sc.carry_hand;
  o.state.grip = 1.0;
  o.prev_action.base_delta = Pose2(0.02, 0.0, 0.0);
  Observation og = o;
  og.state = to_label_frame(o.state, LabelFrame::global, 1.0);
  const auto a = forward_rollout(o.state, rel.plan(o));
  const auto b = forward_rollout(og.state, glob.plan(og));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(dist_se2(a[i].base, b[i].base) < 1e-12);
    const RobotState bw = to_label_frame(a[i], LabelFrame::global, 1.0);
    CHECK(pose_translation_error(bw.hand_rel, b[i].hand_rel) < 1e-9);
  }
}

TEST_CASE("ideal case: zero latency expert succeeds without rollbacks") {
  EpisodeConfig cfg;
  cfg.executor.latency = LatencyConfig::zero();
  for (ScenarioId id : {ScenarioId::nav_reach, ScenarioId::nav_turn_place, ScenarioId::long_horizon}) {
    const SimScenario sc = make_scenario(id);
    const EpisodeResult r = run_expert_episode(sc, cfg, 11);
    CHECK(r.metrics.success);
    CHECK(r.metrics.rollbacks == 0);
    CHECK(r.metrics.completion_time < sc.time_limit);
  }
}

TEST_CASE("latency: matching off rolls back at every splice, matching on never does") {
  const SimScenario sc = make_scenario(ScenarioId::cruise);
  EpisodeConfig cfg;
  cfg.locomotion_variation = false;
  for (int k = 0; k < 5; ++k) {
    cfg.executor.matching = true;
    const EpisodeResult on = run_expert_episode(sc, cfg, trial_seed(2, k));
    cfg.executor.matching = false;
    const EpisodeResult off = run_expert_episode(sc, cfg, trial_seed(2, k));
    CHECK(on.metrics.rollbacks == 0);
    REQUIRE(off.metrics.splices > 0);
    CHECK(off.metrics.rollbacks >= off.metrics.splices);
    CHECK(count_rollbacks(off.log) == off.metrics.rollbacks);
  }
}

TEST_CASE("episode timestamps obey the latency triple") {
  const SimScenario sc = make_scenario(ScenarioId::long_horizon);
  EpisodeConfig cfg;
  const EpisodeResult r = run_expert_episode(sc, cfg, 4);
  for (const auto& e : r.log.events) {
    if (const auto* q = std::get_if<PlanRequestEvent>(&e.payload)) {
      CHECK(q->arrival_us - q->request_us == 87000);
      CHECK(q->request_us - q->obs_us == 33000);
    }
    if (const auto* c = std::get_if<CommandEvent>(&e.payload)) CHECK(c->effect_us - c->issue_us == 22000);
  }
  CHECK(count_rollbacks(r.log) == r.metrics.rollbacks);
}

TEST_CASE("episodes are deterministic per seed") {
  const SimScenario sc = make_scenario(ScenarioId::long_horizon);
  EpisodeConfig cfg;
  cfg.executor.matching = false;
  const EpisodeResult a = run_expert_episode(sc, cfg, 21), b = run_expert_episode(sc, cfg, 21);
  CHECK(metrics_csv({a.metrics}) == metrics_csv({b.metrics}));
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t k = 0; k < a.trace.size(); ++k) {
    CHECK(a.trace[k].base.x == b.trace[k].base.x);
    CHECK(a.trace[k].hand_rel.translation.x() == b.trace[k].hand_rel.translation.x());
  }
}

TEST_CASE("a policy failure becomes a failed episode") {
  struct Broken : ChunkPolicy {
    std::vector<Action> plan(const Observation&) override { throw Error("model file corrupt"); }
  } broken;
  const SimScenario sc = make_scenario(ScenarioId::nav_reach);
  const EpisodeResult r = run_episode(broken, sc, EpisodeConfig{}, 1);
  CHECK_FALSE(r.metrics.success);
  CHECK(r.metrics.failure.find("model file corrupt") != std::string::npos);
}

TEST_CASE("single-trial comparison gives one row per condition") {
  const SimScenario sc = make_scenario(ScenarioId::nav_reach);
  const ComparisonResult r = compare_conditions(sc, EpisodeConfig{}, {{LabelFrame::relative, true}}, 1, 5);
  CHECK(r.episodes.size() == 1);
  CHECK(r.summaries.size() == 1);
  const std::string csv = metrics_csv(r.episodes);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK_THROWS_AS(compare_conditions(sc, EpisodeConfig{}, {{}}, 0, 5), Error);
}

TEST_CASE("noiseless scripted demonstration round-trips through anchoring and the pipeline") {
  for (ScenarioId id : {ScenarioId::nav_reach, ScenarioId::long_horizon}) {
    const SimScenario sc = make_scenario(id);
    const ExpertDemo d = scripted_expert(sc, 3);
    const AnchorResult a = compute_anchor(d.session.chest, d.session.hand, d.session.chest_ext,
                                          d.session.hand_ext, d.session.detections, 0.01);
    CHECK(pose_translation_error(a.chest_world_from_hand_world, d.truth.cross) < 1e-9);
    PipelineConfig pc;
    pc.smoothing = false;
    const DemoDataset ds = assemble_dataset(d.session, a.chest_world_from_hand_world, GripperCalib{}, pc);
    REQUIRE(ds.steps.size() == d.truth.labels.size());
    for (std::size_t k = 0; k < ds.steps.size(); ++k) {
      const DemoStep& x = ds.steps[k];
      const DemoStep& y = d.truth.labels[k];
      CHECK(dist_se2(x.base, y.base) < 1e-6);
      CHECK(pose_translation_error(x.hand_rel, y.hand_rel) < 1e-6);
      CHECK(pose_rotation_error(x.hand_rel, y.hand_rel) < 1e-6);
      CHECK(std::abs(x.grip - y.grip) < 1e-6);
    }
  }
}

TEST_CASE("scripted demonstrations satisfy the lateral-velocity protocol") {
  for (int seed = 0; seed < 5; ++seed) {
    const ExpertDemo d = scripted_expert(make_scenario(ScenarioId::long_horizon), seed);
    const DemoDataset ds = assemble_dataset(d.session, d.truth.cross, GripperCalib{});
    std::vector<Pose2> bases;
    for (const DemoStep& s : ds.steps) bases.push_back(s.base);
    const NonholonomicProjection p = project_nonholonomic(bases, 0.1);
    CHECK(lateral_quantile(p.lateral, 0.99) < 0.03);
  }
}

TEST_CASE("scripted demonstrations are deterministic per seed") {
  DemoOptions o;
  o.vio_pos_noise = 0.002;
  o.detection_pos_noise = 0.005;
  const SimScenario sc = make_scenario(ScenarioId::nav_reach);
  const ExpertDemo a = scripted_expert(sc, 8, o), b = scripted_expert(sc, 8, o);
  REQUIRE(a.session.chest.samples.size() == b.session.chest.samples.size());
  for (std::size_t k = 0; k < a.session.chest.samples.size(); ++k) {
    CHECK(a.session.chest.samples[k].pose.translation == b.session.chest.samples[k].pose.translation);
  }
  CHECK(a.session.detections.size() == b.session.detections.size());
  const ExpertDemo c = scripted_expert(sc, 9, o);
  CHECK(c.session.chest.samples[5].pose.translation != a.session.chest.samples[5].pose.translation);
}

TEST_CASE("global-frame gait bob appears only in world-frame labels") {
  const SimScenario sc = make_scenario(ScenarioId::long_horizon);
  ExpertConfig ec;
  ExpertPlanner glob(sc, ec, LabelFrame::global, 1.0);
  Observation o;
  o.state.hand_rel = sc.carry_hand;
  o.state.grip = 1.0;
  o.prev_action.base_delta = Pose2(0.03, 0.0, 0.0);
  o.stage = 0;
  const Observation og{0, to_label_frame(o.state, LabelFrame::global, 1.0), o.prev_action, 0, {}};
  const auto states = forward_rollout(og.state, glob.plan(og));
  double zmin = 1e9, zmax = -1e9;
  for (const auto& s : states) {
    zmin = std::min(zmin, s.hand_rel.translation.z());
    zmax = std::max(zmax, s.hand_rel.translation.z());
  }
  CHECK(zmax - zmin > 0.01);
  CHECK(zmax - zmin <= 2 * ec.bob_amplitude + 1e-9);
}

}  // TEST_SUITE
