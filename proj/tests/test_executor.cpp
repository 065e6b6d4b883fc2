#include "doctest.h"
#include "test_util.hpp"

#include "dex/executor.hpp"
#include "dex/plant.hpp"

#include <algorithm>
#include <map>
#include <random>

using namespace dex;
using namespace dex::testing;

namespace {

// Straight-line cruise at a fixed per-step advance, expressed from the
// observation-time state.
class CruisePolicy : public ChunkPolicy {
 public:
  explicit CruisePolicy(double step, int horizon = 16) : step_(step), horizon_(horizon) {}
  std::vector<Action> plan(const Observation& obs) override {
    ++calls;
    Action a;
    a.base_delta = Pose2(step_, 0.0, 0.0);
    a.grip = obs.state.grip;
    return std::vector<Action>(static_cast<std::size_t>(horizon_), a);
  }
  int calls = 0;

 private:
  double step_;
  int horizon_;
};

class FailingPolicy : public ChunkPolicy {
 public:
  explicit FailingPolicy(int ok_calls) : ok_(ok_calls) {}
  std::vector<Action> plan(const Observation& obs) override {
    if (ok_-- <= 0) throw Error("inference backend unavailable");
    return CruisePolicy(0.03).plan(obs);
  }

 private:
  int ok_;
};

RobotState cruise_state() {
  RobotState s;
  s.hand_rel = Pose3(UnitQuat::rot_y(0.3), Vec3(0.4, 0.0, -0.3));
  s.grip = 1.0;
  return s;
}

Plant kinematic_plant(double v0 = 0.3) {
  PlantState s;
  s.hand_rel = cruise_state().hand_rel;
  s.v = v0;
  return Plant(PlantConfig::kinematic(), s);
}

ExecutorConfig cruise_config(bool matching, double latency_ms = 142.0) {
  ExecutorConfig c;
  c.matching = matching;
  c.latency = LatencyConfig::scaled_total(latency_ms);
  c.warm_start = true;
  c.max_ticks = 120;
  return c;
}

struct Run {
  ExecutorSummary summary;
  EpisodeLog log;
};

Run run_cruise(bool matching, double latency_ms = 142.0, bool warm = true) {
  CruisePolicy policy(0.03);
  Plant plant = kinematic_plant();
  ExecutorConfig cfg = cruise_config(matching, latency_ms);
  cfg.warm_start = warm;
  Run r;
  r.summary = run_executor(policy, plant, cfg, r.log);
  return r;
}

std::vector<const CommandEvent*> commands(const EpisodeLog& log) {
  std::vector<const CommandEvent*> out;
  for (const auto& e : log.events) {
    if (const auto* c = std::get_if<CommandEvent>(&e.payload)) out.push_back(c);
  }
  return out;
}

// Discrepancy oracle built on rotation matrices rather than quaternions.
double oracle_cost(const RobotState& a, const RobotState& b, const MatchWeights& w) {
  const double dx = a.base.x - b.base.x, dy = a.base.y - b.base.y;
  double dh = std::fmod(a.base.theta - b.base.theta, 2 * kPi);
  if (dh > kPi) dh -= 2 * kPi;
  if (dh < -kPi) dh += 2 * kPi;
  dh *= w.fold_radius;
  const double ang = matrix_angle(a.hand_rel.rotation.matrix().transpose() * b.hand_rel.rotation.matrix());
  const double dg = a.grip - b.grip;
  return w.w_b * (dx * dx + dy * dy + dh * dh) +
         w.w_t * (a.hand_rel.translation - b.hand_rel.translation).squaredNorm() + w.w_r * ang * ang +
         w.w_g * dg * dg;
}

RobotState random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RobotState s;
  s.base = Pose2(u(rng), u(rng), kPi * u(rng));
  s.hand_rel = random_pose(rng, 0.5);
  s.grip = 0.5 + 0.5 * u(rng);
  return s;
}

}  // namespace

TEST_SUITE("executor") {

TEST_CASE("forward rollout of simple chunks") {
  const RobotState s0 = cruise_state();
  SUBCASE("all-zero chunk stays at the initial state") {
    Action z;
    z.grip = s0.grip;
    const auto r = forward_rollout(s0, std::vector<Action>(16, z));
    REQUIRE(r.size() == 17);
    for (const auto& s : r) {
      CHECK(s.base.x == 0.0);
      CHECK(pose_translation_error(s.hand_rel, s0.hand_rel) == 0.0);
      CHECK(s.grip == s0.grip);
    }
  }
  SUBCASE("constant forward step integrates to a straight line") {
    Action a;
    a.base_delta = Pose2(0.03, 0.0, 0.0);
    const auto r = forward_rollout(s0, std::vector<Action>(16, a));
    for (int i = 0; i <= 16; ++i) {
      CHECK(r[i].base.x == doctest::Approx(0.03 * i).epsilon(1e-12));
      CHECK(std::abs(r[i].base.y) < 1e-15);
    }
  }
  SUBCASE("pure rotation spins in place") {
    Action a;
    a.base_delta = Pose2(0.0, 0.0, 0.1);
    const auto r = forward_rollout(s0, std::vector<Action>(16, a));
    for (int i = 0; i <= 16; ++i) {
      CHECK(r[i].base.x == 0.0);
      CHECK(r[i].base.y == 0.0);
      CHECK(r[i].base.theta == doctest::Approx(wrap_angle(0.1 * i)));
    }
  }
  SUBCASE("arc rollout matches the closed-form circle") {
    Action a;
    a.base_delta = Pose2(0.02, 0.0, 0.05);
    const auto r = forward_rollout(s0, std::vector<Action>(16, a));
    // Chord steps of length 0.02 turning 0.05 after each: vertices of a
    // regular polygon; the k-th vertex is sum_j 0.02 (cos 0.05 j, sin 0.05 j).
    double x = 0, y = 0;
    for (int i = 0; i < 16; ++i) {
      x += 0.02 * std::cos(0.05 * i);
      y += 0.02 * std::sin(0.05 * i);
      CHECK(r[i + 1].base.x == doctest::Approx(x).epsilon(1e-12));
      CHECK(r[i + 1].base.y == doctest::Approx(y).epsilon(1e-12));
    }
  }
}

TEST_CASE("chunk plan rollout and targets") {
  Action a;
  a.base_delta = Pose2(0.03, 0.0, 0.0);
  const ChunkPlan p = ChunkPlan::make(4, 1000, cruise_state(), std::vector<Action>(16, a));
  CHECK(p.horizon() == 16);
  CHECK(p.rollout().size() == 16);
  CHECK(p.target(0).base.x == doctest::Approx(0.03));
  CHECK(p.states.front().base.x == 0.0);
  CHECK_THROWS_AS(ChunkPlan::make(1, 0, cruise_state(), {}), Error);
}

TEST_CASE("state matching picks the nearest rolled-out state") {
  Action a;
  a.base_delta = Pose2(0.03, 0.0, 0.0);
  a.grip = cruise_state().grip;
  const auto states = forward_rollout(cruise_state(), std::vector<Action>(16, a));
  const std::vector<RobotState> rollout(states.begin(), states.end() - 1);
  const MatchWeights w;

  SUBCASE("exact hit") {
    for (int j : {0, 5, 15}) {
      const SpliceReport r = state_match(rollout, rollout[j], w);
      CHECK(r.i_star == j);
      CHECK(r.discarded == j);
      CHECK(r.terms.total() == 0.0);
    }
  }
  SUBCASE("straight line at x = 0.095") {
    RobotState now = cruise_state();
    now.base = Pose2(0.095, 0.0, 0.0);
    const SpliceReport r = state_match(rollout, now, w);
    CHECK(r.i_star == 3);
    CHECK(r.terms.base == doctest::Approx(0.005 * 0.005));
  }
  SUBCASE("ties go to the smaller index") {
    std::vector<RobotState> two(2, cruise_state());
    two[1].base = Pose2(2.0, 0.0, 0.0);
    RobotState now = cruise_state();
    now.base = Pose2(1.0, 0.0, 0.0);
    CHECK(state_match(two, now, w).i_star == 0);
  }
  CHECK_THROWS_AS(state_match({}, cruise_state(), w), Error);
}

TEST_CASE("state matching agrees with a matrix-based oracle") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uw(0.0, 2.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<RobotState> rollout;
    for (int i = 0; i < 16; ++i) rollout.push_back(random_state(rng));
    const RobotState now = random_state(rng);
    MatchWeights w{uw(rng), uw(rng), uw(rng), uw(rng), uw(rng)};
    int best = 0;
    double best_cost = oracle_cost(rollout[0], now, w);
    for (int i = 1; i < 16; ++i) {
      const double c = oracle_cost(rollout[i], now, w);
      if (c < best_cost) {
        best_cost = c;
        best = i;
      }
    }
    const SpliceReport r = state_match(rollout, now, w);
    CHECK(r.i_star == best);
    CHECK(r.terms.total() == doctest::Approx(best_cost).epsilon(1e-9));
  }
}

TEST_CASE("scaling every weight by one constant leaves the argmin unchanged") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> uc(-3.0, 3.0);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<RobotState> rollout;
    for (int i = 0; i < 16; ++i) rollout.push_back(random_state(rng));
    const RobotState now = random_state(rng);
    const MatchWeights w;
    const double c = std::pow(10.0, uc(rng));
    CHECK(state_match(rollout, now, w).i_star == state_match(rollout, now, w.scaled(c)).i_star);
  }
}

TEST_CASE("match weight validation") {
  CHECK_NOTHROW(MatchWeights{}.validate());
  CHECK_THROWS_AS((MatchWeights{0, 0, 0, 0, 0.5}.validate()), Error);
  CHECK_THROWS_AS((MatchWeights{-1, 1, 1, 1, 0.5}.validate()), Error);
  CHECK_THROWS_AS(MatchWeights{}.scaled(0.0), Error);
}

TEST_CASE("splice boundaries") {
  Action a;
  a.base_delta = Pose2(0.03, 0.0, 0.0);
  const ChunkPlan p = ChunkPlan::make(1, 0, cruise_state(), std::vector<Action>(16, a));
  CHECK(splice(p, 0).remaining == 16);
  CHECK_FALSE(splice(p, 0).replan);
  CHECK(splice(p, 3).remaining == 13);
  CHECK(splice(p, 3).first == 3);
  CHECK(splice(p, 15).remaining == 1);
  CHECK(splice(p, 15).replan);
  CHECK_THROWS_AS(splice(p, 16), Error);
  CHECK_THROWS_AS(splice(p, -1), Error);
}

TEST_CASE("latency configuration") {
  const LatencyConfig d;
  CHECK(d.total() == 142000);
  const LatencyConfig s = LatencyConfig::scaled_total(142.0);
  CHECK(s.in_us == d.in_us);
  CHECK(s.net_us == d.net_us);
  CHECK(s.exe_us == d.exe_us);
  CHECK(LatencyConfig::scaled_total(0.0).total() == 0);
  CHECK(LatencyConfig::scaled_total(200.0).total() == 200000);
  CHECK_THROWS_AS(LatencyConfig::scaled_total(-1.0), Error);
  // Base displacement at 0.3 m/s over the default delay.
  CHECK(0.3 * d.total() * 1e-6 == doctest::Approx(0.0426));
}

TEST_CASE("label frames") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    RobotState r = random_state(rng);
    const RobotState g = to_label_frame(r, LabelFrame::global, 1.1);
    const Mat4 oracle = lift(r.base, 1.1).matrix() * r.hand_rel.matrix();
    CHECK(max_abs(g.hand_rel.matrix() - oracle) < 1e-12);
    const Pose3 back = hand_command(r, g.hand_rel, LabelFrame::global, 1.1);
    CHECK(pose_translation_error(back, r.hand_rel) < 1e-12);
    CHECK(pose_rotation_error(back, r.hand_rel) < 1e-7);
    CHECK(max_abs(hand_command(r, r.hand_rel, LabelFrame::relative, 1.1).matrix() - r.hand_rel.matrix()) ==
          0.0);
  }
  CHECK(label_frame_from_string("global") == LabelFrame::global);
  CHECK(to_string(LabelFrame::relative) == "relative");
  CHECK_THROWS_AS(label_frame_from_string("world"), Error);
}

TEST_CASE("kinematic plant at 142 ms and 0.3 m/s splices at index 2") {
  const Run r = run_cruise(true);
  REQUIRE(r.summary.splices >= 10);
  for (int i : r.summary.i_stars) CHECK(i == 2);
  CHECK(r.summary.rollbacks == 0);
  CHECK(count_rollbacks(r.log) == 0);
}

TEST_CASE("matching off at 142 ms rolls back at every splice") {
  const Run r = run_cruise(false);
  REQUIRE(r.summary.splices >= 10);
  // The first command after each swap targets a waypoint behind the robot.
  bool after_splice = false;
  int checked = 0;
  for (const auto& e : r.log.events) {
    if (std::holds_alternative<SpliceEvent>(e.payload)) after_splice = true;
    if (const auto* c = std::get_if<CommandEvent>(&e.payload); c && after_splice) {
      CHECK(c->rollback);
      CHECK(c->along_track < -0.005);
      after_splice = false;
      ++checked;
    }
  }
  CHECK(checked == r.summary.splices);
  CHECK(r.summary.rollbacks >= r.summary.splices);
  CHECK(count_rollbacks(r.log) == r.summary.rollbacks);
  CHECK(r.summary.jitter > 0);
  for (int i : r.summary.i_stars) CHECK(i == 0);
}

TEST_CASE("zero latency: matching on and off issue identical commands") {
  const Run on = run_cruise(true, 0.0, false);
  const Run off = run_cruise(false, 0.0, false);
  const auto a = commands(on.log), b = commands(off.log);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k]->command.v == b[k]->command.v);
    CHECK(a[k]->command.omega == b[k]->command.omega);
    CHECK(a[k]->index == b[k]->index);
  }
  for (int i : on.summary.i_stars) CHECK(i == 0);
  CHECK(on.summary.rollbacks == 0);
}

TEST_CASE("matching index is nondecreasing in injected latency") {
  double prev = -1.0;
  for (double ms : {0.0, 50.0, 100.0, 142.0, 200.0}) {
    const Run r = run_cruise(true, ms);
    REQUIRE(!r.summary.i_stars.empty());
    const int lo = *std::min_element(r.summary.i_stars.begin(), r.summary.i_stars.end());
    const int hi = *std::max_element(r.summary.i_stars.begin(), r.summary.i_stars.end());
    CHECK(lo == hi);
    CHECK(lo >= prev);
    // Swap at the first tick boundary at or after request + network delay.
    const LatencyConfig l = LatencyConfig::scaled_total(ms);
    const Micros arrival = l.in_us + l.net_us;
    const int expect = static_cast<int>((arrival + 99999) / 100000);
    CHECK(lo == expect);
    prev = lo;
  }
}

TEST_CASE("latency accounting in the log") {
  const Run r = run_cruise(true);
  std::map<std::uint64_t, Micros> request;
  for (const auto& e : r.log.events) {
    if (const auto* q = std::get_if<PlanRequestEvent>(&e.payload)) {
      CHECK(q->request_us - q->obs_us == (q->arrival_us == q->request_us ? 0 : 33000));
      request[q->chunk] = q->request_us;
    }
    if (const auto* a = std::get_if<PlanArrivalEvent>(&e.payload)) {
      if (!a->warm_start) {
        CHECK(a->arrival_us - a->request_us == 87000);
        CHECK(e.t_us >= a->arrival_us);
        CHECK(e.t_us - a->arrival_us < 100000);
      }
    }
    if (const auto* c = std::get_if<CommandEvent>(&e.payload)) CHECK(c->effect_us - c->issue_us == 22000);
  }
}

TEST_CASE("network jitter stays seeded and non-negative") {
  CruisePolicy p1(0.03), p2(0.03);
  Plant a = kinematic_plant(), b = kinematic_plant();
  ExecutorConfig cfg = cruise_config(true);
  cfg.latency.net_jitter_us = 18000;
  cfg.seed = 77;
  EpisodeLog la, lb;
  run_executor(p1, a, cfg, la);
  run_executor(p2, b, cfg, lb);
  std::vector<Micros> da, db;
  for (const auto& e : la.events)
    if (const auto* q = std::get_if<PlanRequestEvent>(&e.payload)) da.push_back(q->arrival_us - q->request_us);
  for (const auto& e : lb.events)
    if (const auto* q = std::get_if<PlanRequestEvent>(&e.payload)) db.push_back(q->arrival_us - q->request_us);
  CHECK(da == db);
  CHECK(std::any_of(da.begin() + 1, da.end(), [](Micros d) { return d != 87000; }));
  for (Micros d : da) CHECK(d >= 0);
}

TEST_CASE("executed indices strictly increase within a chunk") {
  for (bool matching : {true, false}) {
    const Run r = run_cruise(matching);
    std::map<std::uint64_t, int> last;
    for (const CommandEvent* c : commands(r.log)) {
      if (c->index < 0) continue;
      auto it = last.find(c->chunk);
      if (it != last.end()) CHECK(c->index > it->second);
      last[c->chunk] = c->index;
    }
  }
}

TEST_CASE("one plan in flight and one capture per action horizon") {
  const Run r = run_cruise(true);
  std::vector<std::int64_t> request_ticks;
  int in_flight = 0;
  for (const auto& e : r.log.events) {
    if (std::holds_alternative<PlanRequestEvent>(e.payload)) {
      request_ticks.push_back(e.tick);
      ++in_flight;
      CHECK(in_flight <= 1);
    }
    if (std::holds_alternative<PlanArrivalEvent>(e.payload)) --in_flight;
  }
  for (std::size_t k = 1; k < request_ticks.size(); ++k) CHECK(request_ticks[k] - request_ticks[k - 1] == 8);
}

TEST_CASE("cold start holds still until the first plan arrives") {
  const Run r = run_cruise(true, 142.0, false);
  const auto cmds = commands(r.log);
  CHECK(cmds[0]->index == -1);
  CHECK(cmds[0]->command.v == 0.0);
  CHECK(cmds[1]->index == -1);
  CHECK(cmds[2]->index >= 0);
  CHECK(r.summary.i_stars.front() == 0);
}

TEST_CASE("policy failure ends the run with a controlled stop") {
  FailingPolicy policy(2);
  Plant plant = kinematic_plant();
  EpisodeLog log;
  const ExecutorSummary s = run_executor(policy, plant, cruise_config(true), log);
  CHECK(s.fault.find("inference backend unavailable") != std::string::npos);
  CHECK(s.ticks < 119);
  const auto cmds = commands(log);
  REQUIRE(!cmds.empty());
  CHECK(cmds.back()->command.v == 0.0);
  CHECK(cmds.back()->command.omega == 0.0);
}

TEST_CASE("wrong chunk length is a policy failure") {
  CruisePolicy shortp(0.03, 5);
  Plant plant = kinematic_plant();
  EpisodeLog log;
  const ExecutorSummary s = run_executor(shortp, plant, cruise_config(true), log);
  CHECK(!s.fault.empty());
}

TEST_CASE("stop hook ends the run") {
  CruisePolicy policy(0.03);
  Plant plant = kinematic_plant();
  EpisodeLog log;
  ExecutorHooks hooks;
  hooks.stop = [](std::int64_t tick, Micros) { return tick == 30; };
  const ExecutorSummary s = run_executor(policy, plant, cruise_config(true), log, hooks);
  CHECK(s.stopped);
  CHECK(s.ticks == 30);
  CHECK(plant.now() == 3000000);
}

TEST_CASE("virtual-time runs are bit-identical") {
  const Run a = run_cruise(false), b = run_cruise(false);
  REQUIRE(a.log.events.size() == b.log.events.size());
  for (std::size_t k = 0; k < a.log.events.size(); ++k) {
    CHECK(a.log.events[k].kind() == b.log.events[k].kind());
    CHECK(a.log.events[k].t_us == b.log.events[k].t_us);
    const auto* ca = std::get_if<CommandEvent>(&a.log.events[k].payload);
    const auto* cb = std::get_if<CommandEvent>(&b.log.events[k].payload);
    if (ca && cb) {
      CHECK(ca->command.v == cb->command.v);
      CHECK(ca->target_base.x == cb->target_base.x);
    }
  }
}

TEST_CASE("splice jitter counts forward-velocity sign reversals near splices") {
  EpisodeLog log;
  auto cmd = [&](std::int64_t tick, double v) {
    CommandEvent c;
    c.command.v = v;
    log.events.push_back({tick, tick * 100000, c});
  };
  cmd(0, 0.3);
  cmd(1, 0.3);
  log.events.push_back({2, 200000, SpliceEvent{}});
  cmd(2, -0.3);
  cmd(3, 0.2);
  cmd(4, 0.0);  // below the dead band, ignored
  cmd(5, -0.1);
  cmd(6, 0.3);
  cmd(7, -0.3);  // outside the 5-tick window
  CHECK(count_splice_jitter(log, 5) == 4);
  CHECK(count_splice_jitter(log, 1) == 1);
}

TEST_CASE("wall-clock mode follows the same ordering contract") {
  CruisePolicy policy(0.03);
  Plant plant = kinematic_plant();
  ExecutorConfig cfg = cruise_config(true);
  cfg.max_ticks = 40;
  EpisodeLog log;
  const ExecutorSummary s = run_executor_realtime(policy, plant, cfg, log, 0.02);
  CHECK(s.fault.empty());
  CHECK(s.splices >= 2);
  CHECK(s.rollbacks == 0);
  int in_flight = 0;
  for (const auto& e : log.events) {
    if (std::holds_alternative<PlanRequestEvent>(e.payload)) CHECK(++in_flight <= 1);
    if (std::holds_alternative<PlanArrivalEvent>(e.payload)) --in_flight;
    if (const auto* a = std::get_if<PlanArrivalEvent>(&e.payload)) CHECK(e.t_us >= a->arrival_us);
    if (const auto* c = std::get_if<CommandEvent>(&e.payload)) CHECK(c->effect_us - c->issue_us == 22000);
  }
}

TEST_CASE("executor configuration validation") {
  ExecutorConfig c;
  CHECK_NOTHROW(c.validate());
  c.action_horizon = 17;
  CHECK_THROWS_AS(c.validate(), Error);
  c = ExecutorConfig{};
  c.latency.net_us = -1;
  CHECK_THROWS_AS(c.validate(), Error);
}

}  // TEST_SUITE
