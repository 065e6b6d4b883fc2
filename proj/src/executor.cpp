#include "dex/executor.hpp"

#include "dex/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <random>
#include <thread>

namespace dex {

void MatchWeights::validate() const {
  if (w_b < 0 || w_t < 0 || w_r < 0 || w_g < 0) throw Error("match weights must be non-negative");
  if (!(w_b > 0 || w_t > 0 || w_r > 0 || w_g > 0)) throw Error("at least one match weight must be positive");
  if (!(fold_radius >= 0.0)) throw Error("fold radius must be non-negative");
}

MatchWeights MatchWeights::scaled(double c) const {
  if (!(c > 0.0)) throw Error("match weight scale must be positive");
  return {c * w_b, c * w_t, c * w_r, c * w_g, fold_radius};
}

std::string to_string(LabelFrame f) { return f == LabelFrame::relative ? "relative" : "global"; }

LabelFrame label_frame_from_string(const std::string& s) {
  if (s == "relative") return LabelFrame::relative;
  if (s == "global") return LabelFrame::global;
  throw Error("unknown label frame '" + s + "' (expected relative or global)");
}

std::vector<RobotState> forward_rollout(const RobotState& s0, const std::vector<Action>& chunk) {
  std::vector<RobotState> out;
  out.reserve(chunk.size() + 1);
  out.push_back(s0);
  for (const Action& a : chunk) out.push_back(apply_action(out.back(), a));
  return out;
}

ChunkPlan ChunkPlan::make(std::uint64_t id, Micros t0_obs, const RobotState& s0,
                          std::vector<Action> chunk) {
  if (chunk.empty()) throw Error("chunk plan needs at least one action");
  ChunkPlan p;
  p.id = id;
  p.t0_obs = t0_obs;
  p.states = forward_rollout(s0, chunk);
  p.chunk = std::move(chunk);
  return p;
}

namespace {

MatchTerms match_terms(const RobotState& a, const RobotState& b, const MatchWeights& w) {
  MatchTerms t;
  const double db = dist_se2(a.base, b.base, w.fold_radius);
  const double dr = geodesic_so3(a.hand_rel.rotation, b.hand_rel.rotation);
  const double dg = a.grip - b.grip;
  t.base = w.w_b * db * db;
  t.translation = w.w_t * (a.hand_rel.translation - b.hand_rel.translation).squaredNorm();
  t.rotation = w.w_r * dr * dr;
  t.grip = w.w_g * dg * dg;
  return t;
}

}  // namespace

SpliceReport state_match(const std::vector<RobotState>& rollout, const RobotState& now,
                         const MatchWeights& w) {
  if (rollout.empty()) throw Error("state_match: empty rollout");
  SpliceReport r;
  // Costs within a relative band of 1e-9 count as ties, so a common weight
  // scale cannot flip the argmin through rounding.
  constexpr double kTieBand = 1e-9;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < rollout.size(); ++i) {
    const MatchTerms t = match_terms(rollout[i], now, w);
    if (t.total() < best * (1.0 - kTieBand)) {
      best = t.total();
      r.i_star = static_cast<int>(i);
      r.terms = t;
    }
  }
  r.discarded = r.i_star;
  return r;
}

SplicedChunk splice(const ChunkPlan& plan, int i_star) {
  const int tp = plan.horizon();
  if (i_star < 0 || i_star >= tp) throw Error("splice: i* outside the chunk");
  SplicedChunk s;
  s.first = i_star;
  s.remaining = tp - i_star;
  s.replan = i_star == tp - 1;
  return s;
}

LatencyConfig LatencyConfig::scaled_total(double total_ms) {
  if (!(total_ms >= 0.0)) throw Error("latency must be non-negative");
  const LatencyConfig d;
  const double f = total_ms / 142.0;
  LatencyConfig out;
  out.in_us = std::llround(static_cast<double>(d.in_us) * f);
  out.exe_us = std::llround(static_cast<double>(d.exe_us) * f);
  out.net_us = std::llround(total_ms * 1000.0) - out.in_us - out.exe_us;
  return out;
}

void ExecutorConfig::validate() const {
  if (horizon < 1) throw Error("executor: T_p must be positive");
  if (action_horizon < 1 || action_horizon > horizon) throw Error("executor: T_a must be in [1, T_p]");
  if (dt_us <= 0) throw Error("executor: dt must be positive");
  if (latency.in_us < 0 || latency.net_us < 0 || latency.exe_us < 0 || latency.net_jitter_us < 0) {
    throw Error("executor: latencies must be non-negative");
  }
  if (max_ticks < 0) throw Error("executor: max_ticks must be non-negative");
  weights.validate();
}

std::string LogEvent::kind() const {
  switch (payload.index()) {
    case 0: return "command";
    case 1: return "splice";
    case 2: return "plan_request";
    default: return "plan_arrival";
  }
}

RobotState to_label_frame(const RobotState& robot, LabelFrame frame, double chest_height) {
  if (frame == LabelFrame::relative) return robot;
  RobotState s = robot;
  s.hand_rel = lift(robot.base, chest_height) * robot.hand_rel;
  return s;
}

Pose3 hand_command(const RobotState& robot, const Pose3& target_hand, LabelFrame frame,
                   double chest_height) {
  if (frame == LabelFrame::relative) return target_hand;
  return inverse(lift(robot.base, chest_height)) * target_hand;
}

namespace {

struct PendingPlan {
  ChunkPlan plan;
  Micros request_us = 0;
  Micros arrival_us = 0;
};

// Dispatcher state shared by the virtual and wall-clock drivers.
class Dispatcher {
 public:
  Dispatcher(ChunkPolicy& policy, ExecutorPlant& plant, const ExecutorConfig& cfg,
             EpisodeLog& log, const ExecutorHooks& hooks)
      : policy_(policy), plant_(plant), cfg_(cfg), log_(log), hooks_(hooks),
        jitter_rng_(make_rng(cfg.seed, "latency-jitter")) {}

  ExecutorSummary summary;
  std::uint64_t next_id = 1;

  RobotState frame_state() const {
    return to_label_frame(plant_.read(), cfg_.frame, cfg_.chest_height);
  }

  Observation observe(const RobotState& s, Micros t) const {
    Observation o;
    if (hooks_.observe) o = hooks_.observe(s, t);
    o.t_us = t;
    o.state = s;
    o.prev_action = prev_action_;
    return o;
  }

  bool capture_due() const {
    return !active_ || exhausted() || replan_ || ticks_since_capture_ >= cfg_.action_horizon;
  }

  /// Runs the policy on the observation; returns the plan or records a fault.
  std::optional<ChunkPlan> request(const Observation& obs) {
    std::vector<Action> chunk;
    try {
      chunk = policy_.plan(obs);
    } catch (const std::exception& e) {
      summary.fault = std::string("policy failure: ") + e.what();
      return std::nullopt;
    }
    if (static_cast<int>(chunk.size()) != cfg_.horizon) {
      summary.fault = "policy failure: chunk has " + std::to_string(chunk.size()) +
                      " actions, expected " + std::to_string(cfg_.horizon);
      return std::nullopt;
    }
    return ChunkPlan::make(next_id++, obs.t_us, obs.state, std::move(chunk));
  }

  Micros arrival_time(Micros request_us) {
    Micros net = cfg_.latency.net_us;
    if (cfg_.latency.net_jitter_us > 0.0) {
      std::normal_distribution<double> n(0.0, cfg_.latency.net_jitter_us);
      net = std::max<Micros>(0, net + std::llround(n(jitter_rng_)));
    }
    return request_us + net;
  }

  void log_request(std::int64_t tick, Micros t, const PendingPlan& p) {
    log_.events.push_back(
        {tick, t, PlanRequestEvent{p.plan.id, p.plan.t0_obs, p.request_us, p.arrival_us}});
    ticks_since_capture_ = 0;
    replan_ = false;
  }

  void install_warm(std::int64_t tick, Micros t, ChunkPlan plan) {
    log_.events.push_back({tick, t, PlanRequestEvent{plan.id, plan.t0_obs, t, t}});
    log_.events.push_back({tick, t, PlanArrivalEvent{plan.id, t, t, true}});
    active_ = std::move(plan);
    cursor_ = 0;
    ticks_since_capture_ = 0;
    replan_ = false;
  }

  /// Swap in an arrived plan at this tick boundary.
  void swap(std::int64_t tick, Micros t, PendingPlan p) {
    log_.events.push_back({tick, t, PlanArrivalEvent{p.plan.id, p.request_us, p.arrival_us, false}});
    SpliceReport report;
    if (cfg_.matching) {
      const RobotState now = frame_state();
      const auto t0 = std::chrono::steady_clock::now();
      report = state_match(p.plan.rollout(), now, cfg_.weights);
      if (realtime_) {
        report.match_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
      }
    }
    const SplicedChunk s = splice(p.plan, report.i_star);
    log_.events.push_back({tick, t, SpliceEvent{p.plan.id, cfg_.matching, report, s.remaining, s.replan}});
    ++summary.splices;
    summary.i_stars.push_back(report.i_star);
    active_ = std::move(p.plan);
    cursor_ = s.first;
    replan_ = s.replan;
  }

  void dispatch(std::int64_t tick, Micros t) {
    const RobotState robot = plant_.read();
    CommandEvent ev;
    ev.issue_us = t;
    ev.effect_us = t + cfg_.latency.exe_us;
    const double dt = cfg_.dt();
    if (active_ && !exhausted()) {
      const RobotState& target = active_->target(cursor_);
      const Pose2 e = between(robot.base, target.base);
      ev.chunk = active_->id;
      ev.index = cursor_;
      ev.target_base = target.base;
      ev.command.v = e.x / dt;
      ev.command.v_lat = e.y / dt;
      ev.command.omega = e.theta / dt;
      ev.command.hand_target = hand_command(robot, target.hand_rel, cfg_.frame, cfg_.chest_height);
      ev.command.grip_target = target.grip;
      ev.along_track = e.x;
      ev.chunk_forward = between(active_->states.front().base, active_->states.back().base).x > 0.0;
      ev.rollback = ev.chunk_forward && ev.along_track < -cfg_.rollback_threshold;
      prev_action_ = active_->chunk[static_cast<std::size_t>(cursor_)];
      ++cursor_;
    } else if (active_) {
      // Chunk exhausted: hold the final rolled-out state.
      const RobotState& target = active_->states.back();
      const Pose2 e = between(robot.base, target.base);
      ev.chunk = active_->id;
      ev.target_base = target.base;
      ev.command.v = e.x / dt;
      ev.command.v_lat = e.y / dt;
      ev.command.omega = e.theta / dt;
      ev.command.hand_target = hand_command(robot, target.hand_rel, cfg_.frame, cfg_.chest_height);
      ev.command.grip_target = target.grip;
      ev.along_track = e.x;
      prev_action_ = Action{};
      prev_action_.grip = target.grip;
    } else {
      ev.target_base = robot.base;
      ev.command.hand_target = robot.hand_rel;
      ev.command.grip_target = robot.grip;
      prev_action_ = Action{};
      prev_action_.grip = robot.grip;
    }
    if (ev.rollback) ++summary.rollbacks;
    plant_.schedule(ev.command, ev.effect_us);
    log_.events.push_back({tick, t, ev});
    ++ticks_since_capture_;
  }

  void controlled_stop(std::int64_t tick, Micros t) {
    const RobotState robot = plant_.read();
    CommandEvent ev;
    ev.issue_us = t;
    ev.effect_us = t + cfg_.latency.exe_us;
    ev.target_base = robot.base;
    ev.command.hand_target = robot.hand_rel;
    ev.command.grip_target = robot.grip;
    plant_.schedule(ev.command, ev.effect_us);
    log_.events.push_back({tick, t, ev});
  }

  bool exhausted() const { return active_ && cursor_ >= active_->horizon(); }

  bool realtime_ = false;

 private:
  ChunkPolicy& policy_;
  ExecutorPlant& plant_;
  const ExecutorConfig& cfg_;
  EpisodeLog& log_;
  const ExecutorHooks& hooks_;
  std::mt19937_64 jitter_rng_;

  std::optional<ChunkPlan> active_;
  int cursor_ = 0;
  int ticks_since_capture_ = 0;
  bool replan_ = false;
  Action prev_action_;
};

void finish(ExecutorSummary& s, const EpisodeLog& log, const ExecutorConfig& cfg) {
  s.jitter = count_splice_jitter(log, cfg.jitter_window_ticks);
}

}  // namespace

ExecutorSummary run_executor(ChunkPolicy& policy, ExecutorPlant& plant, const ExecutorConfig& cfg,
                             EpisodeLog& log, const ExecutorHooks& hooks) {
  cfg.validate();
  Dispatcher d(policy, plant, cfg, log, hooks);
  std::optional<PendingPlan> pending;
  const Micros t_start = plant.now();
  for (std::int64_t tick = 0; tick < cfg.max_ticks; ++tick) {
    const Micros t = t_start + tick * cfg.dt_us;
    plant.advance_to(t);
    d.summary.ticks = static_cast<int>(tick);
    if (hooks.stop && hooks.stop(tick, t)) {
      d.summary.stopped = true;
      break;
    }
    if (tick == 0 && cfg.warm_start) {
      auto plan = d.request(d.observe(d.frame_state(), t));
      if (!plan) {
        d.controlled_stop(tick, t);
        break;
      }
      d.install_warm(tick, t, std::move(*plan));
    } else if (!pending && d.capture_due()) {
      const Observation obs = d.observe(d.frame_state(), t);
      auto plan = d.request(obs);
      if (!plan) {
        d.controlled_stop(tick, t);
        break;
      }
      PendingPlan p{std::move(*plan), t + cfg.latency.in_us, 0};
      p.arrival_us = d.arrival_time(p.request_us);
      d.log_request(tick, t, p);
      pending = std::move(p);
    }
    if (pending && pending->arrival_us <= t) {
      d.swap(tick, t, std::move(*pending));
      pending.reset();
    }
    d.dispatch(tick, t);
  }
  finish(d.summary, log, cfg);
  return d.summary;
}

ExecutorSummary run_executor_realtime(ChunkPolicy& policy, ExecutorPlant& plant,
                                      const ExecutorConfig& cfg, EpisodeLog& log,
                                      double time_scale, const ExecutorHooks& hooks) {
  cfg.validate();
  if (!(time_scale > 0.0)) throw Error("time_scale must be positive");
  using Clock = std::chrono::steady_clock;
  auto scaled = [&](Micros us) {
    return std::chrono::microseconds(std::llround(static_cast<double>(us) * time_scale));
  };

  Dispatcher d(policy, plant, cfg, log, hooks);
  d.realtime_ = true;

  // Planner thread: one request in flight at a time.
  std::mutex mu;
  std::condition_variable cv;
  std::optional<Observation> job;
  std::optional<PendingPlan> done;
  bool failed = false;
  bool quit = false;
  Micros job_request_us = 0;
  std::uint64_t job_id = 0;
  const Clock::time_point epoch = Clock::now();
  const Micros t_start = plant.now();

  std::thread planner([&] {
    std::unique_lock<std::mutex> lock(mu);
    while (true) {
      cv.wait(lock, [&] { return quit || job.has_value(); });
      if (quit) return;
      const Observation obs = *job;
      const Micros request_us = job_request_us;
      const std::uint64_t id = job_id;
      lock.unlock();
      std::vector<Action> chunk;
      bool ok = true;
      try {
        chunk = policy.plan(obs);
      } catch (const std::exception&) {
        ok = false;
      }
      if (ok && static_cast<int>(chunk.size()) != cfg.horizon) ok = false;
      const Micros arrival_us = request_us + cfg.latency.net_us;
      std::this_thread::sleep_until(epoch + scaled(arrival_us - t_start));
      lock.lock();
      job.reset();
      if (!ok) {
        failed = true;
      } else {
        done = PendingPlan{ChunkPlan::make(id, obs.t_us, obs.state, std::move(chunk)), request_us,
                           arrival_us};
      }
    }
  });

  bool in_flight = false;
  for (std::int64_t tick = 0; tick < cfg.max_ticks; ++tick) {
    const Micros t = t_start + tick * cfg.dt_us;
    std::this_thread::sleep_until(epoch + scaled(t - t_start));
    plant.advance_to(t);
    d.summary.ticks = static_cast<int>(tick);
    if (hooks.stop && hooks.stop(tick, t)) {
      d.summary.stopped = true;
      break;
    }
    std::optional<PendingPlan> arrived;
    bool planner_failed = false;
    {
      std::lock_guard<std::mutex> lock(mu);
      if (done && done->arrival_us <= t) {
        arrived = std::move(done);
        done.reset();
      }
      planner_failed = failed;
    }
    if (planner_failed) {
      d.summary.fault = "policy failure in planner thread";
      d.controlled_stop(tick, t);
      break;
    }
    if (!in_flight && d.capture_due()) {
      const Observation obs = d.observe(d.frame_state(), t);
      PendingPlan p;
      p.plan.id = d.next_id++;
      p.plan.t0_obs = t;
      p.request_us = t + cfg.latency.in_us;
      p.arrival_us = p.request_us + cfg.latency.net_us;
      d.log_request(tick, t, p);
      {
        std::lock_guard<std::mutex> lock(mu);
        job = obs;
        job_request_us = p.request_us;
        job_id = p.plan.id;
      }
      cv.notify_one();
      in_flight = true;
    }
    if (arrived) {
      d.swap(tick, t, std::move(*arrived));
      in_flight = false;
    }
    d.dispatch(tick, t);
  }
  {
    std::lock_guard<std::mutex> lock(mu);
    quit = true;
  }
  cv.notify_one();
  planner.join();
  finish(d.summary, log, cfg);
  return d.summary;
}

int count_rollbacks(const EpisodeLog& log, double threshold) {
  int n = 0;
  for (const LogEvent& e : log.events) {
    if (const auto* c = std::get_if<CommandEvent>(&e.payload)) {
      if (c->index >= 0 && c->chunk_forward && c->along_track < -threshold) ++n;
    }
  }
  return n;
}

int count_splice_jitter(const EpisodeLog& log, int window_ticks, double dead_band) {
  std::vector<std::pair<std::int64_t, double>> cmds;
  std::vector<std::int64_t> splices;
  for (const LogEvent& e : log.events) {
    if (const auto* c = std::get_if<CommandEvent>(&e.payload)) cmds.emplace_back(e.tick, c->command.v);
    if (std::holds_alternative<SpliceEvent>(e.payload)) splices.push_back(e.tick);
  }
  int count = 0;
  for (std::int64_t s : splices) {
    int last_sign = 0;
    for (const auto& [tick, v] : cmds) {
      if (tick < s - 1 || tick >= s + window_ticks) continue;
      if (std::abs(v) <= dead_band) continue;
      const int sign = v > 0 ? 1 : -1;
      if (last_sign != 0 && sign != last_sign) ++count;
      last_sign = sign;
    }
  }
  return count;
}

}  // namespace dex
