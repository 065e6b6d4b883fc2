#include "dex/rng.hpp"
#include "dex/sim.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace dex {

EpisodeDraw draw_episode(const SimScenario& sc, const EpisodeConfig& cfg, std::uint64_t seed) {
  EpisodeDraw d;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto start_rng = make_rng(seed, "start");
  if (cfg.randomize_start) {
    const double r = sc.start_radius * std::sqrt(u(start_rng));
    const double phi = 2.0 * kPi * u(start_rng);
    const double dh = sc.start_heading * (2.0 * u(start_rng) - 1.0);
    d.start = Pose2(sc.start.x + r * std::cos(phi), sc.start.y + r * std::sin(phi), sc.start.theta + dh);
  } else {
    d.start = sc.start;
  }
  auto speed_rng = make_rng(seed, "demo-speed");
  d.demo_speed = cfg.locomotion_variation
                     ? cfg.demo_speed_lo + (cfg.demo_speed_hi - cfg.demo_speed_lo) * u(speed_rng)
                     : cfg.expert.v_cruise;
  auto slip_rng = make_rng(seed, "slip");
  d.slip_accel = cfg.slip_lo + (cfg.slip_hi - cfg.slip_lo) * u(slip_rng);
  return d;
}

EpisodeResult run_episode(ChunkPolicy& policy, const SimScenario& sc, const EpisodeConfig& cfg,
                          std::uint64_t seed) {
  sc.validate(cfg.plant);
  const EpisodeDraw draw = draw_episode(sc, cfg, seed);

  PlantState init;
  init.base = draw.start;
  init.v = sc.initial_speed;
  init.hand_rel = sc.carry_hand;
  init.grip = sc.start_holding ? 0.0 : 1.0;
  Plant plant(cfg.plant, init);

  TrackerConfig tc = cfg.tracker;
  tc.slip_accel = draw.slip_accel;
  TaskTracker tracker(sc, tc, plant.state());

  ExecutorConfig ec = cfg.executor;
  ec.chest_height = sc.chest_height;
  ec.seed = substream_seed(seed, "executor");
  ec.max_ticks = static_cast<int>(std::ceil(sc.time_limit / ec.dt())) + 1;
  ec.warm_start = ec.warm_start || sc.initial_speed > 0.0;

  EpisodeResult res;
  double track_sq = 0.0;
  int track_n = 0;
  std::size_t scanned = 0;
  std::optional<Pose2> last_target;
  double peak = 0.0;

  ExecutorHooks hooks;
  hooks.observe = [&](const RobotState&, Micros) {
    Observation o;
    o.stage = std::min(tracker.status().stage, sc.stage_count() - 1);
    o.features = scenario_features(sc, tracker.status().stage, plant.read());
    return o;
  };
  hooks.stop = [&](std::int64_t, Micros) {
    const PlantState& s = plant.state();
    peak = std::max(peak, plant.peak_accel());
    tracker.update(s, plant.peak_accel());
    plant.reset_peak_accel();
    res.trace.push_back(s);
    if (last_target) {
      const double e = std::hypot(s.base.x - last_target->x, s.base.y - last_target->y);
      track_sq += e * e;
      ++track_n;
    }
    last_target.reset();
    for (; scanned < res.log.events.size(); ++scanned) {
      if (const auto* c = std::get_if<CommandEvent>(&res.log.events[scanned].payload); c && c->index >= 0) {
        last_target = c->target_base;
      }
    }
    return tracker.finished();
  };

  const ExecutorSummary summary = run_executor(policy, plant, ec, res.log, hooks);
  if (!summary.fault.empty()) tracker.fail("policy: " + summary.fault);
  if (!tracker.finished()) tracker.fail("timeout");

  const TaskStatus& st = tracker.status();
  EpisodeMetrics& m = res.metrics;
  m.seed = seed;
  m.scenario = to_string(sc.id);
  m.frame = to_string(ec.frame);
  m.matching = ec.matching;
  m.latency_ms = static_cast<double>(ec.latency.total()) * 1e-3;
  m.success = st.done && !st.failed;
  m.failure = st.failure;
  m.completion_time = m.success ? st.done_time - init.t : sc.time_limit;
  m.stages_done = std::min(st.stage, sc.stage_count());
  m.splices = summary.splices;
  m.rollbacks = summary.rollbacks;
  m.jitter = summary.jitter;
  m.i_stars = summary.i_stars;
  if (!m.i_stars.empty()) {
    const double n = static_cast<double>(m.i_stars.size());
    m.i_star_mean = std::accumulate(m.i_stars.begin(), m.i_stars.end(), 0.0) / n;
    double acc = 0.0;
    for (int i : m.i_stars) acc += (i - m.i_star_mean) * (i - m.i_star_mean);
    m.i_star_std = std::sqrt(acc / n);
  }
  m.tracking_rms = track_n > 0 ? std::sqrt(track_sq / track_n) : 0.0;
  m.demo_speed = draw.demo_speed;
  m.peak_accel = peak;
  return res;
}

EpisodeResult run_expert_episode(const SimScenario& sc, const EpisodeConfig& cfg, std::uint64_t seed) {
  const EpisodeDraw draw = draw_episode(sc, cfg, seed);
  ExpertConfig e = cfg.expert;
  e.v_cruise = draw.demo_speed;
  e.horizon = cfg.executor.horizon;
  e.dt = cfg.executor.dt();
  ExpertPlanner expert(sc, e, cfg.executor.frame, sc.chest_height);
  return run_episode(expert, sc, cfg, seed);
}

std::uint64_t trial_seed(std::uint64_t master, int trial) {
  return substream_seed(master, "trial-" + std::to_string(trial));
}

ConditionSummary summarize(const Condition& c, const std::vector<EpisodeMetrics>& episodes) {
  ConditionSummary s;
  s.condition = c;
  s.trials = static_cast<int>(episodes.size());
  if (episodes.empty()) return s;
  int ok = 0;
  double t = 0.0, rb = 0.0, jit = 0.0;
  std::vector<int> all;
  for (const EpisodeMetrics& m : episodes) {
    if (m.success) {
      ++ok;
      t += m.completion_time;
    } else {
      ++s.failures[m.failure];
    }
    rb += m.rollbacks;
    jit += m.jitter;
    all.insert(all.end(), m.i_stars.begin(), m.i_stars.end());
  }
  const double n = static_cast<double>(episodes.size());
  s.success_rate = ok / n;
  s.mean_time = ok > 0 ? t / ok : 0.0;
  s.rollbacks_mean = rb / n;
  s.jitter_mean = jit / n;
  if (!all.empty()) {
    s.i_star_mean = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
    double acc = 0.0;
    for (int i : all) acc += (i - s.i_star_mean) * (i - s.i_star_mean);
    s.i_star_std = std::sqrt(acc / static_cast<double>(all.size()));
  }
  return s;
}

ComparisonResult compare_conditions(const SimScenario& sc, const EpisodeConfig& base,
                                    const std::vector<Condition>& conditions, int n_trials,
                                    std::uint64_t master_seed) {
  return compare_conditions(sc, base, conditions, n_trials, master_seed, {});
}

ComparisonResult compare_conditions(const SimScenario& sc, const EpisodeConfig& base,
                                    const std::vector<Condition>& conditions, int n_trials,
                                    std::uint64_t master_seed, const PolicyFactory& factory) {
  if (n_trials < 1) throw Error("compare_conditions: n_trials must be positive");
  ComparisonResult out;
  for (const Condition& c : conditions) {
    EpisodeConfig cfg = base;
    cfg.executor.frame = c.frame;
    cfg.executor.matching = c.matching;
    std::vector<EpisodeMetrics> rows;
    for (int k = 0; k < n_trials; ++k) {
      const std::uint64_t seed = trial_seed(master_seed, k);
      if (factory) {
        std::unique_ptr<ChunkPolicy> policy = factory(cfg, seed);
        rows.push_back(run_episode(*policy, sc, cfg, seed).metrics);
      } else {
        rows.push_back(run_expert_episode(sc, cfg, seed).metrics);
      }
    }
    out.summaries.push_back(summarize(c, rows));
    out.episodes.insert(out.episodes.end(), rows.begin(), rows.end());
  }
  return out;
}

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '"') c = ';';
  return s;
}

}  // namespace

std::string metrics_csv(const std::vector<EpisodeMetrics>& episodes) {
  std::ostringstream os;
  os << "seed,scenario,frame,matching,latency_ms,success,failure,completion_time,stages_done,splices,"
        "rollbacks,jitter,i_star_mean,i_star_std,tracking_rms,demo_speed,peak_accel,i_stars\n";
  for (const EpisodeMetrics& m : episodes) {
    os << m.seed << ',' << m.scenario << ',' << m.frame << ',' << (m.matching ? "on" : "off") << ','
       << fmt(m.latency_ms) << ',' << (m.success ? 1 : 0) << ',' << csv_safe(m.failure) << ','
       << fmt(m.completion_time) << ',' << m.stages_done << ',' << m.splices << ',' << m.rollbacks << ','
       << m.jitter << ',' << fmt(m.i_star_mean) << ',' << fmt(m.i_star_std) << ',' << fmt(m.tracking_rms)
       << ',' << fmt(m.demo_speed) << ',' << fmt(m.peak_accel) << ',';
    for (std::size_t i = 0; i < m.i_stars.size(); ++i) os << (i ? " " : "") << m.i_stars[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace dex
