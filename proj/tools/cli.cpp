#include "cli.hpp"

#include "report.hpp"

#include "dex/demo.hpp"
#include "dex/io.hpp"
#include "dex/policy.hpp"
#include "dex/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

namespace dex::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Per-run bookkeeping for the manifest.
struct Run {
  std::string command;
  std::vector<std::string> argv;
  fs::path out_dir;
  json config = json::object();
  json seed = nullptr;
  json inputs = json::object();
  json outputs = json::object();
  std::ostream& out;

  void input(const fs::path& p) { inputs[p.string()] = file_hash(p); }
  void input_dir(const fs::path& dir) {
    for (const char* name : {"session.json", "vio.jsonl", "extrinsics.json", "markers.jsonl", "images.jsonl"})
      if (fs::exists(dir / name)) input(dir / name);
  }
  void write(const std::string& rel, const std::string& content) {
    write_text(out_dir / rel, content);
    outputs[rel] = content_hash(content);
  }
  void track(const std::string& rel) { outputs[rel] = file_hash(out_dir / rel); }
  void manifest() const {
    const json m{{"artifact", "dex"},     {"version", kVersion}, {"command", command},
                 {"argv", argv},          {"cwd", fs::current_path().string()},
                 {"seed", seed},          {"config", config},    {"inputs", inputs},
                 {"outputs", outputs}};
    write_text(out_dir / "manifest.json", m.dump(2) + "\n");
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

void require_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
}

// ---------------------------------------------------------------- anchor

struct AnchorOpts {
  std::string session, vio, extrinsics, out;
  double cov_threshold = 0.01;
};

void cmd_anchor(const AnchorOpts& o, Run& run) {
  std::string vio = o.vio, ext = o.extrinsics;
  if (!o.session.empty()) {
    if (!vio.empty() || !ext.empty()) throw UsageError("anchor: use either --session or --vio/--extrinsics");
    vio = (fs::path(o.session) / "vio.jsonl").string();
    ext = (fs::path(o.session) / "extrinsics.json").string();
  }
  if (vio.empty()) throw UsageError("anchor: --session or --vio is required");
  if (ext.empty()) throw UsageError("anchor: --extrinsics is required with --vio");
  if (!fs::exists(ext)) throw UsageError("anchor: missing extrinsics file " + ext);
  run.input(vio);
  run.input(ext);
  run.config = {{"vio", vio}, {"extrinsics", ext}, {"cov_threshold", o.cov_threshold}};

  const VioRecords r = read_vio_jsonl(vio);
  const auto [ce, he] = read_extrinsics(ext);
  const AnchorResult a = compute_anchor(r.chest, r.hand, ce, he, r.detections, o.cov_threshold);
  run.write("anchor.json", anchor_json(a));
  for (const NodeAnchor* n : {&a.chest, &a.hand}) {
    run.out << to_string(n->node) << ": " << n->detection_count << " detections, " << n->rejected_count
            << " rejected, residual rms " << fmt("%.3f", 1e3 * n->position_rms) << " mm / "
            << fmt("%.4f", n->rotation_rms * 180.0 / kPi) << " deg"
            << (n->ill_conditioned ? " (ill-conditioned)" : "") << "\n";
  }
  const Vec3& t = a.chest_world_from_hand_world.translation;
  run.out << "cross-node translation [" << fmt("%.4f", t.x()) << ", " << fmt("%.4f", t.y()) << ", "
          << fmt("%.4f", t.z()) << "] m\n";
}

// ---------------------------------------------------------------- process

struct ProcessOpts {
  std::vector<std::string> sessions, anchors;
  std::string calib, out;
  bool no_smoothing = false;
  int savgol_window = 9, savgol_order = 2;
  double cov_threshold = 0.01, workspace = 5.0;
};

void cmd_process(const ProcessOpts& o, Run& run) {
  if (!o.anchors.empty() && o.anchors.size() != o.sessions.size())
    throw UsageError("process: give one --anchor per --session, or none to anchor each session itself");
  PipelineConfig pc;
  pc.smoothing = !o.no_smoothing;
  pc.savgol_window = o.savgol_window;
  pc.savgol_order = o.savgol_order;
  pc.cov_threshold = o.cov_threshold;
  pc.workspace_half_extent = Vec3::Constant(o.workspace);
  GripperCalib calib;
  if (!o.calib.empty()) {
    run.input(o.calib);
    calib = read_calib(o.calib);
  }
  run.config = {{"sessions", o.sessions},
                {"anchors", o.anchors},
                {"calib", {{"d_closed", calib.d_closed}, {"d_open", calib.d_open}}},
                {"smoothing", pc.smoothing},
                {"savgol_window", pc.savgol_window},
                {"savgol_order", pc.savgol_order},
                {"cov_threshold", pc.cov_threshold},
                {"workspace_half_extent", o.workspace}};

  json sessions = json::array();
  std::set<std::string> ids;
  int accepted = 0;
  for (std::size_t i = 0; i < o.sessions.size(); ++i) {
    run.input_dir(o.sessions[i]);
    const RawSession s = read_session(o.sessions[i]);
    if (!ids.insert(s.id).second) throw UsageError("process: duplicate session id " + s.id);
    json rec{{"id", s.id}, {"path", o.sessions[i]}};
    try {
      Pose3 cross;
      if (!o.anchors.empty()) {
        run.input(o.anchors[i]);
        cross = read_anchor(o.anchors[i]);
        rec["anchor"] = o.anchors[i];
      } else {
        cross = compute_anchor(s.chest, s.hand, s.chest_ext, s.hand_ext, s.detections, pc.cov_threshold)
                    .chest_world_from_hand_world;
        rec["anchor"] = "computed";
      }
      const DemoDataset d = assemble_dataset(s, cross, calib, pc);
      std::vector<Pose2> bases;
      for (const DemoStep& st : d.steps) bases.push_back(st.base);
      const NonholonomicProjection proj = project_nonholonomic(bases, 1.0 / pc.rate_hz);
      const double q99 = proj.lateral.empty() ? 0.0 : lateral_quantile(proj.lateral, 0.99);
      run.write(s.id + ".jsonl", dataset_jsonl(d));
      rec.update({{"accepted", true},
                  {"reasons", json::array()},
                  {"steps", d.steps.size()},
                  {"lateral_q99_mps", q99},
                  {"max_cov_trace", d.report.max_cov_trace},
                  {"max_displacement_m", d.report.max_displacement},
                  {"dataset", s.id + ".jsonl"}});
      ++accepted;
      run.out << "session " << s.id << ": accepted, " << d.steps.size() << " steps, lateral q0.99 "
              << fmt("%.4f", q99) << " m/s" << (q99 < 0.03 ? "" : " (above 0.03 m/s)") << "\n";
    } catch (const QualityRejected& e) {
      rec.update({{"accepted", false},
                  {"reasons", e.report.reasons},
                  {"max_cov_trace", e.report.max_cov_trace},
                  {"max_displacement_m", e.report.max_displacement}});
      std::string why;
      for (const std::string& r : e.report.reasons) why += (why.empty() ? "" : ", ") + r;
      run.out << "session " << s.id << ": rejected (" << why << ")\n";
    } catch (const AnchorRejected& e) {
      rec.update({{"accepted", false}, {"reasons", {"anchor"}}, {"detail", e.what()}});
      run.out << "session " << s.id << ": rejected (anchor: " << e.what() << ")\n";
    }
    sessions.push_back(rec);
  }
  const int rejected = static_cast<int>(o.sessions.size()) - accepted;
  run.write("report.json", json{{"accepted", accepted}, {"rejected", rejected}, {"sessions", sessions}}.dump(2) + "\n");
  if (accepted == 0) throw DomainRejected("process: all sessions were rejected");
}

// ---------------------------------------------------------------- train-toy

struct TrainOpts {
  std::string data, out, objective = "noise";
  int horizon = 16, steps = 2000, batch = 64, K = 100, n_steps = 10, hidden = 64, check_samples = 20000;
  double lr = 1e-3, ema_decay = kDefaultEmaDecay;
  bool no_ema_warmup = false;
  std::uint64_t seed = 0;
};

void cmd_train_toy(const TrainOpts& o, Run& run) {
  run.input(o.data);
  // A dataset (DemoStep lines) becomes chunk examples; otherwise the file is a training set.
  bool is_dataset = false;
  {
    std::istringstream in(read_text(o.data));
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      is_dataset = line.find("\"hand_rel\"") != std::string::npos;
      break;
    }
  }
  TrainingSet ts;
  Checkpoint ck;
  if (is_dataset) {
    DemoDataset d;
    d.steps = read_dataset_jsonl(o.data);
    ts = chunk_training_set(d, o.horizon);
    ck.horizon = o.horizon;
  } else {
    ts = read_training_set(o.data);
    if (ts.a0.rows() % kActionDim == 0 && ts.cond.rows() >= ConditionLayout{}.dim()) {
      ck.horizon = static_cast<int>(ts.a0.rows() / kActionDim);
      ck.scenario_dim = static_cast<int>(ts.cond.rows()) - ConditionLayout{}.dim();
    }
  }
  if (ts.a0.cols() == 0) throw UsageError("train-toy: the dataset has no training examples");
  if (o.objective != "noise" && o.objective != "mean") throw UsageError("train-toy: --objective is noise or mean");

  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch = o.batch;
  tc.learning_rate = o.lr;
  tc.seed = o.seed;
  tc.K = o.K;
  tc.hidden = o.hidden;
  tc.ema_decay = o.ema_decay;
  tc.ema_warmup = !o.no_ema_warmup;
  tc.objective = o.objective == "noise" ? TrainObjective::noise_prediction : TrainObjective::mean_regression;
  run.seed = o.seed;
  run.config = {{"data", o.data},        {"format", is_dataset ? "dataset" : "training-set"},
                {"horizon", ck.horizon}, {"steps", tc.steps},
                {"batch", tc.batch},     {"learning_rate", tc.learning_rate},
                {"K", tc.K},             {"n_steps", o.n_steps},
                {"hidden", tc.hidden},   {"ema_decay", tc.ema_decay},
                {"ema_warmup", tc.ema_warmup}, {"objective", o.objective},
                {"check_samples", o.check_samples}};

  TrainResult r = train_toy(ts, tc);
  ck.model = std::move(r.model);
  ck.schedule = r.schedule;
  ck.ddim_steps = o.n_steps;
  run.write("model.json", checkpoint_json(ck));

  std::string curve = "step,loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) curve += std::to_string(i) + "," + fmt("%.17g", r.losses[i]) + "\n";
  run.write("training_curve.csv", curve);

  const std::size_t tail = std::min<std::size_t>(50, r.losses.size());
  double final_loss = 0.0;
  for (std::size_t i = r.losses.size() - tail; i < r.losses.size(); ++i) final_loss += r.losses[i];
  final_loss = tail ? final_loss / static_cast<double>(tail) : 0.0;
  json rep{{"examples", ts.a0.cols()},
           {"action_dim", ts.a0.rows()},
           {"cond_dim", ts.cond.rows()},
           {"steps", tc.steps},
           {"final_loss", final_loss}};
  run.out << "trained on " << ts.a0.cols() << " examples (" << ts.a0.rows() << "-d actions), final loss "
          << fmt("%.5f", final_loss) << "\n";

  if (ts.a0.rows() == 1 && o.check_samples > 0) {
    // Mode check on one-dimensional targets: share of samples on each side of 0 and inside |a| < 0.5.
    const Eigen::MatrixXd cond = ts.cond.col(0).replicate(1, o.check_samples);
    Eigen::MatrixXd x;
    if (tc.objective == TrainObjective::noise_prediction) {
      DdimOptions opts;
      opts.n_steps = o.n_steps;
      x = ddim_sample(ck.model.eps_fn(true), cond, 1, ck.schedule, substream_seed(o.seed, "mode-check"), opts);
    } else {
      x = regress_mean(ck.model, cond);
    }
    const double n = static_cast<double>(x.cols());
    const double neg = (x.array() < 0.0).count() / n, pos = (x.array() > 0.0).count() / n;
    const double dead = (x.array().abs() < 0.5).count() / n;
    const bool bimodal = neg >= 0.35 && neg <= 0.65 && pos >= 0.35 && pos <= 0.65 && dead < 0.5;
    rep["mode_check"] = {{"samples", o.check_samples},
                         {"negative_share", neg},
                         {"positive_share", pos},
                         {"dead_zone_share", dead},
                         {"bimodal", bimodal}};
    run.out << "mode check: " << fmt("%.1f", 100 * neg) << "% below 0, " << fmt("%.1f", 100 * pos)
            << "% above 0, " << fmt("%.1f", 100 * dead) << "% in |a| < 0.5 -> " << (bimodal ? "bimodal" : "not bimodal")
            << "\n";
  }
  run.write("train_report.json", rep.dump(2) + "\n");
}

// ---------------------------------------------------------------- generate-toy

struct ToyOpts {
  std::string kind = "mixture", out, scenario = "nav_reach", label = "relative";
  int n = 4000, episodes = 20;
  double latency_ms = 0.0;
  std::uint64_t seed = 0;
};

void cmd_generate_toy(const ToyOpts& o, Run& run) {
  run.seed = o.seed;
  TrainingSet ts;
  if (o.kind == "expert") {
    EpisodeConfig cfg;
    cfg.executor.frame = label_frame_from_string(o.label);
    cfg.executor.latency = LatencyConfig::scaled_total(o.latency_ms);
    ts = expert_training_set(make_scenario(scenario_from_string(o.scenario)), cfg, o.episodes, o.seed);
    run.config = {{"kind", o.kind}, {"scenario", o.scenario}, {"label", o.label},
                  {"episodes", o.episodes}, {"latency_ms", o.latency_ms}};
  } else {
    ts = toy_training_set(o.kind, o.n, o.seed);
    run.config = {{"kind", o.kind}, {"n", o.n}};
  }
  run.write("training.jsonl", training_set_jsonl(ts));
  run.out << "wrote " << ts.a0.cols() << " examples (" << ts.a0.rows() << "-d targets, " << ts.cond.rows()
          << "-d conditions)\n";
}

// ---------------------------------------------------------------- generate-session

struct SessionOpts {
  std::string scenario = "long_horizon", out;
  std::uint64_t seed = 0;
  double vio_noise = 0.0, vio_rot_noise_deg = 0.0, drift = 0.0, det_noise = 0.0, det_rot_noise_deg = 0.0;
  double demo_speed = 0.0, cov_trace = 1e-4;
  int detections = 30;
  bool no_images = false;
};

void cmd_generate_session(const SessionOpts& o, Run& run) {
  DemoOptions d;
  d.vio_pos_noise = o.vio_noise;
  d.vio_rot_noise = o.vio_rot_noise_deg * kPi / 180.0;
  d.vio_drift = o.drift;
  d.detection_pos_noise = o.det_noise;
  d.detection_rot_noise = o.det_rot_noise_deg * kPi / 180.0;
  d.detections_per_node = o.detections;
  d.demo_speed = o.demo_speed;
  d.cov_trace = o.cov_trace;
  d.images = !o.no_images;
  run.seed = o.seed;
  run.config = {{"scenario", o.scenario},
                {"vio_pos_noise_m", d.vio_pos_noise},
                {"vio_rot_noise_rad", d.vio_rot_noise},
                {"vio_drift", d.vio_drift},
                {"detection_pos_noise_m", d.detection_pos_noise},
                {"detection_rot_noise_rad", d.detection_rot_noise},
                {"detections_per_node", d.detections_per_node},
                {"demo_speed", d.demo_speed},
                {"cov_trace", d.cov_trace},
                {"images", d.images}};
  ExpertDemo demo = scripted_expert(make_scenario(scenario_from_string(o.scenario)), o.seed, d);
  demo.session.id = o.scenario + "-" + std::to_string(o.seed);
  write_session(demo.session, run.out_dir);
  for (const char* f : {"session.json", "vio.jsonl", "extrinsics.json", "markers.jsonl", "images.jsonl"})
    if (fs::exists(run.out_dir / f)) run.track(f);
  DemoDataset truth;
  truth.steps = demo.truth.labels;
  run.write("truth.jsonl", dataset_jsonl(truth));
  auto pose = [](const Pose3& p) {
    return json::array({p.translation.x(), p.translation.y(), p.translation.z(), p.rotation.w(), p.rotation.x(),
                        p.rotation.y(), p.rotation.z()});
  };
  run.write("truth.json", json{{"chest_world_from_hand_world", pose(demo.truth.cross)},
                               {"board_world", pose(demo.truth.board_world)},
                               {"demo_speed", demo.truth.demo_speed},
                               {"steps", demo.truth.labels.size()}}
                              .dump(2) +
                              "\n");
  run.out << "session " << demo.session.id << ": " << demo.truth.labels.size() << " labelled steps, "
          << demo.session.detections.size() << " detections, demo speed " << fmt("%.3f", demo.truth.demo_speed)
          << " m/s\n";
}

// ---------------------------------------------------------------- simulate

struct SimOpts {
  std::string scenario = "long_horizon", policy = "expert", matching = "on", label = "relative", config, out;
  double latency_ms = 142.0, jitter_ms = 0.0;
  int trials = 100, logs = 1;
  std::uint64_t seed = 0;
  bool latency_given = false, jitter_given = false;
};

std::vector<std::string> expand(const std::string& v, const char* a, const char* b) {
  if (v == "both") return {a, b};
  return {v};
}

void cmd_simulate(const SimOpts& o, Run& run) {
  if (o.trials < 1) throw UsageError("simulate: --trials must be at least 1");
  if (o.logs < 0) throw UsageError("simulate: --logs must be non-negative");
  if (o.latency_ms < 0.0 || o.jitter_ms < 0.0) throw UsageError("simulate: latencies must be non-negative");
  const SimScenario sc = make_scenario(scenario_from_string(o.scenario));
  EpisodeConfig cfg;
  if (!o.config.empty()) {
    run.input(o.config);
    cfg = read_episode_config(o.config, cfg);
  }
  if (o.latency_given) {
    const double jitter = cfg.executor.latency.net_jitter_us;
    cfg.executor.latency = LatencyConfig::scaled_total(o.latency_ms);
    cfg.executor.latency.net_jitter_us = jitter;
  }
  if (o.jitter_given) cfg.executor.latency.net_jitter_us = 1000.0 * o.jitter_ms;

  std::vector<Condition> conds;
  for (const std::string& f : expand(o.label, "relative", "global"))
    for (const std::string& m : expand(o.matching, "on", "off")) conds.push_back({label_frame_from_string(f), m == "on"});

  PolicyFactory factory;
  std::shared_ptr<Checkpoint> ck;
  if (o.policy != "expert") {
    run.input(o.policy);
    ck = std::make_shared<Checkpoint>(read_checkpoint(o.policy));
    if (ck->horizon != cfg.executor.horizon)
      throw UsageError("simulate: checkpoint horizon " + std::to_string(ck->horizon) + " does not match T_p " +
                       std::to_string(cfg.executor.horizon));
    const int want = ConditionLayout{kScenarioFeatureDim}.dim();
    if (ck->model.dims().cond_dim != want)
      throw UsageError("simulate: checkpoint expects " + std::to_string(ck->model.dims().cond_dim) +
                       "-d conditions, simulation observations are " + std::to_string(want) + "-d");
    factory = [ck](const EpisodeConfig& c, std::uint64_t seed) -> std::unique_ptr<ChunkPolicy> {
      DiffusionPolicyConfig pc;
      pc.horizon = c.executor.horizon;
      pc.ddim.n_steps = ck->ddim_steps;
      pc.seed = substream_seed(seed, "policy");
      return std::make_unique<DiffusionPolicy>(ck->model, ck->schedule, pc);
    };
  }

  run.seed = o.seed;
  run.config = {{"scenario", o.scenario},
                {"policy", o.policy},
                {"labels", o.label},
                {"matching", o.matching},
                {"trials", o.trials},
                {"logs", o.logs},
                {"latency_ms", static_cast<double>(cfg.executor.latency.total()) / 1000.0},
                {"episode", json::parse(episode_config_json(cfg))}};
  run.write("config.json", episode_config_json(cfg));

  const ComparisonResult res = compare_conditions(sc, cfg, conds, o.trials, o.seed, factory);
  run.write("metrics.csv", metrics_csv(res.episodes));
  const double latency_ms = static_cast<double>(cfg.executor.latency.total()) / 1000.0;
  run.write("summary.json", summary_json(res.summaries, o.scenario, latency_ms));

  for (const Condition& c : conds) {
    EpisodeConfig ec = cfg;
    ec.executor.frame = c.frame;
    ec.executor.matching = c.matching;
    for (int k = 0; k < std::min(o.logs, o.trials); ++k) {
      const std::uint64_t seed = trial_seed(o.seed, k);
      EpisodeResult r;
      if (factory) {
        std::unique_ptr<ChunkPolicy> p = factory(ec, seed);
        r = run_episode(*p, sc, ec, seed);
      } else {
        r = run_expert_episode(sc, ec, seed);
      }
      run.write("logs/" + to_string(c.frame) + "-" + (c.matching ? "on" : "off") + "-" + std::to_string(k) + ".jsonl",
                episode_log_jsonl(r.log));
    }
  }
  for (const ConditionSummary& s : res.summaries) {
    run.out << o.scenario << " " << to_string(s.condition.frame) << "/" << (s.condition.matching ? "on" : "off")
            << " @ " << fmt("%g", latency_ms) << " ms: success " << fmt("%.1f", 100 * s.success_rate) << "% of "
            << s.trials << ", rollbacks " << fmt("%.2f", s.rollbacks_mean) << "/episode, jitter "
            << fmt("%.2f", s.jitter_mean) << "/episode, i* " << fmt("%.2f", s.i_star_mean) << " +- "
            << fmt("%.2f", s.i_star_std) << "\n";
  }
}

// ---------------------------------------------------------------- report

struct ReportOpts {
  std::vector<std::string> metrics;
  std::string out;
};

void cmd_report(const ReportOpts& o, Run& run) {
  std::vector<EpisodeMetrics> rows;
  for (const std::string& m : o.metrics) {
    run.input(m);
    const auto r = read_metrics_csv(m);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  run.config = {{"metrics", o.metrics}};
  const ReportFiles f = render_report(rows);
  run.write("report.md", f.markdown);
  run.write("report.txt", f.text);
  run.write("istar_hist.svg", f.istar_svg);
  run.write("rollbacks_jitter.svg", f.bars_svg);
  run.out << f.text;
}

// ---------------------------------------------------------------- replay

struct ReplayOpts {
  std::string manifest, out;
};

int cmd_replay(const ReplayOpts& o, std::ostream& out, std::ostream& err) {
  const json m = [&] {
    try {
      return json::parse(read_text(o.manifest));
    } catch (const json::exception& e) {
      throw InputError(o.manifest, 0, e.what());
    }
  }();
  std::vector<std::string> argv;
  std::string cwd;
  json outputs;
  try {
    argv = m.at("argv").get<std::vector<std::string>>();
    cwd = m.at("cwd").get<std::string>();
    outputs = m.at("outputs");
  } catch (const json::exception& e) {
    throw InputError(o.manifest, 0, std::string("not a run manifest: ") + e.what());
  }
  if (argv.empty() || argv.front() == "replay") throw UsageError("replay: manifest does not describe a command");
  const fs::path new_out = fs::absolute(o.out);
  bool replaced = false;
  for (std::size_t i = 0; i < argv.size(); ++i) {
    if (argv[i] == "--out" && i + 1 < argv.size()) {
      argv[i + 1] = new_out.string();
      replaced = true;
    } else if (argv[i].rfind("--out=", 0) == 0) {
      argv[i] = "--out=" + new_out.string();
      replaced = true;
    }
  }
  if (!replaced) throw UsageError("replay: manifest argv has no --out");

  const fs::path here = fs::current_path();
  fs::current_path(cwd);
  int code = kExitOk;
  try {
    code = run(argv, out, err);
  } catch (...) {
    fs::current_path(here);
    throw;
  }
  fs::current_path(here);
  if (code != kExitOk) return code;

  int mismatches = 0;
  for (const auto& [rel, hash] : outputs.items()) {
    const fs::path p = new_out / rel;
    const std::string now = fs::exists(p) ? file_hash(p) : std::string("missing");
    if (now != hash.get<std::string>()) {
      ++mismatches;
      err << "replay: " << rel << " differs (" << now << " vs " << hash.get<std::string>() << ")\n";
    }
  }
  if (mismatches > 0) return kExitRejected;
  out << "replay: " << outputs.size() << " outputs byte-identical\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"dex: demonstration processing, toy diffusion training and latency-aware execution in simulation"};
  app.name("dex");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  AnchorOpts ao;
  auto* anchor = app.add_subcommand("anchor", "Anchor a two-node session to its fiducial board");
  anchor->add_option("--session", ao.session, "Session directory (vio.jsonl, extrinsics.json)");
  anchor->add_option("--vio", ao.vio, "Trajectory and detection JSONL");
  anchor->add_option("--extrinsics", ao.extrinsics, "Extrinsics JSON");
  anchor->add_option("--cov-threshold", ao.cov_threshold, "Max covariance trace of a usable detection (m^2)");
  anchor->add_option("--out", ao.out, "Output directory")->required();

  ProcessOpts po;
  auto* process = app.add_subcommand("process", "Turn raw sessions into decoupled 10 Hz datasets");
  process->add_option("--session", po.sessions, "Session directory (repeatable)")->required();
  process->add_option("--anchor", po.anchors, "Anchor JSON per session (repeatable)");
  process->add_option("--calib", po.calib, "Gripper calibration JSON");
  process->add_flag("--no-smoothing", po.no_smoothing, "Disable Savitzky-Golay smoothing");
  process->add_option("--savgol-window", po.savgol_window, "Smoothing window (odd)");
  process->add_option("--savgol-order", po.savgol_order, "Smoothing polynomial order");
  process->add_option("--cov-threshold", po.cov_threshold, "Quality filter covariance trace threshold (m^2)");
  process->add_option("--workspace", po.workspace, "Quality filter half-extent per axis (m)");
  process->add_option("--out", po.out, "Output directory")->required();

  TrainOpts to;
  auto* train = app.add_subcommand("train-toy", "Train the toy denoiser");
  train->add_option("--data", to.data, "Training set or dataset JSONL")->required();
  train->add_option("--horizon", to.horizon, "Chunk length when --data is a dataset")->check(CLI::PositiveNumber);
  train->add_option("--steps", to.steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
  train->add_option("--batch", to.batch, "Batch size")->check(CLI::PositiveNumber);
  train->add_option("--lr", to.lr, "Adam step size");
  train->add_option("--seed", to.seed, "Seed");
  train->add_option("--K", to.K, "Diffusion steps")->check(CLI::PositiveNumber);
  train->add_option("--n-steps", to.n_steps, "DDIM steps at sampling")->check(CLI::PositiveNumber);
  train->add_option("--hidden", to.hidden, "Trunk width")->check(CLI::PositiveNumber);
  train->add_option("--ema-decay", to.ema_decay, "EMA decay");
  train->add_flag("--no-ema-warmup", to.no_ema_warmup, "Use the fixed EMA decay from the first update");
  train->add_option("--objective", to.objective, "noise or mean")->check(CLI::IsMember({"noise", "mean"}));
  train->add_option("--check-samples", to.check_samples, "Samples for the 1-d mode check")->check(CLI::NonNegativeNumber);
  train->add_option("--out", to.out, "Output directory")->required();

  SimOpts so;
  auto* sim = app.add_subcommand("simulate", "Run seeded episodes under label-frame and matching conditions");
  sim->add_option("--scenario", so.scenario, "nav_reach, nav_turn_place, long_horizon or cruise");
  sim->add_option("--policy", so.policy, "expert or a chunk checkpoint");
  sim->add_option("--matching", so.matching, "on, off or both")->check(CLI::IsMember({"on", "off", "both"}));
  sim->add_option("--label", so.label, "relative, global or both")->check(CLI::IsMember({"relative", "global", "both"}));
  auto* lat = sim->add_option("--latency-ms", so.latency_ms, "Total latency; the 33/87/22 ms split is scaled");
  auto* jit = sim->add_option("--latency-jitter-ms", so.jitter_ms, "Std of Gaussian jitter on the network delay");
  sim->add_option("--trials", so.trials, "Trials per condition");
  sim->add_option("--seed", so.seed, "Master seed");
  sim->add_option("--config", so.config, "Simulation config JSON");
  sim->add_option("--logs", so.logs, "Episode logs written per condition");
  sim->add_option("--out", so.out, "Output directory")->required();

  ReportOpts ro;
  auto* report = app.add_subcommand("report", "Summarize metrics CSVs as markdown, text and SVG");
  report->add_option("--metrics", ro.metrics, "Metrics CSV (repeatable)")->required();
  report->add_option("--out", ro.out, "Output directory")->required();

  SessionOpts go;
  auto* gen = app.add_subcommand("generate-session", "Write a scripted-expert demonstration as a raw session");
  gen->add_option("--scenario", go.scenario, "Scenario");
  gen->add_option("--seed", go.seed, "Seed");
  gen->add_option("--vio-noise", go.vio_noise, "White VIO position noise (m)");
  gen->add_option("--vio-rot-noise-deg", go.vio_rot_noise_deg, "White VIO rotation noise (deg)");
  gen->add_option("--drift", go.drift, "VIO position random walk (m/sqrt(s))");
  gen->add_option("--detection-noise", go.det_noise, "Detection position noise (m)");
  gen->add_option("--detection-rot-noise-deg", go.det_rot_noise_deg, "Detection rotation noise (deg)");
  gen->add_option("--detections", go.detections, "Detections per node")->check(CLI::NonNegativeNumber);
  gen->add_option("--demo-speed", go.demo_speed, "Walking speed (m/s); drawn from the seed when 0");
  gen->add_option("--cov-trace", go.cov_trace, "Reported VIO covariance trace (m^2)");
  gen->add_flag("--no-images", go.no_images, "Omit the image index");
  gen->add_option("--out", go.out, "Output session directory")->required();

  ToyOpts yo;
  auto* toy = app.add_subcommand("generate-toy", "Write a training set: toy targets or expert chunks");
  toy->add_option("--kind", yo.kind, "mixture, gaussian or expert")->check(CLI::IsMember({"mixture", "gaussian", "expert"}));
  toy->add_option("--n", yo.n, "Examples (toy kinds)")->check(CLI::PositiveNumber);
  toy->add_option("--episodes", yo.episodes, "Expert episodes")->check(CLI::PositiveNumber);
  toy->add_option("--scenario", yo.scenario, "Scenario (expert kind)");
  toy->add_option("--label", yo.label, "relative or global (expert kind)")->check(CLI::IsMember({"relative", "global"}));
  toy->add_option("--latency-ms", yo.latency_ms, "Latency while recording expert chunks");
  toy->add_option("--seed", yo.seed, "Seed");
  toy->add_option("--out", yo.out, "Output directory")->required();

  ReplayOpts pr;
  auto* replay = app.add_subcommand("replay", "Rerun a manifest and compare output bytes");
  replay->add_option("--manifest", pr.manifest, "manifest.json of an earlier run")->required();
  replay->add_option("--out", pr.out, "Output directory for the rerun")->required();

  std::vector<const char*> cargv{"dex"};
  for (const std::string& a : args) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (replay->parsed()) return cmd_replay(pr, out, err);
    so.latency_given = lat->count() > 0;
    so.jitter_given = jit->count() > 0;

    CLI::App* sub = app.get_subcommands().front();
    std::string out_dir;
    for (auto [app_ptr, dir] : std::initializer_list<std::pair<CLI::App*, std::string*>>{
             {anchor, &ao.out}, {process, &po.out}, {train, &to.out}, {sim, &so.out},
             {report, &ro.out}, {gen, &go.out}, {toy, &yo.out}})
      if (app_ptr == sub) out_dir = *dir;
    require_out(out_dir);
    Run r{sub->get_name(), args, fs::path(out_dir), {}, nullptr, {}, {}, out};
    r.config = json::object();
    r.inputs = json::object();
    r.outputs = json::object();
    fs::create_directories(r.out_dir);

    if (sub == anchor) cmd_anchor(ao, r);
    else if (sub == process) cmd_process(po, r);
    else if (sub == train) cmd_train_toy(to, r);
    else if (sub == sim) cmd_simulate(so, r);
    else if (sub == report) cmd_report(ro, r);
    else if (sub == gen) cmd_generate_session(go, r);
    else if (sub == toy) cmd_generate_toy(yo, r);
    r.manifest();
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainRejected& e) {
    err << "rejected: " << e.what() << "\n";
    return kExitRejected;
  } catch (const AnchorRejected& e) {
    err << "rejected: " << e.what() << "\n";
    return kExitRejected;
  } catch (const TrainingDiverged& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitRejected;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRejected;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRejected;
  }
}

}  // namespace dex::cli
