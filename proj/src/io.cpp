#include "dex/io.hpp"

#include "dex/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <functional>
#include <type_traits>
#include <fstream>
#include <map>
#include <sstream>

namespace dex {

using nlohmann::json;
namespace fs = std::filesystem;

InputError::InputError(const std::string& f, int l, const std::string& what)
    : Error(l > 0 ? f + ":" + std::to_string(l) + ": " + what : f + ": " + what), file(f), line(l) {}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError(p.string(), 0, "cannot open file");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << content;
  if (!out) throw Error("write failed: " + p.string());
}

std::string content_hash(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::string file_hash(const fs::path& p) { return content_hash(read_text(p)); }

namespace {

json pose_to_json(const Pose3& p) {
  const auto& t = p.translation;
  const auto& q = p.rotation;
  return json::array({t.x(), t.y(), t.z(), q.w(), q.x(), q.y(), q.z()});
}

json pose2_to_json(const Pose2& p) { return json::array({p.x, p.y, p.theta}); }

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

// Field access that names the field on failure; the caller adds the location.
const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw Error(std::string("missing field \"") + name + "\"");
  return j.at(name);
}

double number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) throw Error(std::string("field \"") + name + "\" is not a number");
  return v.get<double>();
}

std::vector<double> numbers(const json& v, std::size_t n, const char* name) {
  if (!v.is_array() || (n > 0 && v.size() != n))
    throw Error(std::string("field \"") + name + "\" must be an array of " + std::to_string(n) + " numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) throw Error(std::string("field \"") + name + "\" holds a non-number");
    out.push_back(x.get<double>());
  }
  return out;
}

Pose3 pose_from_json(const json& j, const char* name) {
  const auto v = numbers(field(j, name), 7, name);
  return Pose3(UnitQuat(v[3], v[4], v[5], v[6]), Vec3(v[0], v[1], v[2]));
}

Pose2 pose2_from_json(const json& j, const char* name) {
  const auto v = numbers(field(j, name), 3, name);
  return Pose2(v[0], v[1], v[2]);
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& name) {
  const auto rows = field(j, "rows").get<Eigen::Index>();
  const auto cols = field(j, "cols").get<Eigen::Index>();
  const auto data = numbers(field(j, "data"), static_cast<std::size_t>(rows * cols), name.c_str());
  Eigen::MatrixXd m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = data[k++];
  return m;
}

json parse_document(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(p.string(), 0, std::string("invalid JSON: ") + e.what());
  }
}

// Calls fn(record) for every non-blank line; errors carry the line number.
template <typename Fn>
void for_each_jsonl(const fs::path& p, Fn fn) {
  std::istringstream in(read_text(p));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw InputError(p.string(), n, e.what());
    } catch (const InputError&) {
      throw;
    } catch (const Error& e) {
      throw InputError(p.string(), n, e.what());
    }
  }
}

template <typename Fn>
auto in_document(const fs::path& p, Fn fn) {
  try {
    return fn(parse_document(p));
  } catch (const InputError&) {
    throw;
  } catch (const json::exception& e) {
    throw InputError(p.string(), 0, e.what());
  } catch (const Error& e) {
    throw InputError(p.string(), 0, e.what());
  }
}

std::string dump_lines(const std::vector<json>& rows) {
  std::string out;
  for (const json& r : rows) out += r.dump() + "\n";
  return out;
}

}  // namespace

VioRecords read_vio_jsonl(const fs::path& p) {
  VioRecords r;
  for_each_jsonl(p, [&](const json& j) {
    const Node node = node_from_string(field(j, "node").get<std::string>());
    const double t = number(j, "t");
    if (j.contains("tag_pose")) {
      r.detections.push_back({node, t, pose_from_json(j, "tag_pose")});
    } else {
      VioSample s{t, pose_from_json(j, "pose"), j.contains("cov_trace") ? number(j, "cov_trace") : 0.0};
      (node == Node::chest ? r.chest : r.hand).samples.push_back(s);
    }
  });
  try {
    r.chest.validate();
    r.hand.validate();
  } catch (const Error& e) {
    throw InputError(p.string(), 0, e.what());
  }
  return r;
}

std::string vio_jsonl(const VioTrajectory& chest, const VioTrajectory& hand,
                      const std::vector<TagDetection>& detections) {
  std::vector<json> rows;
  for (const VioTrajectory* tr : {&chest, &hand})
    for (const VioSample& s : tr->samples)
      rows.push_back({{"node", to_string(tr->node)}, {"t", s.t}, {"pose", pose_to_json(s.pose)},
                      {"cov_trace", s.cov_trace}});
  for (const TagDetection& d : detections)
    rows.push_back({{"node", to_string(d.node)}, {"t", d.t}, {"tag_pose", pose_to_json(d.cam_from_tag)}});
  return dump_lines(rows);
}

std::pair<Extrinsic, Extrinsic> read_extrinsics(const fs::path& p) {
  return in_document(p, [](const json& j) {
    return std::make_pair(Extrinsic{Node::chest, pose_from_json(j, "chest")},
                          Extrinsic{Node::hand, pose_from_json(j, "hand")});
  });
}

std::string extrinsics_json(const Extrinsic& chest, const Extrinsic& hand) {
  return json{{"chest", pose_to_json(chest.imu_from_camera)}, {"hand", pose_to_json(hand.imu_from_camera)}}
             .dump(2) +
         "\n";
}

GripperCalib read_calib(const fs::path& p) {
  return in_document(p, [](const json& j) {
    GripperCalib c{number(j, "d_closed"), number(j, "d_open")};
    c.validate();
    return c;
  });
}

std::string calib_json(const GripperCalib& c) {
  return json{{"d_closed", c.d_closed}, {"d_open", c.d_open}}.dump(2) + "\n";
}

RawSession read_session(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError(dir.string(), 0, "not a session directory");
  RawSession s;
  s.id = dir.filename().string();
  if (s.id.empty()) s.id = dir.parent_path().filename().string();
  if (fs::exists(dir / "session.json"))
    s.id = in_document(dir / "session.json", [](const json& j) { return field(j, "id").get<std::string>(); });
  VioRecords v = read_vio_jsonl(dir / "vio.jsonl");
  s.chest = std::move(v.chest);
  s.hand = std::move(v.hand);
  s.detections = std::move(v.detections);
  std::tie(s.chest_ext, s.hand_ext) = read_extrinsics(dir / "extrinsics.json");
  for_each_jsonl(dir / "markers.jsonl",
                 [&](const json& j) { s.marker_distance.push_back({number(j, "t"), number(j, "distance_m")}); });
  if (fs::exists(dir / "images.jsonl")) {
    for_each_jsonl(dir / "images.jsonl", [&](const json& j) {
      const Node cam = node_from_string(field(j, "camera").get<std::string>());
      Timestamped<std::string> img{number(j, "t"), field(j, "path").get<std::string>()};
      (cam == Node::chest ? s.chest_images : s.hand_images).push_back(img);
    });
  }
  return s;
}

void write_session(const RawSession& s, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "session.json", json{{"id", s.id}}.dump(2) + "\n");
  write_text(dir / "vio.jsonl", vio_jsonl(s.chest, s.hand, s.detections));
  write_text(dir / "extrinsics.json", extrinsics_json(s.chest_ext, s.hand_ext));
  std::vector<json> markers;
  for (const auto& m : s.marker_distance) markers.push_back({{"t", m.t}, {"distance_m", m.value}});
  write_text(dir / "markers.jsonl", dump_lines(markers));
  if (!s.chest_images.empty() || !s.hand_images.empty()) {
    std::vector<json> imgs;
    for (const auto& i : s.chest_images) imgs.push_back({{"camera", "chest"}, {"t", i.t}, {"path", i.value}});
    for (const auto& i : s.hand_images) imgs.push_back({{"camera", "hand"}, {"t", i.t}, {"path", i.value}});
    write_text(dir / "images.jsonl", dump_lines(imgs));
  }
}

namespace {

json node_anchor_json(const NodeAnchor& a) {
  return {{"node", to_string(a.node)},
          {"world_from_tag", pose_to_json(a.world_from_tag)},
          {"detection_count", a.detection_count},
          {"rejected_count", a.rejected_count},
          {"position_rms_m", a.position_rms},
          {"rotation_rms_rad", a.rotation_rms},
          {"ill_conditioned", a.ill_conditioned}};
}

}  // namespace

std::string anchor_json(const AnchorResult& a) {
  return json{{"chest_world_from_hand_world", pose_to_json(a.chest_world_from_hand_world)},
              {"chest", node_anchor_json(a.chest)},
              {"hand", node_anchor_json(a.hand)}}
             .dump(2) +
         "\n";
}

Pose3 read_anchor(const fs::path& p) {
  return in_document(p, [](const json& j) { return pose_from_json(j, "chest_world_from_hand_world"); });
}

std::string dataset_jsonl(const DemoDataset& d) {
  std::vector<json> rows;
  for (const DemoStep& s : d.steps) {
    json r{{"t", s.t}, {"base", pose2_to_json(s.base)}, {"hand_rel", pose_to_json(s.hand_rel)}, {"grip", s.grip}};
    if (s.chest_image) r["chest_image"] = *s.chest_image;
    if (s.hand_image) r["hand_image"] = *s.hand_image;
    rows.push_back(std::move(r));
  }
  return dump_lines(rows);
}

std::vector<DemoStep> read_dataset_jsonl(const fs::path& p) {
  std::vector<DemoStep> steps;
  for_each_jsonl(p, [&](const json& j) {
    DemoStep s;
    s.t = number(j, "t");
    s.base = pose2_from_json(j, "base");
    s.hand_rel = pose_from_json(j, "hand_rel");
    s.grip = number(j, "grip");
    if (j.contains("chest_image")) s.chest_image = j.at("chest_image").get<std::string>();
    if (j.contains("hand_image")) s.hand_image = j.at("hand_image").get<std::string>();
    steps.push_back(std::move(s));
  });
  return steps;
}

std::string training_set_jsonl(const TrainingSet& ts) {
  std::vector<json> rows;
  for (Eigen::Index c = 0; c < ts.a0.cols(); ++c) {
    const Eigen::VectorXd cond = ts.cond.col(c), a0 = ts.a0.col(c);
    rows.push_back({{"cond", std::vector<double>(cond.data(), cond.data() + cond.size())},
                    {"a0", std::vector<double>(a0.data(), a0.data() + a0.size())}});
  }
  return dump_lines(rows);
}

TrainingSet read_training_set(const fs::path& p) {
  std::vector<std::vector<double>> conds, a0s;
  for_each_jsonl(p, [&](const json& j) {
    conds.push_back(numbers(field(j, "cond"), conds.empty() ? 0 : conds.front().size(), "cond"));
    a0s.push_back(numbers(field(j, "a0"), a0s.empty() ? 0 : a0s.front().size(), "a0"));
  });
  TrainingSet ts;
  if (conds.empty()) return ts;
  ts.cond.resize(static_cast<Eigen::Index>(conds.front().size()), static_cast<Eigen::Index>(conds.size()));
  ts.a0.resize(static_cast<Eigen::Index>(a0s.front().size()), static_cast<Eigen::Index>(a0s.size()));
  for (std::size_t i = 0; i < conds.size(); ++i) {
    ts.cond.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(conds[i].data(), ts.cond.rows());
    ts.a0.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(a0s[i].data(), ts.a0.rows());
  }
  return ts;
}

namespace {

constexpr int kCheckpointVersion = 1;

json params_json(const DenoiserParams& p) {
  json out = json::object();
  for (const auto& [name, m] : p.entries()) out[name] = matrix_to_json(*m);
  return out;
}

void params_from_json(const json& j, DenoiserParams& p) {
  for (auto& [name, m] : p.entries()) {
    const Eigen::MatrixXd v = matrix_from_json(field(j, name.c_str()), name);
    if (v.rows() != m->rows() || v.cols() != m->cols()) throw Error("parameter " + name + " has the wrong shape");
    *m = v;
  }
}

}  // namespace

std::string checkpoint_json(const Checkpoint& c) {
  const DenoiserDims& d = c.model.dims();
  ConditionLayout layout{c.scenario_dim};
  json j{{"format", "dex-toy-denoiser"},
         {"version", kCheckpointVersion},
         {"dims",
          {{"action_dim", d.action_dim},
           {"cond_dim", d.cond_dim},
           {"hidden", d.hidden},
           {"embed_hidden", d.embed_hidden},
           {"embed_freq", d.embed_freq}}},
         {"schedule", {{"K", c.schedule.K}, {"offset", c.schedule.offset}, {"ddim_steps", c.ddim_steps}}},
         {"horizon", c.horizon},
         {"condition", {{"scenario_dim", c.scenario_dim}}},
         {"params", params_json(c.model.params())},
         {"ema", params_json(c.model.ema())}};
  if (c.horizon > 0) j["condition"]["fields"] = layout.field_names();
  return j.dump() + "\n";
}

Checkpoint read_checkpoint(const fs::path& p) {
  return in_document(p, [](const json& j) {
    if (field(j, "format").get<std::string>() != "dex-toy-denoiser") throw Error("not a toy denoiser checkpoint");
    const int version = field(j, "version").get<int>();
    if (version != kCheckpointVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
    const json& dj = field(j, "dims");
    DenoiserDims d;
    d.action_dim = field(dj, "action_dim").get<int>();
    d.cond_dim = field(dj, "cond_dim").get<int>();
    d.hidden = field(dj, "hidden").get<int>();
    d.embed_hidden = field(dj, "embed_hidden").get<int>();
    d.embed_freq = field(dj, "embed_freq").get<int>();
    DenoiserParams params = DenoiserParams::zeros(d), ema = DenoiserParams::zeros(d);
    params_from_json(field(j, "params"), params);
    params_from_json(field(j, "ema"), ema);
    Checkpoint c;
    c.model = ToyDenoiser(d, params);
    c.model.ema() = ema;
    const json& sj = field(j, "schedule");
    c.schedule = cosine_schedule(field(sj, "K").get<int>(), number(sj, "offset"));
    c.ddim_steps = field(sj, "ddim_steps").get<int>();
    c.horizon = field(j, "horizon").get<int>();
    c.scenario_dim = field(field(j, "condition"), "scenario_dim").get<int>();
    return c;
  });
}

namespace {

json command_json(const PlantCommand& c) {
  return {{"v", c.v},
          {"omega", c.omega},
          {"v_lat", c.v_lat},
          {"hand_target", pose_to_json(c.hand_target)},
          {"grip_target", c.grip_target}};
}

struct PayloadJson {
  json operator()(const CommandEvent& e) const {
    return {{"chunk", e.chunk},
            {"index", e.index},
            {"issue_us", e.issue_us},
            {"effect_us", e.effect_us},
            {"command", command_json(e.command)},
            {"target_base", pose2_to_json(e.target_base)},
            {"along_track", e.along_track},
            {"chunk_forward", e.chunk_forward},
            {"rollback", e.rollback}};
  }
  json operator()(const SpliceEvent& e) const {
    const MatchTerms& m = e.report.terms;
    return {{"chunk", e.chunk},
            {"matching", e.matching},
            {"report",
             {{"i_star", e.report.i_star},
              {"discarded", e.report.discarded},
              {"terms", {{"base", m.base}, {"translation", m.translation}, {"rotation", m.rotation}, {"grip", m.grip}}},
              {"match_ns", e.report.match_ns}}},
            {"remaining", e.remaining},
            {"replan", e.replan}};
  }
  json operator()(const PlanRequestEvent& e) const {
    return {{"chunk", e.chunk}, {"obs_us", e.obs_us}, {"request_us", e.request_us}, {"arrival_us", e.arrival_us}};
  }
  json operator()(const PlanArrivalEvent& e) const {
    return {{"chunk", e.chunk}, {"request_us", e.request_us}, {"arrival_us", e.arrival_us}, {"warm_start", e.warm_start}};
  }
};

}  // namespace

std::string episode_log_jsonl(const EpisodeLog& log) {
  std::string out;
  for (const LogEvent& e : log.events) {
    json r{{"tick", e.tick}, {"t_us", e.t_us}, {"kind", e.kind()}, {"payload", std::visit(PayloadJson{}, e.payload)}};
    out += r.dump() + "\n";
  }
  return out;
}

namespace {

// One named scalar of the config tree. Integers are stored as doubles in
// the binding and converted on assignment.
struct Binding {
  std::string section, key;
  std::function<json()> get;
  std::function<void(const json&)> set;
};

template <typename T>
Binding bind(const std::string& section, const std::string& key, T& ref) {
  return {section, key, [&ref] { return json(ref); },
          [&ref, key](const json& v) {
            if constexpr (std::is_same_v<T, bool>) {
              if (!v.is_boolean()) throw Error("\"" + key + "\" must be true or false");
            } else {
              if (!v.is_number()) throw Error("\"" + key + "\" must be a number");
            }
            ref = v.get<T>();
          }};
}

Binding bind_vec3(const std::string& section, const std::string& key, Vec3& ref) {
  return {section, key, [&ref] { return json::array({ref.x(), ref.y(), ref.z()}); },
          [&ref, key](const json& v) {
            const auto x = numbers(v, 3, key.c_str());
            ref = Vec3(x[0], x[1], x[2]);
          }};
}

std::vector<Binding> bindings(EpisodeConfig& c) {
  PlantConfig& p = c.plant;
  ExecutorConfig& e = c.executor;
  TrackerConfig& t = c.tracker;
  ExpertConfig& x = c.expert;
  return {bind("plant", "tau_base", p.tau_base),
          bind("plant", "tau_arm", p.tau_arm),
          bind("plant", "lateral_clip", p.lateral_clip),
          bind("plant", "lateral_tau", p.lateral_tau),
          bind("plant", "substep", p.substep),
          bind("plant", "v_max", p.v_max),
          bind("plant", "omega_max", p.omega_max),
          bind("plant", "grip_rate", p.grip_rate),
          bind_vec3("plant", "reach_min", p.reach_min),
          bind_vec3("plant", "reach_max", p.reach_max),
          bind("executor", "horizon", e.horizon),
          bind("executor", "action_horizon", e.action_horizon),
          bind("executor", "dt_us", e.dt_us),
          bind("executor", "w_b", e.weights.w_b),
          bind("executor", "w_t", e.weights.w_t),
          bind("executor", "w_r", e.weights.w_r),
          bind("executor", "w_g", e.weights.w_g),
          bind("executor", "fold_radius", e.weights.fold_radius),
          bind("executor", "in_us", e.latency.in_us),
          bind("executor", "net_us", e.latency.net_us),
          bind("executor", "exe_us", e.latency.exe_us),
          bind("executor", "net_jitter_us", e.latency.net_jitter_us),
          bind("executor", "rollback_threshold", e.rollback_threshold),
          bind("executor", "jitter_window_ticks", e.jitter_window_ticks),
          bind("tracker", "grasp_tol", t.grasp_tol),
          bind("tracker", "place_tol", t.place_tol),
          bind("tracker", "closed_below", t.closed_below),
          bind("tracker", "open_above", t.open_above),
          bind("tracker", "retract_tol", t.retract_tol),
          bind("tracker", "stop_speed", t.stop_speed),
          bind("tracker", "envelope_tol", t.envelope_tol),
          bind("tracker", "moving_speed", t.moving_speed),
          bind("expert", "accel", x.accel),
          bind("expert", "omega_max", x.omega_max),
          bind("expert", "alpha", x.alpha),
          bind("expert", "approach_gain", x.approach_gain),
          bind("expert", "turn_in_place", x.turn_in_place),
          bind("expert", "hand_step", x.hand_step),
          bind("expert", "hand_rot_step", x.hand_rot_step),
          bind("expert", "grip_close_dist", x.grip_close_dist),
          bind("expert", "bob_amplitude", x.bob_amplitude),
          bind("expert", "stride", x.stride),
          bind("expert", "v_cruise", x.v_cruise),
          bind("episode", "locomotion_variation", c.locomotion_variation),
          bind("episode", "demo_speed_lo", c.demo_speed_lo),
          bind("episode", "demo_speed_hi", c.demo_speed_hi),
          bind("episode", "slip_lo", c.slip_lo),
          bind("episode", "slip_hi", c.slip_hi),
          bind("episode", "randomize_start", c.randomize_start)};
}

}  // namespace

std::string episode_config_json(const EpisodeConfig& cfg) {
  EpisodeConfig c = cfg;
  json out = json::object();
  for (const Binding& b : bindings(c)) out[b.section][b.key] = b.get();
  return out.dump(2) + "\n";
}

EpisodeConfig read_episode_config(const fs::path& p, EpisodeConfig base) {
  return in_document(p, [&](const json& j) {
    if (!j.is_object()) throw Error("config must be a JSON object");
    std::vector<Binding> bs = bindings(base);
    for (const auto& [section, body] : j.items()) {
      if (!body.is_object()) throw Error("section \"" + section + "\" must be an object");
      for (const auto& [key, value] : body.items()) {
        auto it = std::find_if(bs.begin(), bs.end(),
                               [&](const Binding& b) { return b.section == section && b.key == key; });
        if (it == bs.end()) throw Error("unknown config key " + section + "." + key);
        it->set(value);
      }
    }
    base.plant.validate();
    base.executor.validate();
    return base;
  });
}

std::string summary_json(const std::vector<ConditionSummary>& summaries, const std::string& scenario,
                         double latency_ms) {
  json conds = json::array();
  for (const ConditionSummary& s : summaries) {
    conds.push_back({{"frame", to_string(s.condition.frame)},
                     {"matching", s.condition.matching ? "on" : "off"},
                     {"trials", s.trials},
                     {"success_rate", s.success_rate},
                     {"mean_time_s", s.mean_time},
                     {"rollbacks_mean", s.rollbacks_mean},
                     {"jitter_mean", s.jitter_mean},
                     {"i_star_mean", s.i_star_mean},
                     {"i_star_std", s.i_star_std},
                     {"failures", s.failures}});
  }
  return json{{"scenario", scenario}, {"latency_ms", latency_ms}, {"conditions", conds}}.dump(2) + "\n";
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<EpisodeMetrics> read_metrics_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line)) throw InputError(p.string(), 1, "empty metrics file");
  const std::vector<std::string> header = split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* need : {"seed", "scenario", "frame", "matching", "latency_ms", "success", "failure",
                           "completion_time", "splices", "rollbacks", "jitter", "i_star_mean", "i_star_std"})
    if (!col.count(need)) throw InputError(p.string(), 1, std::string("missing column \"") + need + "\"");
  std::vector<EpisodeMetrics> rows;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = split_csv(line);
    if (f.size() != header.size())
      throw InputError(p.string(), n, "expected " + std::to_string(header.size()) + " fields, got " +
                                          std::to_string(f.size()));
    try {
      auto get = [&](const char* c) -> const std::string& { return f[col.at(c)]; };
      EpisodeMetrics m;
      m.seed = std::stoull(get("seed"));
      m.scenario = get("scenario");
      m.frame = get("frame");
      m.matching = get("matching") == "on";
      m.latency_ms = std::stod(get("latency_ms"));
      m.success = get("success") == "1";
      m.failure = get("failure");
      m.completion_time = std::stod(get("completion_time"));
      if (col.count("stages_done")) m.stages_done = std::stoi(get("stages_done"));
      m.splices = std::stoi(get("splices"));
      m.rollbacks = std::stoi(get("rollbacks"));
      m.jitter = std::stoi(get("jitter"));
      m.i_star_mean = std::stod(get("i_star_mean"));
      m.i_star_std = std::stod(get("i_star_std"));
      if (col.count("tracking_rms")) m.tracking_rms = std::stod(get("tracking_rms"));
      if (col.count("demo_speed")) m.demo_speed = std::stod(get("demo_speed"));
      if (col.count("peak_accel")) m.peak_accel = std::stod(get("peak_accel"));
      if (col.count("i_stars")) {
        std::istringstream is(get("i_stars"));
        for (int v; is >> v;) m.i_stars.push_back(v);
      }
      rows.push_back(std::move(m));
    } catch (const std::logic_error& e) {
      throw InputError(p.string(), n, std::string("bad number: ") + e.what());
    }
  }
  return rows;
}

}  // namespace dex
