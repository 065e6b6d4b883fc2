#include "dex/policy.hpp"

#include "dex/rng.hpp"

#include <random>
#include <string>

namespace dex {

DiffusionPolicy::DiffusionPolicy(ToyDenoiser model, NoiseSchedule schedule, DiffusionPolicyConfig cfg)
    : model_(std::move(model)), schedule_(std::move(schedule)), cfg_(cfg) {
  if (cfg_.horizon <= 0) throw Error("diffusion policy: horizon must be positive");
  if (model_.dims().action_dim != kActionDim * cfg_.horizon)
    throw Error("diffusion policy: model action_dim " + std::to_string(model_.dims().action_dim) +
                " does not match 11 x horizon " + std::to_string(cfg_.horizon));
  eps_ = model_.eps_fn(cfg_.use_ema);
}

std::vector<Action> DiffusionPolicy::plan(const Observation& obs) {
  const Eigen::VectorXd cond = obs_to_condition(obs.state, obs.prev_action, obs.features);
  if (cond.size() != model_.dims().cond_dim)
    throw Error("diffusion policy: condition has " + std::to_string(cond.size()) + " entries, model expects " +
                std::to_string(model_.dims().cond_dim));
  DdimOptions opts = cfg_.ddim;
  opts.action_chunk = true;
  const std::uint64_t seed = substream_seed(cfg_.seed, "plan-" + std::to_string(obs.t_us));
  const Eigen::MatrixXd x = ddim_sample(eps_, cond, model_.dims().action_dim, schedule_, seed, opts);
  return unflatten_chunk(x.col(0));
}

Eigen::VectorXd flatten_chunk(const std::vector<Action>& chunk) {
  Eigen::VectorXd v(kActionDim * static_cast<Eigen::Index>(chunk.size()));
  for (std::size_t i = 0; i < chunk.size(); ++i)
    v.segment<kActionDim>(kActionDim * static_cast<Eigen::Index>(i)) = chunk[i].to_vector();
  return v;
}

std::vector<Action> unflatten_chunk(const Eigen::VectorXd& flat) {
  if (flat.size() == 0 || flat.size() % kActionDim != 0)
    throw Error("chunk vector length " + std::to_string(flat.size()) + " is not a multiple of 11");
  std::vector<Action> out;
  for (Eigen::Index i = 0; i < flat.size(); i += kActionDim)
    out.push_back(Action::from_vector(flat.segment<kActionDim>(i)));
  return out;
}

TrainingSet chunk_training_set(const DemoDataset& dataset, int horizon) {
  if (horizon <= 0) throw Error("training set: horizon must be positive");
  const std::vector<Action> labels = make_action_labels(dataset);
  const int n = static_cast<int>(labels.size()) - horizon + 1;
  TrainingSet ts;
  if (n <= 0) return ts;
  const Eigen::VectorXd none;
  ts.cond.resize(ConditionLayout{}.dim(), n);
  ts.a0.resize(kActionDim * horizon, n);
  for (int t = 0; t < n; ++t) {
    const Action prev = t == 0 ? null_action() : labels[t - 1];
    ts.cond.col(t) = obs_to_condition(dataset.steps[t].state(), prev, none);
    ts.a0.col(t) = flatten_chunk({labels.begin() + t, labels.begin() + t + horizon});
  }
  return ts;
}

namespace {

class RecordingPolicy : public ChunkPolicy {
 public:
  explicit RecordingPolicy(ChunkPolicy& inner) : inner_(inner) {}
  std::vector<Action> plan(const Observation& obs) override {
    std::vector<Action> chunk = inner_.plan(obs);
    conds.push_back(obs_to_condition(obs.state, obs.prev_action, obs.features));
    chunks.push_back(flatten_chunk(chunk));
    return chunk;
  }
  std::vector<Eigen::VectorXd> conds, chunks;

 private:
  ChunkPolicy& inner_;
};

}  // namespace

TrainingSet expert_training_set(const SimScenario& sc, const EpisodeConfig& cfg, int episodes,
                                std::uint64_t seed) {
  if (episodes <= 0) throw Error("training set: episode count must be positive");
  std::vector<Eigen::VectorXd> conds, chunks;
  for (int k = 0; k < episodes; ++k) {
    const std::uint64_t s = trial_seed(seed, k);
    const EpisodeDraw draw = draw_episode(sc, cfg, s);
    ExpertConfig ec = cfg.expert;
    ec.v_cruise = draw.demo_speed;
    ec.horizon = cfg.executor.horizon;
    ec.dt = cfg.executor.dt();
    ExpertPlanner expert(sc, ec, cfg.executor.frame, sc.chest_height);
    RecordingPolicy rec(expert);
    run_episode(rec, sc, cfg, s);
    conds.insert(conds.end(), rec.conds.begin(), rec.conds.end());
    chunks.insert(chunks.end(), rec.chunks.begin(), rec.chunks.end());
  }
  TrainingSet ts;
  if (conds.empty()) return ts;
  ts.cond.resize(conds.front().size(), static_cast<Eigen::Index>(conds.size()));
  ts.a0.resize(chunks.front().size(), static_cast<Eigen::Index>(chunks.size()));
  for (std::size_t i = 0; i < conds.size(); ++i) {
    ts.cond.col(static_cast<Eigen::Index>(i)) = conds[i];
    ts.a0.col(static_cast<Eigen::Index>(i)) = chunks[i];
  }
  return ts;
}

TrainingSet toy_training_set(const std::string& kind, int n, std::uint64_t seed) {
  if (n <= 0) throw Error("toy data: sample count must be positive");
  auto rng = make_rng(seed, "toy-data");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  TrainingSet ts;
  ts.cond = Eigen::MatrixXd::Ones(1, n);
  ts.a0.resize(1, n);
  for (int i = 0; i < n; ++i) {
    if (kind == "mixture") {
      ts.a0(0, i) = (coin(rng) ? 1.0 : -1.0) + 0.1 * normal(rng);
    } else if (kind == "gaussian") {
      ts.a0(0, i) = 2.0 + 0.5 * normal(rng);
    } else {
      throw Error("toy data: unknown kind \"" + kind + "\"");
    }
  }
  return ts;
}

TrainingSet concat(const TrainingSet& a, const TrainingSet& b) {
  if (a.a0.cols() == 0) return b;
  if (b.a0.cols() == 0) return a;
  if (a.cond.rows() != b.cond.rows() || a.a0.rows() != b.a0.rows())
    throw Error("training sets have different shapes");
  TrainingSet out;
  out.cond.resize(a.cond.rows(), a.cond.cols() + b.cond.cols());
  out.a0.resize(a.a0.rows(), a.a0.cols() + b.a0.cols());
  out.cond << a.cond, b.cond;
  out.a0 << a.a0, b.a0;
  return out;
}

}  // namespace dex
