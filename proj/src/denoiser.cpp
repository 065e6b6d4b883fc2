#include "dex/denoiser.hpp"

#include "dex/rng.hpp"

#include <cmath>
#include <random>

namespace dex {

std::vector<std::pair<std::string, Eigen::MatrixXd*>> DenoiserParams::entries() {
  return {{"emb_w1", &emb_w1}, {"emb_b1", &emb_b1}, {"emb_w2", &emb_w2}, {"emb_b2", &emb_b2},
          {"film_w", &film_w}, {"film_b", &film_b}, {"w1", &w1},         {"b1", &b1},
          {"w2", &w2},         {"b2", &b2},         {"w3", &w3},         {"b3", &b3}};
}

std::vector<std::pair<std::string, const Eigen::MatrixXd*>> DenoiserParams::entries() const {
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> out;
  for (auto& [name, m] : const_cast<DenoiserParams*>(this)->entries()) out.emplace_back(name, m);
  return out;
}

std::size_t DenoiserParams::size() const {
  std::size_t n = 0;
  for (const auto& e : entries()) n += static_cast<std::size_t>(e.second->size());
  return n;
}

Eigen::VectorXd DenoiserParams::flatten() const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(size()));
  Eigen::Index o = 0;
  for (const auto& e : entries()) {
    v.segment(o, e.second->size()) = e.second->reshaped();
    o += e.second->size();
  }
  return v;
}

void DenoiserParams::assign(const Eigen::VectorXd& flat) {
  if (static_cast<std::size_t>(flat.size()) != size()) throw Error("parameter vector size mismatch");
  Eigen::Index o = 0;
  for (auto& e : entries()) {
    e.second->reshaped() = flat.segment(o, e.second->size());
    o += e.second->size();
  }
}

bool DenoiserParams::same_shapes(const DenoiserParams& other) const {
  const auto a = entries();
  const auto b = other.entries();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].second->rows() != b[i].second->rows() || a[i].second->cols() != b[i].second->cols()) {
      return false;
    }
  }
  return true;
}

bool DenoiserParams::all_finite() const {
  for (const auto& e : entries()) {
    if (!e.second->allFinite()) return false;
  }
  return true;
}

DenoiserParams DenoiserParams::zeros(const DenoiserDims& d) {
  if (d.embed_freq % 2 != 0) throw Error("denoiser: embed_freq must be even");
  const int f_in = d.embed_hidden + d.cond_dim;
  DenoiserParams p;
  p.emb_w1 = Eigen::MatrixXd::Zero(d.embed_hidden, d.embed_freq);
  p.emb_b1 = Eigen::MatrixXd::Zero(d.embed_hidden, 1);
  p.emb_w2 = Eigen::MatrixXd::Zero(d.embed_hidden, d.embed_hidden);
  p.emb_b2 = Eigen::MatrixXd::Zero(d.embed_hidden, 1);
  p.film_w = Eigen::MatrixXd::Zero(4 * d.hidden, f_in);
  p.film_b = Eigen::MatrixXd::Zero(4 * d.hidden, 1);
  p.w1 = Eigen::MatrixXd::Zero(d.hidden, d.action_dim);
  p.b1 = Eigen::MatrixXd::Zero(d.hidden, 1);
  p.w2 = Eigen::MatrixXd::Zero(d.hidden, d.hidden);
  p.b2 = Eigen::MatrixXd::Zero(d.hidden, 1);
  p.w3 = Eigen::MatrixXd::Zero(d.action_dim, d.hidden);
  p.b3 = Eigen::MatrixXd::Zero(d.action_dim, 1);
  return p;
}

DenoiserParams DenoiserParams::random(const DenoiserDims& d, std::uint64_t seed) {
  DenoiserParams p = zeros(d);
  std::mt19937_64 rng = make_rng(seed, "denoiser-init");
  auto fill = [&](Eigen::MatrixXd& m, double gain) {
    const double a = gain * std::sqrt(3.0 / static_cast<double>(m.cols()));
    std::uniform_real_distribution<double> u(-a, a);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  fill(p.emb_w1, 1.0);
  fill(p.emb_w2, 1.0);
  fill(p.film_w, 0.5);
  fill(p.w1, 1.0);
  fill(p.w2, 1.0);
  fill(p.w3, 1.0);
  return p;
}

Eigen::VectorXd step_embedding(int k, int n_features) {
  const int half = n_features / 2;
  Eigen::VectorXd e(n_features);
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    e[i] = std::sin(k * freq);
    e[half + i] = std::cos(k * freq);
  }
  return e;
}

ToyDenoiser::ToyDenoiser(DenoiserDims dims, DenoiserParams params)
    : dims_(dims), params_(std::move(params)), ema_(params_) {
  if (!params_.same_shapes(DenoiserParams::zeros(dims_))) {
    throw Error("denoiser parameters do not match the declared dimensions");
  }
}

ToyDenoiser ToyDenoiser::initialized(const DenoiserDims& dims, std::uint64_t seed) {
  return ToyDenoiser(dims, DenoiserParams::random(dims, seed));
}

void ToyDenoiser::check_inputs(const Eigen::MatrixXd& x, const std::vector<int>& ks,
                               const Eigen::MatrixXd& cond, const DenoiserParams& p) const {
  if (x.rows() != dims_.action_dim) throw Error("denoiser: action dimension mismatch");
  if (cond.rows() != dims_.cond_dim) throw Error("denoiser: condition dimension mismatch");
  if (cond.cols() != x.cols() || static_cast<Eigen::Index>(ks.size()) != x.cols()) {
    throw Error("denoiser: batch size mismatch");
  }
  if (!p.all_finite()) throw Error("denoiser: non-finite parameters");
}

namespace {

struct Activations {
  Eigen::MatrixXd e, a, z, f, film, u1, h1, u2, h2, out;
};

Activations run(const DenoiserDims& d, const DenoiserParams& p, const Eigen::MatrixXd& x,
                const std::vector<int>& ks, const Eigen::MatrixXd& cond) {
  const Eigen::Index B = x.cols();
  const int H = d.hidden;
  Activations s;
  s.e.resize(d.embed_freq, B);
  for (Eigen::Index j = 0; j < B; ++j) s.e.col(j) = step_embedding(ks[j], d.embed_freq);
  s.a = ((p.emb_w1 * s.e).colwise() + p.emb_b1.col(0)).array().tanh();
  s.z = (p.emb_w2 * s.a).colwise() + p.emb_b2.col(0);
  s.f.resize(d.embed_hidden + d.cond_dim, B);
  s.f << s.z, cond;
  s.film = (p.film_w * s.f).colwise() + p.film_b.col(0);
  s.u1 = (p.w1 * x).colwise() + p.b1.col(0);
  s.h1 = ((1.0 + s.film.topRows(H).array()) * s.u1.array() + s.film.middleRows(H, H).array()).tanh();
  s.u2 = (p.w2 * s.h1).colwise() + p.b2.col(0);
  s.h2 = ((1.0 + s.film.middleRows(2 * H, H).array()) * s.u2.array() +
          s.film.bottomRows(H).array())
             .tanh();
  s.out = (p.w3 * s.h2).colwise() + p.b3.col(0);
  return s;
}

}  // namespace

Eigen::MatrixXd ToyDenoiser::forward(const Eigen::MatrixXd& x, const std::vector<int>& ks,
                                     const Eigen::MatrixXd& cond, bool use_ema) const {
  const DenoiserParams& p = use_ema ? ema_ : params_;
  check_inputs(x, ks, cond, p);
  return run(dims_, p, x, ks, cond).out;
}

Eigen::MatrixXd ToyDenoiser::forward_unconditioned(const Eigen::MatrixXd& x, bool use_ema) const {
  const DenoiserParams& p = use_ema ? ema_ : params_;
  if (x.rows() != dims_.action_dim) throw Error("denoiser: action dimension mismatch");
  const Eigen::MatrixXd h1 = ((p.w1 * x).colwise() + p.b1.col(0)).array().tanh();
  const Eigen::MatrixXd h2 = ((p.w2 * h1).colwise() + p.b2.col(0)).array().tanh();
  return (p.w3 * h2).colwise() + p.b3.col(0);
}

double ToyDenoiser::loss_and_gradient(const Eigen::MatrixXd& x, const std::vector<int>& ks,
                                      const Eigen::MatrixXd& cond, const Eigen::MatrixXd& target,
                                      DenoiserParams& g) const {
  const DenoiserParams& p = params_;
  check_inputs(x, ks, cond, p);
  if (target.rows() != x.rows() || target.cols() != x.cols()) {
    throw Error("denoiser: target shape mismatch");
  }
  const int H = dims_.hidden;
  const Activations s = run(dims_, p, x, ks, cond);
  const double loss = mse_loss(target, s.out);
  g = DenoiserParams::zeros(dims_);

  const Eigen::MatrixXd d_out = (2.0 / static_cast<double>(x.size())) * (s.out - target);
  g.w3 = d_out * s.h2.transpose();
  g.b3 = d_out.rowwise().sum();
  const Eigen::ArrayXXd dm2 = (p.w3.transpose() * d_out).array() * (1.0 - s.h2.array().square());

  Eigen::MatrixXd d_film(4 * H, x.cols());
  d_film.middleRows(2 * H, H) = dm2 * s.u2.array();
  d_film.bottomRows(H) = dm2;
  const Eigen::MatrixXd du2 = dm2 * (1.0 + s.film.middleRows(2 * H, H).array());
  g.w2 = du2 * s.h1.transpose();
  g.b2 = du2.rowwise().sum();
  const Eigen::ArrayXXd dm1 = (p.w2.transpose() * du2).array() * (1.0 - s.h1.array().square());

  d_film.topRows(H) = dm1 * s.u1.array();
  d_film.middleRows(H, H) = dm1;
  const Eigen::MatrixXd du1 = dm1 * (1.0 + s.film.topRows(H).array());
  g.w1 = du1 * x.transpose();
  g.b1 = du1.rowwise().sum();

  g.film_w = d_film * s.f.transpose();
  g.film_b = d_film.rowwise().sum();
  const Eigen::MatrixXd dz = (p.film_w.transpose() * d_film).topRows(dims_.embed_hidden);
  g.emb_w2 = dz * s.a.transpose();
  g.emb_b2 = dz.rowwise().sum();
  const Eigen::MatrixXd da = (p.emb_w2.transpose() * dz).array() * (1.0 - s.a.array().square());
  g.emb_w1 = da * s.e.transpose();
  g.emb_b1 = da.rowwise().sum();
  return loss;
}

EpsFn ToyDenoiser::eps_fn(bool use_ema) const {
  return [this, use_ema](const Eigen::MatrixXd& x, int k, const Eigen::MatrixXd& cond) {
    return forward(x, std::vector<int>(static_cast<std::size_t>(x.cols()), k), cond, use_ema);
  };
}

TrainResult train_toy(const TrainingSet& data, const TrainConfig& cfg) {
  const Eigen::Index n = data.a0.cols();
  if (n == 0) throw Error("train_toy: empty dataset");
  if (data.cond.cols() != n) throw Error("train_toy: condition and action counts differ");
  if (cfg.batch < 1 || cfg.steps < 0) throw Error("train_toy: invalid batch size or step count");

  DenoiserDims dims;
  dims.action_dim = static_cast<int>(data.a0.rows());
  dims.cond_dim = static_cast<int>(data.cond.rows());
  dims.hidden = cfg.hidden;
  TrainResult r;
  r.schedule = cosine_schedule(cfg.K);
  r.model = ToyDenoiser::initialized(dims, cfg.seed);

  std::mt19937_64 pick_rng = make_rng(cfg.seed, "train-batch");
  std::mt19937_64 k_rng = make_rng(cfg.seed, "train-step");
  std::mt19937_64 noise_rng = make_rng(cfg.seed, "train-noise");
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  std::uniform_int_distribution<int> pick_k(1, cfg.K);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::VectorXd theta = r.model.params().flatten();
  Eigen::VectorXd shadow = theta;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
  const double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;

  Eigen::MatrixXd x(dims.action_dim, cfg.batch), cond(dims.cond_dim, cfg.batch),
      target(dims.action_dim, cfg.batch);
  std::vector<int> ks(static_cast<std::size_t>(cfg.batch));
  DenoiserParams grad;
  r.losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    for (int j = 0; j < cfg.batch; ++j) {
      const Eigen::Index idx = pick(pick_rng);
      cond.col(j) = data.cond.col(idx);
      if (cfg.objective == TrainObjective::noise_prediction) {
        const int k = pick_k(k_rng);
        ks[static_cast<std::size_t>(j)] = k;
        for (int i = 0; i < dims.action_dim; ++i) target(i, j) = normal(noise_rng);
        const double ab = r.schedule.at(k);
        x.col(j) = std::sqrt(ab) * data.a0.col(idx) + std::sqrt(1.0 - ab) * target.col(j);
      } else {
        ks[static_cast<std::size_t>(j)] = 0;
        x.col(j).setZero();
        target.col(j) = data.a0.col(idx);
      }
    }
    const double loss = r.model.loss_and_gradient(x, ks, cond, target, grad);
    if (!std::isfinite(loss)) {
      throw TrainingDiverged("train_toy: loss became non-finite at step " + std::to_string(step), step);
    }
    r.losses.push_back(loss);
    const Eigen::VectorXd g = grad.flatten();
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(b1, step + 1);
    const double c2 = 1.0 - std::pow(b2, step + 1);
    theta.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + adam_eps);
    r.model.params().assign(theta);
    const double decay =
        cfg.ema_warmup ? std::min(cfg.ema_decay, (1.0 + step) / (10.0 + step)) : cfg.ema_decay;
    ema_update(shadow, theta, decay);
  }
  r.model.ema().assign(shadow);
  return r;
}

Eigen::MatrixXd regress_mean(const ToyDenoiser& model, const Eigen::MatrixXd& cond, bool use_ema) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Zero(model.dims().action_dim, cond.cols());
  return model.forward(x, std::vector<int>(static_cast<std::size_t>(cond.cols()), 0), cond,
                       use_ema);
}

std::vector<std::string> ConditionLayout::field_names() const {
  std::vector<std::string> n{"base_x", "base_y", "base_theta", "hand_px", "hand_py", "hand_pz",
                             "hand_rx", "hand_ry", "hand_rz", "grip",
                             "prev_dx", "prev_dy", "prev_dtheta", "prev_dpx", "prev_dpy",
                             "prev_dpz", "prev_drx", "prev_dry", "prev_drz", "prev_grip"};
  for (int i = 0; i < scenario_dim; ++i) n.push_back("scenario_" + std::to_string(i));
  n.push_back("const");
  return n;
}

Eigen::VectorXd obs_to_condition(const RobotState& s, const Action& prev,
                                 const Eigen::VectorXd& scenario) {
  ConditionLayout layout;
  layout.scenario_dim = static_cast<int>(scenario.size());
  Eigen::VectorXd c(layout.dim());
  c.segment<3>(0) << s.base.x, s.base.y, s.base.theta;
  c.segment<3>(3) = s.hand_rel.translation;
  c.segment<3>(6) = s.hand_rel.rotation.log();
  c[9] = s.grip;
  c.segment<3>(10) << prev.base_delta.x, prev.base_delta.y, prev.base_delta.theta;
  c.segment<3>(13) = prev.hand_dp;
  c.segment<3>(16) = prev.hand_dq.log();
  c[19] = prev.grip;
  c.segment(20, scenario.size()) = scenario;
  c[c.size() - 1] = 1.0;
  return c;
}

std::pair<RobotState, Action> condition_to_obs(const Eigen::VectorXd& c) {
  if (c.size() < ConditionLayout{}.dim()) throw Error("condition vector too short");
  RobotState s;
  s.base = Pose2(c[0], c[1], c[2]);
  s.hand_rel = Pose3(UnitQuat::exp(c.segment<3>(6)), c.segment<3>(3));
  s.grip = c[9];
  Action a;
  a.base_delta = Pose2(c[10], c[11], c[12]);
  a.hand_dp = c.segment<3>(13);
  a.hand_dq = UnitQuat::exp(c.segment<3>(16));
  a.grip = c[19];
  return {s, a};
}

Action null_action() { return Action{}; }

}  // namespace dex
