#pragma once

// Low-dimensional FiLM-conditioned noise predictor with hand-written
// gradients, its trainer, and the observation-to-condition flattening.
//
// Network, per column:
//   e   = sinusoidal(k)                         (embed_freq)
//   z   = W_e2 tanh(W_e1 e + b_e1) + b_e2       (embed_hidden)
//   f   = [z; cond]
//   [dg1; b1f; dg2; b2f] = W_f f + b_f          (4 x hidden)
//   h1  = tanh((1 + dg1) .* (W_1 x + b_1) + b1f)
//   h2  = tanh((1 + dg2) .* (W_2 h1 + b_2) + b2f)
//   out = W_3 h2 + b_3

#include "dex/action.hpp"
#include "dex/diffusion.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dex {

struct DenoiserDims {
  int action_dim = kActionDim;
  int cond_dim = 1;
  int hidden = 64;
  int embed_hidden = 32;
  int embed_freq = 16;  // even
};

struct DenoiserParams {
  Eigen::MatrixXd emb_w1, emb_b1, emb_w2, emb_b2;
  Eigen::MatrixXd film_w, film_b;
  Eigen::MatrixXd w1, b1, w2, b2, w3, b3;

  std::vector<std::pair<std::string, Eigen::MatrixXd*>> entries();
  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> entries() const;

  std::size_t size() const;
  Eigen::VectorXd flatten() const;
  void assign(const Eigen::VectorXd& flat);
  bool same_shapes(const DenoiserParams& other) const;
  bool all_finite() const;

  static DenoiserParams zeros(const DenoiserDims& dims);
  /// Scaled-uniform initialization keyed by seed.
  static DenoiserParams random(const DenoiserDims& dims, std::uint64_t seed);
};

/// sin/cos features of the step index at geometrically spaced frequencies.
Eigen::VectorXd step_embedding(int k, int n_features);

class ToyDenoiser {
 public:
  ToyDenoiser() = default;
  ToyDenoiser(DenoiserDims dims, DenoiserParams params);
  static ToyDenoiser initialized(const DenoiserDims& dims, std::uint64_t seed);

  const DenoiserDims& dims() const { return dims_; }
  const DenoiserParams& params() const { return params_; }
  DenoiserParams& params() { return params_; }
  const DenoiserParams& ema() const { return ema_; }
  DenoiserParams& ema() { return ema_; }

  /// eps_hat for a batch (columns). ks holds one step index per column.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const std::vector<int>& ks,
                          const Eigen::MatrixXd& cond, bool use_ema = false) const;
  /// The trunk alone with FiLM fixed at gamma = 1, beta = 0.
  Eigen::MatrixXd forward_unconditioned(const Eigen::MatrixXd& x, bool use_ema = false) const;

  /// Loss mse(forward(x, ks, cond), target) and its exact gradient.
  double loss_and_gradient(const Eigen::MatrixXd& x, const std::vector<int>& ks,
                           const Eigen::MatrixXd& cond, const Eigen::MatrixXd& target,
                           DenoiserParams& grad) const;

  /// Noise predictor closure over the live or EMA parameters.
  EpsFn eps_fn(bool use_ema = true) const;

 private:
  void check_inputs(const Eigen::MatrixXd& x, const std::vector<int>& ks,
                    const Eigen::MatrixXd& cond, const DenoiserParams& p) const;

  DenoiserDims dims_;
  DenoiserParams params_;
  DenoiserParams ema_;
};

enum class TrainObjective {
  noise_prediction,  // diffusion loss on eps
  mean_regression,   // direct MSE to a0 with x = 0, k = 0 (control baseline)
};

struct TrainConfig {
  int steps = 2000;
  int batch = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  int K = 100;
  double ema_decay = kDefaultEmaDecay;
  /// Use min(ema_decay, (1 + n) / (10 + n)) at update n.
  bool ema_warmup = true;
  int hidden = 64;
  TrainObjective objective = TrainObjective::noise_prediction;
};

/// Columns are examples.
struct TrainingSet {
  Eigen::MatrixXd cond;  // cond_dim x N
  Eigen::MatrixXd a0;    // action_dim x N
};

struct TrainResult {
  ToyDenoiser model;
  NoiseSchedule schedule;
  std::vector<double> losses;  // one per optimizer step
};

/// Thrown by train_toy when the loss becomes non-finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, int step_) : Error(what), step(step_) {}
  int step = 0;
};

/// Adam with a fixed step size, uniform k in [1, K] per example. Throws
/// TrainingDiverged naming the step if the loss becomes non-finite.
TrainResult train_toy(const TrainingSet& data, const TrainConfig& config);

/// Deterministic mean-regression prediction (control baseline).
Eigen::MatrixXd regress_mean(const ToyDenoiser& model, const Eigen::MatrixXd& cond,
                             bool use_ema = true);

// Condition layout, in order:
//   state:        base x, y, theta, hand p (3), hand rotation vector (3), grip  (10)
//   prev action:  dx, dy, dtheta, dp (3), dq rotation vector (3), grip         (10)
//   scenario:     caller-defined features                                      (n)
//   constant:     1                                                             (1)
struct ConditionLayout {
  static constexpr int kStateDim = 10;
  static constexpr int kPrevActionDim = 10;
  int scenario_dim = 0;

  int dim() const { return kStateDim + kPrevActionDim + scenario_dim + 1; }
  std::vector<std::string> field_names() const;
};

Eigen::VectorXd obs_to_condition(const RobotState& state, const Action& prev_action,
                                 const Eigen::VectorXd& scenario_features);

/// Inverse of obs_to_condition for the state and previous-action fields.
std::pair<RobotState, Action> condition_to_obs(const Eigen::VectorXd& cond);

/// Previous-action placeholder for the first step: zero increments, identity
/// rotation, grip 0.
Action null_action();

}  // namespace dex
