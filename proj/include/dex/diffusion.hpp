#pragma once

// Noise schedule, forward process, loss, EMA and the deterministic DDIM
// sampler. The sampler works against any noise predictor exposed as EpsFn.

#include "dex/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <vector>

namespace dex {

struct NoiseSchedule {
  int K = 100;
  double offset = 0.008;
  std::vector<double> alpha_bar;  // K + 1 entries, alpha_bar[0] = 1

  double at(int k) const;
};

/// alpha_bar[k] = cos^2(((k/K + s)/(1+s)) pi/2) / cos^2((s/(1+s)) pi/2),
/// clipped to [1e-5, 1].
NoiseSchedule cosine_schedule(int K = 100, double offset = 0.008);

/// a^k = sqrt(alpha_bar_k) a0 + sqrt(1 - alpha_bar_k) eps, element-wise.
Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& a0, int k, const Eigen::MatrixXd& eps,
                              const NoiseSchedule& sched);

/// Mean of squared element differences.
double mse_loss(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat);

/// shadow <- decay * shadow + (1 - decay) * params.
void ema_update(Eigen::Ref<Eigen::VectorXd> shadow, const Eigen::Ref<const Eigen::VectorXd>& params,
                double decay);

inline constexpr double kDefaultEmaDecay = 0.9999;

/// Noise predictor on a batch: x is dim x B, cond is cond_dim x B, every
/// column at diffusion step k.
using EpsFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, int k,
                                            const Eigen::MatrixXd& cond)>;

struct DdimOptions {
  int n_steps = 10;
  /// Clamp the x0 estimate to +-clip_x0 at every step when > 0.
  double clip_x0 = 0.0;
  /// Treat each column as an action chunk (multiple of 11 rows) and
  /// renormalize/canonicalize its quaternion blocks in the final output.
  bool action_chunk = false;
};

/// Descending visit order: K = tau_n > ... > tau_1 > tau_0 = 0 with
/// tau_i = (i K) / n (integer division).
std::vector<int> ddim_timesteps(int K, int n_steps);

/// Deterministic (eta = 0) DDIM from unit Gaussian noise drawn from seed.
/// Column j of the initial noise is the j-th block of dim draws.
Eigen::MatrixXd ddim_sample(const EpsFn& eps_fn, const Eigen::MatrixXd& cond, int dim,
                            const NoiseSchedule& sched, std::uint64_t seed,
                            const DdimOptions& opts = {});

/// Same iteration from a caller-supplied starting noise.
Eigen::MatrixXd ddim_sample_from(const EpsFn& eps_fn, const Eigen::MatrixXd& cond,
                                 Eigen::MatrixXd x, const NoiseSchedule& sched,
                                 const DdimOptions& opts = {});

/// Exact noise predictor for an element-wise Gaussian target N(mu, sigma^2):
/// eps_hat = sqrt(1 - ab) (x - sqrt(ab) mu) / (ab sigma^2 + 1 - ab).
EpsFn gaussian_eps(double mu, double sigma, const NoiseSchedule& sched);

/// In-place renormalization with w >= 0 of every 11-row quaternion block.
void canonicalize_action_chunk(Eigen::Ref<Eigen::VectorXd> chunk);

}  // namespace dex
