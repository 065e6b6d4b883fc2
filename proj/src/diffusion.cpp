#include "dex/diffusion.hpp"

#include "dex/action.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace dex {

double NoiseSchedule::at(int k) const {
  if (k < 0 || k > K) {
    throw Error("diffusion step " + std::to_string(k) + " outside [0, " + std::to_string(K) + "]");
  }
  return alpha_bar[static_cast<std::size_t>(k)];
}

NoiseSchedule cosine_schedule(int K, double offset) {
  if (K < 1) throw Error("cosine_schedule: K must be at least 1");
  NoiseSchedule s;
  s.K = K;
  s.offset = offset;
  s.alpha_bar.resize(static_cast<std::size_t>(K) + 1);
  auto f = [&](double u) {
    const double c = std::cos((u + offset) / (1.0 + offset) * kPi / 2.0);
    return c * c;
  };
  const double f0 = f(0.0);
  for (int k = 0; k <= K; ++k) {
    s.alpha_bar[static_cast<std::size_t>(k)] =
        std::clamp(f(static_cast<double>(k) / K) / f0, 1e-5, 1.0);
  }
  return s;
}

Eigen::MatrixXd forward_noise(const Eigen::MatrixXd& a0, int k, const Eigen::MatrixXd& eps,
                              const NoiseSchedule& sched) {
  if (a0.rows() != eps.rows() || a0.cols() != eps.cols()) {
    throw Error("forward_noise: noise shape does not match the clean sample");
  }
  const double ab = sched.at(k);
  return std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps;
}

double mse_loss(const Eigen::MatrixXd& eps, const Eigen::MatrixXd& eps_hat) {
  if (eps.rows() != eps_hat.rows() || eps.cols() != eps_hat.cols()) {
    throw Error("mse_loss: shape mismatch");
  }
  if (eps.size() == 0) throw Error("mse_loss: empty input");
  return (eps - eps_hat).squaredNorm() / static_cast<double>(eps.size());
}

void ema_update(Eigen::Ref<Eigen::VectorXd> shadow, const Eigen::Ref<const Eigen::VectorXd>& params,
                double decay) {
  if (shadow.size() != params.size()) throw Error("ema_update: shape mismatch");
  if (!(decay >= 0.0 && decay < 1.0)) throw Error("ema_update: decay must be in [0, 1)");
  shadow = decay * shadow + (1.0 - decay) * params;
}

std::vector<int> ddim_timesteps(int K, int n_steps) {
  if (n_steps < 1) throw Error("ddim: n_steps must be at least 1");
  if (n_steps > K) {
    throw Error("ddim: n_steps " + std::to_string(n_steps) + " exceeds K " + std::to_string(K));
  }
  std::vector<int> t;
  for (int i = n_steps; i >= 0; --i) t.push_back(i * K / n_steps);
  return t;
}

Eigen::MatrixXd ddim_sample_from(const EpsFn& eps_fn, const Eigen::MatrixXd& cond,
                                 Eigen::MatrixXd x, const NoiseSchedule& sched,
                                 const DdimOptions& opts) {
  const std::vector<int> steps = ddim_timesteps(sched.K, opts.n_steps);
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    const int k = steps[i];
    const double ab = sched.at(k);
    const double ab_prev = sched.at(steps[i + 1]);
    const Eigen::MatrixXd eps = eps_fn(x, k, cond);
    Eigen::MatrixXd x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    if (opts.clip_x0 > 0.0) x0 = x0.cwiseMax(-opts.clip_x0).cwiseMin(opts.clip_x0);
    x = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
  }
  if (opts.action_chunk) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Eigen::VectorXd col = x.col(j);
      canonicalize_action_chunk(col);
      x.col(j) = col;
    }
  }
  return x;
}

Eigen::MatrixXd ddim_sample(const EpsFn& eps_fn, const Eigen::MatrixXd& cond, int dim,
                            const NoiseSchedule& sched, std::uint64_t seed,
                            const DdimOptions& opts) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(dim, cond.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = n(rng);
  }
  return ddim_sample_from(eps_fn, cond, std::move(x), sched, opts);
}

EpsFn gaussian_eps(double mu, double sigma, const NoiseSchedule& sched) {
  return [mu, sigma, sched](const Eigen::MatrixXd& x, int k, const Eigen::MatrixXd&) {
    const double ab = sched.at(k);
    const double var = ab * sigma * sigma + 1.0 - ab;
    return Eigen::MatrixXd((std::sqrt(1.0 - ab) / var) * (x.array() - std::sqrt(ab) * mu).matrix());
  };
}

void canonicalize_action_chunk(Eigen::Ref<Eigen::VectorXd> chunk) {
  if (chunk.size() % kActionDim != 0) {
    throw Error("action chunk length " + std::to_string(chunk.size()) +
                " is not a multiple of " + std::to_string(kActionDim));
  }
  for (Eigen::Index r = 0; r < chunk.size(); r += kActionDim) {
    auto q = chunk.segment<4>(r + action_index::hand_q);
    const double n = q.norm();
    if (n > 0.0 && std::isfinite(n)) {
      q /= n;
    } else {
      q << 1.0, 0.0, 0.0, 0.0;
    }
    if (q[0] < 0.0) q = -q;
  }
}

}  // namespace dex
