#include "doctest.h"
#include "test_util.hpp"

#include "dex/denoiser.hpp"
#include "dex/diffusion.hpp"

#include <chrono>
#include <random>

using namespace dex;
using namespace dex::testing;

namespace {

std::vector<double> row(const Eigen::MatrixXd& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

DenoiserDims small_dims() {
  DenoiserDims d;
  d.action_dim = 3;
  d.cond_dim = 2;
  d.hidden = 8;
  d.embed_hidden = 6;
  d.embed_freq = 4;
  return d;
}

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("cosine schedule") {
  const NoiseSchedule s = cosine_schedule(100);
  REQUIRE(s.alpha_bar.size() == 101);
  CHECK(s.alpha_bar[0] == 1.0);
  for (int k = 1; k <= 100; ++k) CHECK(s.alpha_bar[k] < s.alpha_bar[k - 1]);
  CHECK(s.alpha_bar[100] < 0.01);
  // Closed form at an interior point.
  const double c = std::cos((0.5 + 0.008) / 1.008 * kPi / 2), c0 = std::cos(0.008 / 1.008 * kPi / 2);
  CHECK(s.alpha_bar[50] == doctest::Approx(c * c / (c0 * c0)).epsilon(1e-14));
  CHECK_THROWS_AS(cosine_schedule(0), Error);
  CHECK_THROWS_AS(s.at(101), Error);
}

TEST_CASE("forward noise") {
  const NoiseSchedule s = cosine_schedule(100);
  std::mt19937_64 rng(51);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a0(4, 3), eps(4, 3);
  for (Eigen::Index i = 0; i < a0.size(); ++i) {
    a0.data()[i] = n(rng);
    eps.data()[i] = n(rng);
  }
  CHECK(forward_noise(a0, 0, eps, s) == a0);
  CHECK(max_abs(forward_noise(a0, 100, eps, s) - eps) < 0.01);
  const Eigen::MatrixXd ak = forward_noise(a0, 37, eps, s);
  for (Eigen::Index i = 0; i < a0.size(); ++i) {
    const double ab = s.alpha_bar[37];
    CHECK(ak.data()[i] == std::sqrt(ab) * a0.data()[i] + std::sqrt(1 - ab) * eps.data()[i]);
  }
  CHECK_THROWS_AS(forward_noise(a0, 101, eps, s), Error);
  CHECK_THROWS_AS(forward_noise(a0, -1, eps, s), Error);
}

TEST_CASE("forward-process marginals") {
  const NoiseSchedule s = cosine_schedule(100);
  std::mt19937_64 rng(52);
  std::normal_distribution<double> n(0.0, 1.0);
  const double a0 = 1.7;
  for (int k : {5, 30, 60, 95}) {
    std::vector<double> draws;
    for (int i = 0; i < 10000; ++i) {
      Eigen::MatrixXd e(1, 1);
      e(0, 0) = n(rng);
      draws.push_back(forward_noise(Eigen::MatrixXd::Constant(1, 1, a0), k, e, s)(0, 0));
    }
    const double var = 1.0 - s.alpha_bar[k];
    const double stderr_mean = std::sqrt(var / 10000.0);
    CHECK(std::abs(sample_mean(draws) - std::sqrt(s.alpha_bar[k]) * a0) < 3 * stderr_mean);
    CHECK(std::abs(sample_variance(draws) / var - 1.0) < 0.05);
  }
}

TEST_CASE("mse loss") {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(5, 4);
  CHECK(mse_loss(a, a) == 0.0);
  CHECK(mse_loss(a, (a.array() + 1.0).matrix()) == doctest::Approx(1.0).epsilon(1e-15));
  Eigen::MatrixXd b = Eigen::MatrixXd::Random(5, 4);
  double acc = 0.0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) acc += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  }
  CHECK(mse_loss(a, b) == doctest::Approx(acc / 20.0).epsilon(1e-15));
  CHECK_THROWS_AS(mse_loss(a, Eigen::MatrixXd::Zero(4, 5)), Error);
}

TEST_CASE("EMA update") {
  Eigen::VectorXd shadow = Eigen::VectorXd::Constant(3, 2.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 2.0);
  for (int i = 0; i < 10; ++i) ema_update(shadow, c, kDefaultEmaDecay);
  CHECK(shadow == c);
  Eigen::VectorXd p(3);
  p << 1, -2, 3;
  ema_update(shadow, p, 0.0);
  CHECK(shadow == p);
  CHECK(kDefaultEmaDecay == 0.9999);

  // Geometric convergence: error ratio per step equals the decay.
  Eigen::VectorXd s2 = Eigen::VectorXd::Zero(3);
  double prev = (s2 - p).norm();
  for (int i = 0; i < 20; ++i) {
    ema_update(s2, p, 0.9);
    const double err = (s2 - p).norm();
    CHECK(err / prev == doctest::Approx(0.9).epsilon(1e-9));
    prev = err;
  }
  CHECK_THROWS_AS(ema_update(s2, Eigen::VectorXd::Zero(2), 0.5), Error);
  CHECK_THROWS_AS(ema_update(s2, p, 1.0), Error);
}

TEST_CASE("DDIM sub-schedule and determinism") {
  const auto t = ddim_timesteps(100, 10);
  REQUIRE(t.size() == 11);
  CHECK(t.front() == 100);
  CHECK(t[1] == 90);
  CHECK(t.back() == 0);
  CHECK_THROWS_AS(ddim_timesteps(100, 101), Error);

  const NoiseSchedule s = cosine_schedule(100);
  const EpsFn f = gaussian_eps(2.0, 0.5, s);
  const Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(1, 64);
  const Eigen::MatrixXd a = ddim_sample(f, cond, 3, s, 77);
  const Eigen::MatrixXd b = ddim_sample(f, cond, 3, s, 77);
  CHECK(a == b);
  CHECK(a != ddim_sample(f, cond, 3, s, 78));
}

TEST_CASE("DDIM on a Gaussian target follows the closed-form affine map") {
  // With the exact noise predictor every DDIM step is affine in x, so the
  // output is N(b, a^2) for the coefficients accumulated below.
  const NoiseSchedule s = cosine_schedule(100);
  const double mu = 2.0, sigma = 0.5;
  auto affine = [&](int n) {
    double a = 1.0, b = 0.0;
    for (int i = n; i >= 1; --i) {
      const double ab = s.alpha_bar[i * 100 / n], abp = s.alpha_bar[(i - 1) * 100 / n];
      const double v = ab * sigma * sigma + 1.0 - ab;
      const double ea = std::sqrt(1 - ab) / v * a;
      const double eb = std::sqrt(1 - ab) / v * (b - std::sqrt(ab) * mu);
      const double xa = (a - std::sqrt(1 - ab) * ea) / std::sqrt(ab);
      const double xb = (b - std::sqrt(1 - ab) * eb) / std::sqrt(ab);
      a = std::sqrt(abp) * xa + std::sqrt(1 - abp) * ea;
      b = std::sqrt(abp) * xb + std::sqrt(1 - abp) * eb;
    }
    return std::pair{a, b};
  };
  const EpsFn f = gaussian_eps(mu, sigma, s);
  const Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(1, 10000);
  DdimOptions ten, hundred;
  hundred.n_steps = 100;
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(1, 10000);
  const Eigen::MatrixXd x10 = ddim_sample_from(f, cond, z, s, ten);
  const Eigen::MatrixXd x100 = ddim_sample_from(f, cond, z, s, hundred);
  const auto [a10, b10] = affine(10);
  const auto [a100, b100] = affine(100);
  CHECK(max_abs(x10 - (a10 * z.array() + b10).matrix()) < 1e-12);
  CHECK(max_abs(x100 - (a100 * z.array() + b100).matrix()) < 1e-11);

  const auto g10 = row(ddim_sample(f, cond, 1, s, 5, ten));
  const auto g100 = row(ddim_sample(f, cond, 1, s, 5, hundred));
  CHECK(std::abs(sample_mean(g10) - mu) < 0.02 * sigma);
  CHECK(std::abs(sample_mean(g100) - mu) < 0.02 * sigma);
  CHECK(std::abs(sample_variance(g100) / (sigma * sigma) - 1.0) < 0.05);
  CHECK(std::abs(sample_variance(g10) / (a10 * a10) - 1.0) < 0.05);
}

TEST_CASE("final output canonicalizes the quaternion block") {
  const NoiseSchedule s = cosine_schedule(100);
  DdimOptions o;
  o.action_chunk = true;
  const Eigen::MatrixXd out =
      ddim_sample(gaussian_eps(0.0, 1.0, s), Eigen::MatrixXd::Zero(1, 20), 2 * kActionDim, s, 9, o);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (int r = 0; r < 2; ++r) {
      const auto q = out.col(j).segment<4>(r * kActionDim + action_index::hand_q);
      CHECK(q[0] >= 0.0);
      CHECK(std::abs(q.norm() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("denoiser forward identities") {
  DenoiserDims d = small_dims();
  std::mt19937_64 rng(53);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 5);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Random(2, 5);
  const std::vector<int> ks{1, 20, 50, 80, 100};

  DenoiserParams p = DenoiserParams::random(d, 1);
  p.w3.setZero();
  p.b3 << 0.1, -0.2, 0.3;
  const ToyDenoiser biased(d, p);
  const Eigen::MatrixXd out = biased.forward(x, ks, c);
  for (Eigen::Index j = 0; j < 5; ++j) CHECK(out.col(j) == p.b3.col(0));

  DenoiserParams q = DenoiserParams::random(d, 2);
  q.film_w.setZero();
  q.film_b.setZero();
  const ToyDenoiser plain(d, q);
  CHECK(max_abs(plain.forward(x, ks, c) - plain.forward_unconditioned(x)) == 0.0);

  const ToyDenoiser m = ToyDenoiser::initialized(d, 3);
  CHECK(m.forward(x, ks, c) == m.forward(x, ks, c));

  DenoiserParams bad = q;
  bad.w2(0, 0) = std::nan("");
  CHECK_THROWS_AS(ToyDenoiser(d, bad).forward(x, ks, c), Error);
  CHECK_THROWS_AS(m.forward(Eigen::MatrixXd::Zero(4, 5), ks, c), Error);
}

TEST_CASE("analytic gradients match central differences") {
  const DenoiserDims d = small_dims();
  std::mt19937_64 rng(54);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> kd(0, 100);
  double worst = 0.0;
  for (int point = 0; point < 50; ++point) {
    ToyDenoiser m = ToyDenoiser::initialized(d, 1000 + point);
    Eigen::MatrixXd x(3, 4), c(2, 4), eps(3, 4);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(rng);
    // Non-trivial FiLM and bias terms.
    for (auto& [name, mat] : m.params().entries()) {
      if (name.find('b') != std::string::npos && mat->cols() == 1) {
        for (Eigen::Index i = 0; i < mat->size(); ++i) mat->data()[i] = 0.3 * n(rng);
      }
    }
    const std::vector<int> ks{kd(rng), kd(rng), kd(rng), kd(rng)};
    DenoiserParams g;
    m.loss_and_gradient(x, ks, c, eps, g);
    const Eigen::VectorXd analytic = g.flatten();
    Eigen::VectorXd theta = m.params().flatten();
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double keep = theta[i];
      theta[i] = keep + h;
      m.params().assign(theta);
      const double lp = mse_loss(eps, m.forward(x, ks, c));
      theta[i] = keep - h;
      m.params().assign(theta);
      const double lm = mse_loss(eps, m.forward(x, ks, c));
      theta[i] = keep;
      const double numeric = (lp - lm) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
    }
    m.params().assign(theta);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("output-layer gradient vanishes at a stationary point and is linear in the residual") {
  const DenoiserDims d = small_dims();
  const ToyDenoiser m = ToyDenoiser::initialized(d, 4);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 6), c = Eigen::MatrixXd::Random(2, 6);
  const std::vector<int> ks{3, 9, 27, 50, 70, 99};
  const Eigen::MatrixXd out = m.forward(x, ks, c);
  DenoiserParams g0, g1, g2;
  CHECK(m.loss_and_gradient(x, ks, c, out, g0) == 0.0);
  CHECK(g0.w3.norm() == 0.0);
  CHECK(g0.b3.norm() == 0.0);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Random(3, 6);
  m.loss_and_gradient(x, ks, c, out - r, g1);
  m.loss_and_gradient(x, ks, c, out - 2.0 * r, g2);
  CHECK(max_abs(g2.w3 - 2.0 * g1.w3) < 1e-14);
  CHECK(max_abs(g2.b3 - 2.0 * g1.b3) < 1e-14);
}

TEST_CASE("training is deterministic and reduces the loss") {
  TrainingSet data;
  data.cond = Eigen::MatrixXd::Ones(1, 200);
  data.a0.resize(2, 200);
  std::mt19937_64 rng(55);
  std::normal_distribution<double> n(0.0, 0.1);
  for (int i = 0; i < 200; ++i) data.a0.col(i) << 0.5 + n(rng), -0.3 + n(rng);
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.seed = 11;
  const TrainResult a = train_toy(data, cfg);
  const TrainResult b = train_toy(data, cfg);
  CHECK(a.losses == b.losses);
  CHECK(a.model.ema().flatten() == b.model.ema().flatten());
  auto window = [&](int from) {
    double s = 0.0;
    for (int i = from; i < from + 20; ++i) s += a.losses[i];
    return s / 20.0;
  };
  CHECK(window(80) < window(0));
  CHECK(window(280) < window(80));
  CHECK_THROWS_AS(train_toy(TrainingSet{}, cfg), Error);
}

TEST_CASE("single-point target collapses the sampler") {
  TrainingSet data;
  data.cond = Eigen::MatrixXd::Ones(1, 1);
  data.a0 = Eigen::MatrixXd::Constant(1, 1, 0.7);
  TrainConfig cfg;
  cfg.steps = 3000;
  cfg.seed = 12;
  const TrainResult r = train_toy(data, cfg);
  const auto x = row(ddim_sample(r.model.eps_fn(), Eigen::MatrixXd::Ones(1, 2000), 1, r.schedule, 3));
  const double m = sample_mean(x), sd = std::sqrt(sample_variance(x));
  CHECK(std::abs(m - 0.7) < 3 * sd / std::sqrt(2000.0));
  CHECK(sd < 0.5);
}

TEST_CASE("condition flattening") {
  const ConditionLayout layout{3};
  CHECK(layout.dim() == 10 + 10 + 3 + 1);
  CHECK(layout.field_names().size() == static_cast<std::size_t>(layout.dim()));

  const Eigen::VectorXd z = obs_to_condition(RobotState{}, null_action(), Eigen::VectorXd::Zero(3));
  CHECK(z.head(z.size() - 1).norm() == 0.0);
  CHECK(z[z.size() - 1] == 1.0);

  RobotState s;
  s.base = Pose2(1, 2, 0.3);
  s.hand_rel = Pose3(UnitQuat::rot_x(0.2) * UnitQuat::rot_z(-0.4), Vec3(0.3, -0.1, -0.2));
  s.grip = 0.6;
  Action a;
  a.base_delta = Pose2(0.03, 0.0, 0.01);
  a.hand_dp = Vec3(0.01, 0.0, -0.005);
  a.hand_dq = UnitQuat::rot_y(0.02);
  a.grip = 0.6;
  Eigen::VectorXd feat(3);
  feat << 0.5, -1.0, 2.0;
  const Eigen::VectorXd c = obs_to_condition(s, a, feat);
  const auto [s2, a2] = condition_to_obs(c);
  CHECK(dist_se2(s2.base, s.base) < 1e-15);
  CHECK(pose_rotation_error(s2.hand_rel, s.hand_rel) < 1e-12);
  CHECK(pose_translation_error(s2.hand_rel, s.hand_rel) == 0.0);
  CHECK(max_abs(a2.to_vector() - a.to_vector()) < 1e-12);
  CHECK(c.segment<3>(20) == feat);
}

}  // TEST_SUITE
