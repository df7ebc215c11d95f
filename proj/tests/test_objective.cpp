#include <cmath>
#include <vector>

#include "doctest.h"
#include "repo/diagnostics.hpp"
#include "repo/objective.hpp"
#include "repo/optim.hpp"

using namespace repo;
using namespace repo::num;
using namespace repo::dist;
using namespace repo::objective;

namespace {

DiagonalGaussian make_gaussian(std::vector<double> mu, std::vector<double> sd,
                               bool requires_grad = false) {
  int n = static_cast<int>(mu.size());
  return {make_tensor({1, n}, std::move(mu), requires_grad),
          make_tensor({1, n}, std::move(sd), requires_grad)};
}

double kl_by_hand(const std::vector<double>& mp, const std::vector<double>& sp,
                  const std::vector<double>& mq, const std::vector<double>& sq) {
  double acc = 0.0;
  for (std::size_t i = 0; i < mp.size(); ++i) {
    acc += std::log(sq[i] / sp[i]) +
           (sp[i] * sp[i] + (mp[i] - mq[i]) * (mp[i] - mq[i])) /
               (2.0 * sq[i] * sq[i]) -
           0.5;
  }
  return acc;
}

rssm::RssmConfig tiny_config() {
  rssm::RssmConfig cfg;
  cfg.obs_dim = 8;
  cfg.action_dim = 2;
  cfg.embed_dim = 6;
  cfg.belief_dim = 5;
  cfg.latent_dim = 3;
  cfg.encoder_hidden = 12;
  cfg.dist_hidden = 12;
  cfg.head_hidden = 12;
  return cfg;
}

}  // namespace

TEST_CASE("balanced KL forward values agree and route gradients by alpha") {
  auto check_alpha = [](double alpha, bool prior_trains, bool post_trains) {
    Tape tape;
    TapeScope scope(tape);
    auto post = make_gaussian({0.7, -0.2}, {0.5, 0.9}, true);
    auto prior = make_gaussian({0.1, 0.3}, {0.8, 0.6}, true);
    auto bkl = balanced_kl(post, prior, alpha);
    CHECK(bkl.grad_path->data[0] ==
          doctest::Approx(bkl.raw->data[0]).epsilon(1e-12));
    tape.backward(sum(bkl.grad_path));
    auto norm = [](const TensorPtr& t) {
      double n = 0.0;
      for (double g : t->grad) n += std::abs(g);
      return n;
    };
    CHECK((norm(prior.mean) > 0.0) == prior_trains);
    CHECK((norm(post.mean) > 0.0) == post_trains);
  };
  check_alpha(1.0, true, false);
  check_alpha(0.0, false, true);
  check_alpha(0.8, true, true);
}

TEST_CASE("alpha derives from the balance ratio") {
  BottleneckConfig cfg;
  cfg.balance_ratio = 5.0;
  CHECK(cfg.alpha() == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("model loss matches a scalar hand computation (B=1, L=2)") {
  Rng rng(21);
  ParamStore store;
  auto cfg = tiny_config();
  rssm::Rssm model(cfg, store, rng);

  rssm::PosteriorRollout rollout;
  std::vector<TensorPtr> rewards;
  std::vector<std::vector<double>> mp = {{0.4, -0.1, 0.2}, {0.0, 0.5, -0.6}};
  std::vector<std::vector<double>> sp = {{0.4, 0.7, 0.3}, {0.5, 0.2, 0.9}};
  std::vector<std::vector<double>> mq = {{0.1, 0.1, 0.1}, {-0.2, 0.2, 0.3}};
  std::vector<std::vector<double>> sq = {{0.6, 0.5, 0.8}, {0.4, 0.6, 0.5}};
  std::vector<double> r = {0.8, 0.3};
  for (int t = 0; t < 2; ++t) {
    rollout.posteriors.push_back(make_gaussian(mp[t], sp[t]));
    rollout.priors.push_back(make_gaussian(mq[t], sq[t]));
    rssm::RssmState s;
    s.belief = make_tensor({1, cfg.belief_dim}, rng.normal_vec(cfg.belief_dim));
    s.z = make_tensor({1, cfg.latent_dim}, mp[t]);
    rollout.states.push_back(s);
    rewards.push_back(make_tensor({1}, {r[t]}));
  }

  BottleneckConfig bcfg;
  bcfg.balance_ratio = 4.0;
  auto beta = DualVariable::from_value(0.37, 1e-3);
  ModelLossMetrics metrics;
  auto loss = repo_model_loss(model, rollout, rewards, beta, bcfg, metrics);

  double hand_ll = 0.0, hand_kl = 0.0;
  for (int t = 0; t < 2; ++t) {
    double pred = model.reward_head(rollout.states[t])->data[0];
    hand_ll += -0.5 * (r[t] - pred) * (r[t] - pred) - 0.5 * kLogTwoPi;
    hand_kl += kl_by_hand(mp[t], sp[t], mq[t], sq[t]);
  }
  hand_ll /= 2.0;
  hand_kl /= 2.0;
  double hand_loss = -hand_ll + beta.value() * hand_kl;
  CHECK(loss->data[0] == doctest::Approx(hand_loss).epsilon(1e-10));
  CHECK(metrics.reward_ll == doctest::Approx(hand_ll).epsilon(1e-10));
  CHECK(metrics.raw_kl_mean == doctest::Approx(hand_kl).epsilon(1e-10));
}

TEST_CASE("beta at its floor reduces the loss to the reward term") {
  Rng rng(22);
  ParamStore store;
  auto cfg = tiny_config();
  rssm::Rssm model(cfg, store, rng);

  rssm::PosteriorRollout rollout;
  rollout.posteriors.push_back(make_gaussian({0.9}, {0.3}));
  rollout.priors.push_back(make_gaussian({-0.4}, {0.7}));
  rssm::RssmState s;
  s.belief = make_tensor({1, cfg.belief_dim}, rng.normal_vec(cfg.belief_dim));
  s.z = make_tensor({1, cfg.latent_dim}, rng.normal_vec(cfg.latent_dim));
  rollout.states.push_back(s);
  std::vector<TensorPtr> rewards = {make_tensor({1}, {0.5})};

  BottleneckConfig bcfg;
  ModelLossMetrics metrics;
  auto beta = DualVariable::from_value(0.0, 1e-3);  // clamps to 1e-8
  CHECK(beta.value() == doctest::Approx(1e-8));
  auto loss = repo_model_loss(model, rollout, rewards, beta, bcfg, metrics);
  CHECK(loss->data[0] ==
        doctest::Approx(-metrics.reward_ll).epsilon(1e-7));
}

TEST_CASE("identical posterior and prior contribute zero KL") {
  Rng rng(23);
  ParamStore store;
  auto cfg = tiny_config();
  rssm::Rssm model(cfg, store, rng);

  rssm::PosteriorRollout rollout;
  auto d = make_gaussian({0.2, -0.5}, {0.4, 0.8});
  rollout.posteriors.push_back(d);
  rollout.priors.push_back(d);
  rssm::RssmState s;
  s.belief = make_tensor({1, cfg.belief_dim}, rng.normal_vec(cfg.belief_dim));
  s.z = make_tensor({1, cfg.latent_dim}, rng.normal_vec(cfg.latent_dim));
  rollout.states.push_back(s);
  std::vector<TensorPtr> rewards = {make_tensor({1}, {0.5})};

  BottleneckConfig bcfg;
  ModelLossMetrics metrics;
  auto beta = DualVariable::from_value(100.0, 1e-3);
  auto loss = repo_model_loss(model, rollout, rewards, beta, bcfg, metrics);
  CHECK(metrics.raw_kl_mean == 0.0);
  CHECK(loss->data[0] == doctest::Approx(-metrics.reward_ll).epsilon(1e-12));
}

TEST_CASE("dual update sign behavior") {
  auto beta = DualVariable::from_value(1e-4, 1e-2);
  double before = beta.value();
  dual_update(beta, 3.0, 3.0);
  CHECK(beta.value() == doctest::Approx(before).epsilon(1e-15));

  dual_update(beta, 4.0, 3.0);
  CHECK(beta.value() > before);

  beta = DualVariable::from_value(1e-4, 1e-2);
  dual_update(beta, 2.0, 3.0);
  CHECK(beta.value() < before);
}

TEST_CASE("dual dynamics are monotone under a stationary constraint value") {
  auto run = [](double c, double epsilon) {
    auto beta = DualVariable::from_value(1e-3, 5e-3);
    std::vector<double> seq;
    for (int i = 0; i < 50; ++i) {
      dual_update(beta, c, epsilon);
      seq.push_back(beta.value());
    }
    return seq;
  };
  auto rising = run(5.0, 3.0);
  for (std::size_t i = 1; i < rising.size(); ++i)
    CHECK(rising[i] > rising[i - 1]);
  auto falling = run(1.0, 3.0);
  for (std::size_t i = 1; i < falling.size(); ++i)
    CHECK(falling[i] < falling[i - 1]);
}

TEST_CASE("beta stays inside its clamp bounds") {
  auto beta = DualVariable::from_value(1.0, 10.0);
  for (int i = 0; i < 100; ++i) dual_update(beta, 100.0, 0.0);
  CHECK(beta.value() <= 1e4 + 1e-9);
  for (int i = 0; i < 200; ++i) dual_update(beta, 0.0, 100.0);
  CHECK(beta.value() >= 1e-8 - 1e-20);
}

TEST_CASE("reconstruction loss extends the base loss by the pixel term") {
  Rng rng(24);
  auto cfg = tiny_config();
  cfg.recon_enabled = true;
  ParamStore store;
  rssm::Rssm model(cfg, store, rng);

  rssm::PosteriorRollout rollout;
  rollout.posteriors.push_back(make_gaussian({0.3}, {0.5}));
  rollout.priors.push_back(make_gaussian({0.0}, {0.6}));
  rssm::RssmState s;
  s.belief = make_tensor({1, cfg.belief_dim}, rng.normal_vec(cfg.belief_dim));
  s.z = make_tensor({1, cfg.latent_dim}, rng.normal_vec(cfg.latent_dim));
  rollout.states.push_back(s);
  std::vector<TensorPtr> rewards = {make_tensor({1}, {0.4})};
  std::vector<TensorPtr> zero_obs = {
      make_tensor({1, cfg.obs_dim}, std::vector<double>(cfg.obs_dim, 0.0))};

  BottleneckConfig bcfg;
  ModelLossMetrics base_metrics, recon_metrics;
  auto unit = DualVariable::from_value(1.0, 0.0);
  auto base = repo_model_loss(model, rollout, rewards, unit, bcfg, base_metrics);
  auto full = recon_model_loss(model, rollout, rewards, zero_obs, bcfg,
                               recon_metrics);
  CHECK(std::isfinite(full->data[0]));
  double pixel_term = -recon_metrics.recon_ll * cfg.obs_dim;
  CHECK(full->data[0] ==
        doctest::Approx(base->data[0] + pixel_term).epsilon(1e-10));
}

TEST_CASE("reward-term ranking of representations is scale invariant") {
  // two fixed feature maps; each gets a refit linear reward probe; scaling
  // the rewards must not change which representation fits them better
  Rng rng(25);
  const int n = 200;
  std::vector<double> good(n * 2), bad(n * 2), rewards(n), scaled(n);
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
    rewards[i] = 0.9 * u - 0.4 * v;
    scaled[i] = 7.0 * rewards[i];
    good[i * 2] = u;
    good[i * 2 + 1] = v;
    bad[i * 2] = rng.normal();  // unrelated features
    bad[i * 2 + 1] = rng.normal();
  }
  auto fit = [&](const std::vector<double>& feats,
                 const std::vector<double>& target) {
    return diag::probe_fit(feats, n, 2, target, 1, diag::ProbeKind::kLinear)[0];
  };
  bool base_order = fit(good, rewards) > fit(bad, rewards);
  bool scaled_order = fit(good, scaled) > fit(bad, scaled);
  CHECK(base_order == scaled_order);
  CHECK(base_order);
}
