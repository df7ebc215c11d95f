#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "repo/behavior.hpp"
#include "repo/optim.hpp"

using namespace repo;
using namespace repo::num;
using namespace repo::behavior;

namespace {

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

std::vector<double> brute_force_returns(const std::vector<double>& r,
                                        const std::vector<double>& v,
                                        double gamma, double lambda) {
  // direct expansion: G_t = sum_{n=1..H-t} weight_n * G^(n)_t with
  // G^(n)_t = sum_{k=0..n-1} gamma^k r_{t+k} + gamma^n v_{t+n}
  const int H = static_cast<int>(r.size());
  std::vector<double> out(H);
  for (int t = 0; t < H; ++t) {
    const int nmax = H - t;
    double total = 0.0;
    for (int n = 1; n <= nmax; ++n) {
      double g = 0.0, disc = 1.0;
      for (int k = 0; k < n; ++k) {
        g += disc * r[t + k];
        disc *= gamma;
      }
      g += disc * v[t + n];
      double w = n == nmax ? std::pow(lambda, n - 1)
                           : (1.0 - lambda) * std::pow(lambda, n - 1);
      total += w * g;
    }
    out[t] = total;
  }
  return out;
}

std::vector<TensorPtr> wrap(const std::vector<double>& xs) {
  std::vector<TensorPtr> out;
  for (double x : xs) out.push_back(make_tensor({1}, {x}));
  return out;
}

}  // namespace

TEST_CASE("lambda returns: degenerate mixing values") {
  std::vector<double> r = {0.5, -0.2, 0.9};
  std::vector<double> v = {0.1, 0.4, -0.3, 0.7};
  const double gamma = 0.9;

  auto one_step = lambda_returns(wrap(r), wrap(v), gamma, 0.0);
  for (int t = 0; t < 3; ++t)
    CHECK(one_step[t]->data[0] ==
          doctest::Approx(r[t] + gamma * v[t + 1]).epsilon(1e-12));

  auto monte_carlo = lambda_returns(wrap(r), wrap(v), gamma, 1.0);
  for (int t = 0; t < 3; ++t) {
    double g = 0.0, disc = 1.0;
    for (int k = t; k < 3; ++k) {
      g += disc * r[k];
      disc *= gamma;
    }
    g += disc * v[3];
    CHECK(monte_carlo[t]->data[0] == doctest::Approx(g).epsilon(1e-12));
  }
}

TEST_CASE("lambda returns match the brute-force expansion") {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const int H = 15;
    std::vector<double> r(H), v(H + 1);
    for (auto& x : r) x = rng.uniform(-1, 1);
    for (auto& x : v) x = rng.uniform(-1, 1);
    double gamma = rng.uniform(0.5, 0.999);
    double lambda = rng.uniform(0.0, 1.0);
    auto fast = lambda_returns(wrap(r), wrap(v), gamma, lambda);
    auto slow = brute_force_returns(r, v, gamma, lambda);
    for (int t = 0; t < H; ++t)
      CHECK(std::abs(fast[t]->data[0] - slow[t]) < 1e-10);
  }
}

TEST_CASE("lambda returns length mismatch raises") {
  CHECK_THROWS(lambda_returns(wrap({1.0, 2.0}), wrap({0.0, 0.0}), 0.9, 0.95));
}

TEST_CASE("critic loss is zero at its own values and leaks no gradient") {
  Rng rng(32);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  ParamStore model_store, critic_store;
  rssm::Rssm model(mcfg, model_store, rng);
  Critic critic(bcfg, mcfg, critic_store, rng);

  Tape tape;
  TapeScope scope(tape);
  std::vector<rssm::RssmState> states;
  std::vector<TensorPtr> targets;
  auto prev = model.initial_state(2);
  for (int t = 0; t < 3; ++t) {
    auto action = make_tensor({2, 2}, rng.normal_vec(4));
    auto [belief, prior] = model.prior_step(prev, action);
    auto noise = make_tensor({2, mcfg.latent_dim},
                             rng.normal_vec(2 * mcfg.latent_dim));
    rssm::RssmState s{belief, dist::gaussian_rsample(prior, noise), prior};
    states.push_back(s);
    targets.push_back(critic.value(s));
    prev = s;
  }

  // targets equal to the critic's own predictions: loss exactly 0
  auto loss = critic_loss(critic, states, targets);
  CHECK(loss->data[0] == 0.0);

  // the detached-targets path sends no gradient into the world model
  auto shifted = targets;
  for (auto& t : shifted) t = add_scalar(t, 0.5);
  auto loss2 = critic_loss(critic, states, shifted);
  tape.backward(loss2);
  for (const auto& [name, t] : model_store.items()) {
    double g = 0.0;
    for (double v : t->grad) g += std::abs(v);
    CHECK(g == 0.0);
  }
  double critic_grad = 0.0;
  for (const auto& [name, t] : critic_store.items())
    for (double v : t->grad) critic_grad += std::abs(v);
  CHECK(critic_grad > 0.0);
}

TEST_CASE("critic regression reaches a constant target") {
  Rng rng(33);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  ParamStore model_store, critic_store;
  rssm::Rssm model(mcfg, model_store, rng);
  Critic critic(bcfg, mcfg, critic_store, rng);

  std::vector<rssm::RssmState> states;
  std::vector<TensorPtr> targets;
  for (int i = 0; i < 16; ++i) {
    rssm::RssmState s;
    s.belief = make_tensor({1, mcfg.belief_dim}, rng.normal_vec(mcfg.belief_dim));
    s.z = make_tensor({1, mcfg.latent_dim}, rng.normal_vec(mcfg.latent_dim));
    s.dist = {s.z, make_tensor({1, mcfg.latent_dim},
                               std::vector<double>(mcfg.latent_dim, 1.0))};
    states.push_back(s);
    targets.push_back(make_tensor({1}, {0.73}));
  }
  Adam opt(AdamConfig{1e-2});
  double final_loss = 1.0;
  for (int step = 0; step < 500; ++step) {
    Tape tape;
    TapeScope scope(tape);
    auto loss = critic_loss(critic, states, targets);
    critic_store.zero_grad();
    tape.backward(loss);
    opt.step(critic_store);
    final_loss = loss->data[0];
  }
  CHECK(final_loss < 1e-3);  // optimum is the constant function
}

TEST_CASE("actor loss H=1 equals the recursion base") {
  Rng rng(34);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  ParamStore model_store, actor_store, critic_store;
  rssm::Rssm model(mcfg, model_store, rng);
  Actor actor(bcfg, mcfg, actor_store, rng);
  Critic critic(bcfg, mcfg, critic_store, rng);

  rssm::PolicyFn policy = [&](const rssm::RssmState& s, Rng& r) {
    return actor.sample(s, r);
  };
  Rng ra(35);
  auto roll = rssm::imagine(model, model.initial_state(2), policy, 1, ra);
  auto loss = actor_loss(model, critic, roll, bcfg);

  double r1 = 0.0, v2 = 0.0;
  auto rh = model.reward_head(roll.states[0]);
  auto vh = critic.value(roll.states[0]);
  for (int b = 0; b < 2; ++b) {
    r1 += rh->data[b] / 2.0;
    v2 += vh->data[b] / 2.0;
  }
  CHECK(loss->data[0] == doctest::Approx(-(r1 + bcfg.gamma * v2)).epsilon(1e-12));
}

TEST_CASE("entropy bonus shifts the actor loss by eta times mean log-prob") {
  Rng rng(44);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  bcfg.entropy_eta = 0.25;
  ParamStore model_store, actor_store, critic_store;
  rssm::Rssm model(mcfg, model_store, rng);
  Actor actor(bcfg, mcfg, actor_store, rng);
  Critic critic(bcfg, mcfg, critic_store, rng);

  std::vector<TensorPtr> log_probs;
  rssm::PolicyFn policy = [&](const rssm::RssmState& s, Rng& r) {
    auto sample = actor.sample_with_log_prob(s, r);
    log_probs.push_back(sample.log_prob);
    return sample.action;
  };
  Rng ra(45);
  auto roll = rssm::imagine(model, model.initial_state(3), policy, 4, ra);
  auto base = actor_loss(model, critic, roll, bcfg);
  auto with = actor_loss(model, critic, roll, bcfg, &log_probs);

  double lp_mean = 0.0;
  for (const auto& lp : log_probs) {
    double m = 0.0;
    for (double v : lp->data) m += v / lp->data.size();
    lp_mean += m / log_probs.size();
  }
  // higher entropy (more negative log-prob) lowers the loss
  CHECK(with->data[0] ==
        doctest::Approx(base->data[0] + bcfg.entropy_eta * lp_mean)
            .epsilon(1e-12));

  // eta = 0 ignores the log-probs entirely
  bcfg.entropy_eta = 0.0;
  auto off = actor_loss(model, critic, roll, bcfg, &log_probs);
  CHECK(off->data[0] == doctest::Approx(base->data[0]).epsilon(1e-12));
}

TEST_CASE("gamma zero leaves only immediate imagined rewards") {
  Rng rng(36);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  bcfg.gamma = 0.0;
  ParamStore model_store, actor_store, critic_store;
  rssm::Rssm model(mcfg, model_store, rng);
  Actor actor(bcfg, mcfg, actor_store, rng);
  Critic critic(bcfg, mcfg, critic_store, rng);

  rssm::PolicyFn policy = [&](const rssm::RssmState& s, Rng& r) {
    return actor.sample(s, r);
  };
  Rng ra(37);
  auto roll = rssm::imagine(model, model.initial_state(3), policy, 4, ra);
  auto loss = actor_loss(model, critic, roll, bcfg);

  double mean_r = 0.0;
  for (const auto& s : roll.states) {
    auto rh = model.reward_head(s);
    for (double v : rh->data) mean_r += v / (3.0 * 4.0);
  }
  CHECK(loss->data[0] == doctest::Approx(-mean_r).epsilon(1e-12));
}

TEST_CASE("actor-critic improves on a fixed random world model") {
  Rng rng(38);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  bcfg.horizon = 6;
  bcfg.actor_lr = 3e-3;
  bcfg.critic_lr = 3e-3;
  ParamStore model_store, actor_store, critic_store;
  rssm::Rssm model(mcfg, model_store, rng);
  Actor actor(bcfg, mcfg, actor_store, rng);
  Critic critic(bcfg, mcfg, critic_store, rng);

  rssm::PolicyFn policy = [&](const rssm::RssmState& s, Rng& r) {
    return actor.sample(s, r);
  };
  auto held_out_loss = [&] {
    NoGradScope ng;
    Rng fixed(4242);
    auto roll = rssm::imagine(model, model.initial_state(16), policy, 6, fixed);
    return actor_loss(model, critic, roll, bcfg)->data[0];
  };

  double before = held_out_loss();
  Adam actor_opt(AdamConfig{bcfg.actor_lr});
  Adam critic_opt(AdamConfig{bcfg.critic_lr});
  Rng train_rng(39);
  for (int step = 0; step < 500; ++step) {
    Tape tape;
    TapeScope scope(tape);
    auto roll = rssm::imagine(model, model.initial_state(8), policy, 6,
                              train_rng);
    auto a_loss = actor_loss(model, critic, roll, bcfg);

    std::vector<TensorPtr> rewards, values;
    for (const auto& s : roll.states) {
      rewards.push_back(model.reward_head(s));
      values.push_back(critic.value(s));
    }
    values.push_back(critic.value(roll.states.back()));
    auto targets = lambda_returns(rewards, values, bcfg.gamma, bcfg.lambda);
    auto c_loss = critic_loss(critic, roll.states, targets);

    actor_store.zero_grad();
    critic_store.zero_grad();
    model_store.zero_grad();
    tape.backward(add(a_loss, c_loss));
    clip_grads_global_norm(actor_store, 100.0);
    clip_grads_global_norm(critic_store, 100.0);
    actor_opt.step(actor_store);
    critic_opt.step(critic_store);
  }
  double after = held_out_loss();
  CHECK(after < before);
}

TEST_CASE("policy_act modes") {
  Rng rng(40);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  ParamStore actor_store;
  Actor actor(bcfg, mcfg, actor_store, rng);

  rssm::RssmState s;
  s.belief = make_tensor({1, mcfg.belief_dim}, rng.normal_vec(mcfg.belief_dim));
  s.z = make_tensor({1, mcfg.latent_dim}, rng.normal_vec(mcfg.latent_dim));

  Rng r1(1), r2(2);
  auto e1 = policy_act(actor, s, ActMode::kEval, r1);
  auto e2 = policy_act(actor, s, ActMode::kEval, r2);
  CHECK(e1->data == e2->data);  // eval ignores the rng

  for (int i = 0; i < 300; ++i) {
    auto a = policy_act(actor, s, ActMode::kExplore, r1);
    for (double v : a->data) {
      CHECK(v > -1.0);
      CHECK(v < 1.0);
    }
  }
}

TEST_CASE("explore actions concentrate on the eval action at the stddev floor") {
  Rng rng(41);
  auto mcfg = tiny_config();
  BehaviorConfig bcfg;
  ParamStore actor_store;
  Actor actor(bcfg, mcfg, actor_store, rng);

  // force the pre-squash stddev to its floor: zero the output layer and
  // push the raw-stddev bias strongly negative
  auto& w = actor_store.get("actor.out.weight");
  std::fill(w->data.begin(), w->data.end(), 0.0);
  auto& b = actor_store.get("actor.out.bias");
  b->data = {0.6, -0.4, -40.0, -40.0};  // means, then raw stddevs

  rssm::RssmState s;
  s.belief = make_tensor({1, mcfg.belief_dim}, rng.normal_vec(mcfg.belief_dim));
  s.z = make_tensor({1, mcfg.latent_dim}, rng.normal_vec(mcfg.latent_dim));

  auto eval_a = policy_act(actor, s, ActMode::kEval, rng);
  const int kDraws = 20000;
  std::array<double, 2> acc{0.0, 0.0};
  for (int i = 0; i < kDraws; ++i) {
    auto a = policy_act(actor, s, ActMode::kExplore, rng);
    acc[0] += a->data[0] / kDraws;
    acc[1] += a->data[1] / kDraws;
  }
  // stddev 0.1 (the floor): the mean explore action is near the eval mode
  CHECK(acc[0] == doctest::Approx(eval_a->data[0]).epsilon(0.03));
  CHECK(acc[1] == doctest::Approx(eval_a->data[1]).epsilon(0.03));
}
