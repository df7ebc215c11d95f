#include "repo/behavior.hpp"

#include <stdexcept>

namespace repo::behavior {

using namespace repo::num;
using rssm::RssmState;

Actor::Actor(const BehaviorConfig& cfg, const rssm::RssmConfig& model_cfg,
             ParamStore& store, Rng& rng)
    : net_(store, "actor", model_cfg.belief_dim + model_cfg.latent_dim,
           cfg.actor_hidden, cfg.actor_layers, 2 * model_cfg.action_dim, rng),
      action_dim_(model_cfg.action_dim) {}

dist::DiagonalGaussian Actor::pre_squash(const RssmState& state) const {
  auto out = net_(state.feature());
  auto mean = slice_last(out, 0, action_dim_);
  auto raw = slice_last(out, action_dim_, action_dim_);
  return {mean, dist::stddev_from_raw(raw)};
}

TensorPtr Actor::sample(const RssmState& state, Rng& rng) const {
  return sample_with_log_prob(state, rng).action;
}

dist::SquashedSample Actor::sample_with_log_prob(const RssmState& state,
                                                 Rng& rng) const {
  auto pre = pre_squash(state);
  const int batch = pre.mean->shape[0];
  auto noise = make_tensor(
      pre.mean->shape,
      rng.normal_vec(static_cast<std::size_t>(batch) * action_dim_));
  return dist::squashed_policy_sample(pre, noise);
}

TensorPtr Actor::mode(const RssmState& state) const {
  return tanh(pre_squash(state).mean);
}

Critic::Critic(const BehaviorConfig& cfg, const rssm::RssmConfig& model_cfg,
               ParamStore& store, Rng& rng)
    : net_(store, "critic", model_cfg.belief_dim + model_cfg.latent_dim,
           cfg.critic_hidden, cfg.critic_layers, 1, rng) {}

TensorPtr Critic::value(const RssmState& state) const {
  return sum_last(net_(state.feature()));
}

std::vector<TensorPtr> lambda_returns(const std::vector<TensorPtr>& rewards,
                                      const std::vector<TensorPtr>& values,
                                      double gamma, double lambda) {
  const std::size_t H = rewards.size();
  if (values.size() != H + 1) {
    throw std::invalid_argument("lambda_returns: values must have H+1 entries");
  }
  std::vector<TensorPtr> returns(H);
  // G_H = r_H + gamma * v_{H+1}
  returns[H - 1] = add(rewards[H - 1], scalar_mul(values[H], gamma));
  for (int t = static_cast<int>(H) - 2; t >= 0; --t) {
    auto mix = add(scalar_mul(values[t + 1], 1.0 - lambda),
                   scalar_mul(returns[t + 1], lambda));
    returns[t] = add(rewards[t], scalar_mul(mix, gamma));
  }
  return returns;
}

TensorPtr critic_loss(const Critic& critic,
                      const std::vector<rssm::RssmState>& states,
                      const std::vector<TensorPtr>& targets) {
  if (states.size() != targets.size() || states.empty()) {
    throw std::invalid_argument("critic_loss: misaligned inputs");
  }
  TensorPtr total;
  for (std::size_t t = 0; t < states.size(); ++t) {
    RssmState detached{stop_gradient(states[t].belief),
                       stop_gradient(states[t].z),
                       dist::detached(states[t].dist)};
    auto err = mean(square(sub(critic.value(detached),
                               stop_gradient(targets[t]))));
    total = t == 0 ? err : add(total, err);
  }
  return scalar_mul(total, 1.0 / static_cast<double>(states.size()));
}

TensorPtr actor_loss(const rssm::Rssm& model, const Critic& critic,
                     const rssm::ImaginedRollout& rollout,
                     const BehaviorConfig& cfg,
                     const std::vector<TensorPtr>* action_log_probs) {
  const std::size_t H = rollout.states.size();
  std::vector<TensorPtr> rewards(H), values(H + 1);
  for (std::size_t t = 0; t < H; ++t) {
    rewards[t] = model.reward_head(rollout.states[t]);
    values[t] = critic.value(rollout.states[t]);
  }
  values[H] = critic.value(rollout.states[H - 1]);  // bootstrap, final state
  auto returns = lambda_returns(rewards, values, cfg.gamma, cfg.lambda);
  TensorPtr total;
  for (std::size_t t = 0; t < H; ++t) {
    auto m = mean(returns[t]);
    total = t == 0 ? m : add(total, m);
  }
  auto loss = scalar_mul(total, -1.0 / static_cast<double>(H));
  if (action_log_probs != nullptr && cfg.entropy_eta > 0.0) {
    TensorPtr lp_sum;
    for (std::size_t t = 0; t < action_log_probs->size(); ++t) {
      auto m = mean((*action_log_probs)[t]);
      lp_sum = t == 0 ? m : add(lp_sum, m);
    }
    // entropy ~= -mean log-prob; subtracting it adds +eta * mean log-prob.
    loss = add(loss, scalar_mul(lp_sum, cfg.entropy_eta /
                                            static_cast<double>(
                                                action_log_probs->size())));
  }
  return loss;
}

TensorPtr policy_act(const Actor& actor, const rssm::RssmState& state,
                     ActMode mode, Rng& rng) {
  if (mode == ActMode::kEval) return actor.mode(state);
  return actor.sample(state, rng);
}

}  // namespace repo::behavior
