#pragma once

#include <vector>

#include "repo/rssm.hpp"

namespace repo::behavior {

using num::ParamStore;
using num::TensorPtr;

struct BehaviorConfig {
  int horizon{15};
  double gamma{0.99};
  double lambda{0.95};
  double actor_lr{5e-4};
  double critic_lr{1e-3};
  int actor_hidden{64};
  int actor_layers{2};
  int critic_hidden{64};
  int critic_layers{2};
  double entropy_eta{3e-2};  // weight of the policy-entropy bonus
};

/// Squashed-Gaussian policy head over RSSM features.
class Actor {
 public:
  Actor(const BehaviorConfig& cfg, const rssm::RssmConfig& model_cfg,
        ParamStore& store, Rng& rng);

  dist::DiagonalGaussian pre_squash(const rssm::RssmState& state) const;
  /// Reparameterized squashed sample.
  TensorPtr sample(const rssm::RssmState& state, Rng& rng) const;
  /// Sample plus its differentiable log-probability.
  dist::SquashedSample sample_with_log_prob(const rssm::RssmState& state,
                                            Rng& rng) const;
  /// tanh of the mean (deterministic).
  TensorPtr mode(const rssm::RssmState& state) const;

 private:
  nn::Mlp net_;
  int action_dim_;
};

class Critic {
 public:
  Critic(const BehaviorConfig& cfg, const rssm::RssmConfig& model_cfg,
         ParamStore& store, Rng& rng);
  TensorPtr value(const rssm::RssmState& state) const;  // (B,)

 private:
  nn::Mlp net_;
};

/// Backward recursion G_t = r_t + gamma * ((1-lambda) v_{t+1} + lambda G_{t+1}),
/// with G_H = r_H + gamma * v_{H+1}. values holds H+1 entries (bootstrap last).
std::vector<TensorPtr> lambda_returns(const std::vector<TensorPtr>& rewards,
                                      const std::vector<TensorPtr>& values,
                                      double gamma, double lambda);

/// MSE against detached targets on detached states.
TensorPtr critic_loss(const Critic& critic,
                      const std::vector<rssm::RssmState>& states,
                      const std::vector<TensorPtr>& targets);

/// -mean lambda-return over the imagined rollout, pathwise. When the
/// rollout's action log-probs are supplied, subtracts entropy_eta times the
/// policy entropy estimate (discourages tanh saturation and keeps
/// exploration alive).
TensorPtr actor_loss(const rssm::Rssm& model, const Critic& critic,
                     const rssm::ImaginedRollout& rollout,
                     const BehaviorConfig& cfg,
                     const std::vector<TensorPtr>* action_log_probs = nullptr);

enum class ActMode { kExplore, kEval };

TensorPtr policy_act(const Actor& actor, const rssm::RssmState& state,
                     ActMode mode, Rng& rng);

}  // namespace repo::behavior
