#pragma once

#include <functional>
#include <string>
#include <vector>

#include "repo/distributions.hpp"
#include "repo/optim.hpp"
#include "repo/rng.hpp"
#include "repo/tensor.hpp"

namespace repo::nn {

using num::ParamStore;
using num::TensorPtr;

struct Linear {
  TensorPtr weight;  // (in, out)
  TensorPtr bias;    // (out)

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng);
  TensorPtr operator()(const TensorPtr& x) const;
  int in_dim() const { return weight->shape[0]; }
  int out_dim() const { return weight->shape[1]; }
};

/// Dense net with ELU activations between layers and a linear output.
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, int in, int hidden,
      int hidden_layers, int out, Rng& rng);
  TensorPtr operator()(const TensorPtr& x) const;
};

/// Update/reset-gate recurrence with tanh candidate.
struct GruCell {
  Linear update_gate, reset_gate, candidate;

  GruCell() = default;
  GruCell(ParamStore& store, const std::string& name, int input, int hidden,
          Rng& rng);
  TensorPtr operator()(const TensorPtr& x, const TensorPtr& h) const;
};

}  // namespace repo::nn

namespace repo::rssm {

using dist::DiagonalGaussian;
using num::ParamStore;
using num::TensorPtr;

struct RssmConfig {
  int obs_dim{256};
  int action_dim{2};
  int embed_dim{48};
  int belief_dim{48};
  int latent_dim{6};
  int encoder_hidden{96};
  int encoder_layers{2};
  int dist_hidden{96};   // prior/posterior MLP width (2-layer)
  int head_hidden{64};   // reward/recon head width
  int head_layers{2};
  bool recon_enabled{false};
};

struct RssmState {
  TensorPtr belief;  // (B, belief_dim), deterministic
  TensorPtr z;       // (B, latent_dim), stochastic sample
  DiagonalGaussian dist;  // distribution that produced z

  TensorPtr feature() const;  // [belief; z]
};

class Rssm {
 public:
  Rssm(const RssmConfig& cfg, ParamStore& store, Rng& rng);

  const RssmConfig& config() const { return cfg_; }

  /// Deterministic dense embedding of a flattened observation batch.
  TensorPtr encode(const TensorPtr& obs) const;

  /// Advances the belief with [z; a] and emits the prior over the next
  /// latent. Never sees an observation.
  std::pair<TensorPtr, DiagonalGaussian> prior_step(const RssmState& prev,
                                                    const TensorPtr& action) const;

  /// Posterior from the new belief and the current embedding.
  DiagonalGaussian posterior_step(const TensorPtr& belief,
                                  const TensorPtr& x) const;

  TensorPtr reward_head(const RssmState& state) const;  // (B,)
  TensorPtr recon_head(const RssmState& state) const;   // (B, obs_dim)
  bool recon_enabled() const { return cfg_.recon_enabled; }

  /// All-zeros belief and latent.
  RssmState initial_state(int batch) const;

 private:
  RssmConfig cfg_;
  nn::Mlp encoder_;
  nn::GruCell recurrence_;
  nn::Mlp prior_net_;      // belief -> 2*latent
  nn::Mlp posterior_net_;  // [belief; x] -> 2*latent
  nn::Mlp reward_net_;     // [belief; z] -> 1
  nn::Mlp recon_net_;      // [belief; z] -> obs_dim (ablation only)
};

struct PosteriorRollout {
  std::vector<DiagonalGaussian> priors;
  std::vector<DiagonalGaussian> posteriors;
  std::vector<RssmState> states;  // posterior samples, aligned with inputs
};

/// Filters a (B, L) segment: obs[t] is the observation at step t and
/// prev_actions[t] the action that led to it.
PosteriorRollout rollout_posterior(const Rssm& model,
                                   const std::vector<TensorPtr>& obs,
                                   const std::vector<TensorPtr>& prev_actions,
                                   const RssmState& initial, Rng& rng);

using PolicyFn = std::function<TensorPtr(const RssmState&, Rng&)>;

struct ImaginedRollout {
  std::vector<RssmState> states;   // s_1..s_H after each prior transition
  std::vector<TensorPtr> actions;  // a_0..a_{H-1}
};

/// Rolls the prior and policy forward H steps; consumes no observations.
ImaginedRollout imagine(const Rssm& model, const RssmState& start,
                        const PolicyFn& policy, int horizon, Rng& rng);

}  // namespace repo::rssm
