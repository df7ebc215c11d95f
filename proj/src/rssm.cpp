#include "repo/rssm.hpp"

#include <cmath>
#include <stdexcept>

namespace repo::nn {

using namespace repo::num;

Linear::Linear(ParamStore& store, const std::string& name, int in, int out,
               Rng& rng) {
  std::vector<double> w(static_cast<std::size_t>(in) * out);
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w) v = rng.normal() * scale;
  weight = store.add(name + ".weight", make_tensor({in, out}, std::move(w)));
  bias = store.add(name + ".bias", zeros({out}));
}

TensorPtr Linear::operator()(const TensorPtr& x) const {
  return add(matmul(x, weight), bias);
}

Mlp::Mlp(ParamStore& store, const std::string& name, int in, int hidden,
         int hidden_layers, int out, Rng& rng) {
  int d = in;
  for (int i = 0; i < hidden_layers; ++i) {
    layers.emplace_back(store, name + ".l" + std::to_string(i), d, hidden, rng);
    d = hidden;
  }
  layers.emplace_back(store, name + ".out", d, out, rng);
}

TensorPtr Mlp::operator()(const TensorPtr& x) const {
  TensorPtr h = x;
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) h = elu(layers[i](h));
  return layers.back()(h);
}

GruCell::GruCell(ParamStore& store, const std::string& name, int input,
                 int hidden, Rng& rng)
    : update_gate(store, name + ".update", input + hidden, hidden, rng),
      reset_gate(store, name + ".reset", input + hidden, hidden, rng),
      candidate(store, name + ".candidate", input + hidden, hidden, rng) {}

TensorPtr GruCell::operator()(const TensorPtr& x, const TensorPtr& h) const {
  auto xh = concat_last(x, h);
  auto u = sigmoid(update_gate(xh));
  auto r = sigmoid(reset_gate(xh));
  auto cand = tanh(candidate(concat_last(x, mul(r, h))));
  // h' = u * h + (1 - u) * cand
  return add(mul(u, h), mul(add_scalar(neg(u), 1.0), cand));
}

}  // namespace repo::nn

namespace repo::rssm {

using namespace repo::num;
using dist::stddev_from_raw;

TensorPtr RssmState::feature() const { return concat_last(belief, z); }

namespace {

DiagonalGaussian split_gaussian(const TensorPtr& params, int dim) {
  auto mean = slice_last(params, 0, dim);
  auto raw = slice_last(params, dim, dim);
  return {mean, stddev_from_raw(raw)};
}

}  // namespace

Rssm::Rssm(const RssmConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
  encoder_ = nn::Mlp(store, "encoder", cfg.obs_dim, cfg.encoder_hidden,
                     cfg.encoder_layers, cfg.embed_dim, rng);
  recurrence_ = nn::GruCell(store, "gru", cfg.latent_dim + cfg.action_dim,
                            cfg.belief_dim, rng);
  prior_net_ = nn::Mlp(store, "prior", cfg.belief_dim, cfg.dist_hidden, 1,
                       2 * cfg.latent_dim, rng);
  posterior_net_ = nn::Mlp(store, "posterior", cfg.belief_dim + cfg.embed_dim,
                           cfg.dist_hidden, 1, 2 * cfg.latent_dim, rng);
  reward_net_ = nn::Mlp(store, "reward", cfg.belief_dim + cfg.latent_dim,
                        cfg.head_hidden, cfg.head_layers, 1, rng);
  if (cfg.recon_enabled) {
    recon_net_ = nn::Mlp(store, "recon", cfg.belief_dim + cfg.latent_dim,
                         cfg.head_hidden, cfg.head_layers, cfg.obs_dim, rng);
  }
}

TensorPtr Rssm::encode(const TensorPtr& obs) const {
  if (obs->shape.back() != cfg_.obs_dim) {
    throw ShapeError("encode: observation dim " +
                     std::to_string(obs->shape.back()) + " != configured " +
                     std::to_string(cfg_.obs_dim));
  }
  return encoder_(obs);
}

std::pair<TensorPtr, DiagonalGaussian> Rssm::prior_step(
    const RssmState& prev, const TensorPtr& action) const {
  auto belief = recurrence_(concat_last(prev.z, action), prev.belief);
  return {belief, split_gaussian(prior_net_(belief), cfg_.latent_dim)};
}

DiagonalGaussian Rssm::posterior_step(const TensorPtr& belief,
                                      const TensorPtr& x) const {
  return split_gaussian(posterior_net_(concat_last(belief, x)),
                        cfg_.latent_dim);
}

TensorPtr Rssm::reward_head(const RssmState& state) const {
  // Rewards live in (0, 1]; bounding the mean keeps imagined rollouts from
  // chasing extrapolated reward far outside the data.
  return sigmoid(sum_last(reward_net_(state.feature())));  // (B,1) -> (B,)
}

TensorPtr Rssm::recon_head(const RssmState& state) const {
  if (!cfg_.recon_enabled) {
    throw std::logic_error("recon_head called with reconstruction disabled");
  }
  return recon_net_(state.feature());
}

RssmState Rssm::initial_state(int batch) const {
  RssmState s;
  s.belief = zeros({batch, cfg_.belief_dim});
  s.z = zeros({batch, cfg_.latent_dim});
  s.dist = {zeros({batch, cfg_.latent_dim}),
            full({batch, cfg_.latent_dim}, 1.0)};
  return s;
}

PosteriorRollout rollout_posterior(const Rssm& model,
                                   const std::vector<TensorPtr>& obs,
                                   const std::vector<TensorPtr>& prev_actions,
                                   const RssmState& initial, Rng& rng) {
  if (obs.empty()) throw std::invalid_argument("rollout_posterior: length 0");
  if (obs.size() != prev_actions.size()) {
    throw std::invalid_argument("rollout_posterior: misaligned sequences");
  }
  const int batch = obs[0]->shape[0];
  const int latent = model.config().latent_dim;
  PosteriorRollout out;
  RssmState state = initial;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    auto [belief, prior] = model.prior_step(state, prev_actions[t]);
    auto x = model.encode(obs[t]);
    auto posterior = model.posterior_step(belief, x);
    auto noise = make_tensor({batch, latent},
                             rng.normal_vec(static_cast<std::size_t>(batch) * latent));
    auto z = dist::gaussian_rsample(posterior, noise);
    state = RssmState{belief, z, posterior};
    out.priors.push_back(prior);
    out.posteriors.push_back(posterior);
    out.states.push_back(state);
  }
  return out;
}

ImaginedRollout imagine(const Rssm& model, const RssmState& start,
                        const PolicyFn& policy, int horizon, Rng& rng) {
  if (horizon < 1) throw std::invalid_argument("imagine: horizon must be >= 1");
  const int batch = start.z->shape[0];
  const int latent = model.config().latent_dim;
  ImaginedRollout out;
  RssmState state = start;
  for (int tau = 0; tau < horizon; ++tau) {
    auto action = policy(state, rng);
    auto [belief, prior] = model.prior_step(state, action);
    auto noise = make_tensor({batch, latent},
                             rng.normal_vec(static_cast<std::size_t>(batch) * latent));
    auto z = dist::gaussian_rsample(prior, noise);
    state = RssmState{belief, z, prior};
    out.actions.push_back(action);
    out.states.push_back(state);
  }
  return out;
}

}  // namespace repo::rssm
