#include "repo/trainer.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace repo::trainer {

using namespace repo::num;
using behavior::ActMode;
using rssm::RssmState;
using worlds::Episode;
using worlds::PointmassEnv;

void ReplayBuffer::add(Episode ep) {
  transitions_ += static_cast<std::size_t>(ep.length);
  episodes_.push_back(std::move(ep));
  while (transitions_ > capacity_ && episodes_.size() > 1) {
    transitions_ -= static_cast<std::size_t>(episodes_.front().length);
    episodes_.erase(episodes_.begin());
  }
}

bool ReplayBuffer::ready(int segment_len) const {
  for (const auto& ep : episodes_) {
    if (ep.length >= segment_len) return true;
  }
  return false;
}

Minibatch ReplayBuffer::sample(int batch, int segment_len, Rng& rng) const {
  // Uniform over valid (episode, offset) pairs.
  std::vector<std::size_t> cumulative;
  std::size_t total = 0;
  for (const auto& ep : episodes_) {
    if (ep.length >= segment_len) {
      total += static_cast<std::size_t>(ep.length - segment_len + 1);
    }
    cumulative.push_back(total);
  }
  if (total == 0) {
    throw NotReadyError("replay buffer has no segment of length " +
                        std::to_string(segment_len));
  }
  const auto& first = episodes_.front();
  const int obs_dim = first.obs_dim, act_dim = first.action_dim;
  std::vector<std::vector<double>> obs(segment_len),
      prev_act(segment_len), rew(segment_len);
  for (int t = 0; t < segment_len; ++t) {
    obs[t].resize(static_cast<std::size_t>(batch) * obs_dim);
    prev_act[t].assign(static_cast<std::size_t>(batch) * act_dim, 0.0);
    rew[t].resize(batch);
  }
  for (int b = 0; b < batch; ++b) {
    std::size_t pick = static_cast<std::size_t>(rng.uniform() * total);
    if (pick >= total) pick = total - 1;
    std::size_t e = 0;
    while (cumulative[e] <= pick) ++e;
    const std::size_t before = e == 0 ? 0 : cumulative[e - 1];
    const int offset = static_cast<int>(pick - before);
    const Episode& ep = episodes_[e];
    for (int t = 0; t < segment_len; ++t) {
      const int u = offset + t;
      std::copy_n(ep.obs(u), obs_dim, &obs[t][b * obs_dim]);
      rew[t][b] = ep.rewards[u];
      if (u > 0) {
        std::copy_n(ep.action(u - 1), act_dim, &prev_act[t][b * act_dim]);
      }
    }
  }
  Minibatch mb;
  for (int t = 0; t < segment_len; ++t) {
    mb.obs.push_back(make_tensor({batch, obs_dim}, std::move(obs[t])));
    mb.prev_actions.push_back(
        make_tensor({batch, act_dim}, std::move(prev_act[t])));
    mb.rewards.push_back(make_tensor({batch}, std::move(rew[t])));
  }
  return mb;
}

TensorPtr ReplayBuffer::sample_observations(int n, Rng& rng) const {
  if (transitions_ == 0) throw NotReadyError("replay buffer is empty");
  const int obs_dim = episodes_.front().obs_dim;
  std::vector<double> out(static_cast<std::size_t>(n) * obs_dim);
  for (int i = 0; i < n; ++i) {
    std::size_t pick = static_cast<std::size_t>(
        rng.uniform_int(static_cast<int>(transitions_)));
    std::size_t e = 0;
    while (pick >= static_cast<std::size_t>(episodes_[e].length)) {
      pick -= episodes_[e].length;
      ++e;
    }
    std::copy_n(episodes_[e].obs(static_cast<int>(pick)), obs_dim,
                &out[static_cast<std::size_t>(i) * obs_dim]);
  }
  return make_tensor({n, obs_dim}, std::move(out));
}

namespace {

RssmState filter_step(const rssm::Rssm& model, const RssmState& prev,
                      const std::array<double, 2>& prev_action,
                      const std::vector<double>& obs, bool sample, Rng& rng,
                      const EncodeFn& encode = nullptr) {
  auto action = make_tensor({1, 2}, {prev_action[0], prev_action[1]});
  auto [belief, prior] = model.prior_step(prev, action);
  auto raw = make_tensor({1, model.config().obs_dim}, obs);
  auto x = encode ? encode(raw) : model.encode(raw);
  auto posterior = model.posterior_step(belief, x);
  TensorPtr z;
  if (sample) {
    auto noise = make_tensor({1, model.config().latent_dim},
                             rng.normal_vec(model.config().latent_dim));
    z = dist::gaussian_rsample(posterior, noise);
  } else {
    z = posterior.mean;
  }
  return {belief, z, posterior};
}

std::array<double, 2> tensor_action(const TensorPtr& a) {
  return {a->data[0], a->data[1]};
}

Episode run_episode(PointmassEnv& env, Rng& rng,
                    const std::function<std::array<double, 2>(
                        const std::vector<double>&, int)>& policy) {
  Episode ep;
  ep.length = worlds::kEpisodeLen;
  ep.observations.reserve(static_cast<std::size_t>(ep.length) * ep.obs_dim);
  ep.actions.reserve(static_cast<std::size_t>(ep.length) * ep.action_dim);
  ep.rewards.reserve(ep.length);
  ep.factors.reserve(static_cast<std::size_t>(ep.length) * ep.factor_dim);
  std::vector<double> obs = env.reset();
  for (int t = 0; t < ep.length; ++t) {
    auto factors = env.factors();
    const double reward =
        worlds::pointmass_reward(env.state().agent_pos, env.state().goal_pos);
    auto action = policy(obs, t);
    ep.observations.insert(ep.observations.end(), obs.begin(), obs.end());
    ep.actions.insert(ep.actions.end(), action.begin(), action.end());
    ep.rewards.push_back(reward);
    ep.factors.insert(ep.factors.end(), factors.begin(), factors.end());
    obs = env.step(action).obs;
  }
  return ep;
}

}  // namespace

Episode collect_episode(PointmassEnv& env, const rssm::Rssm& model,
                        const behavior::Actor& actor, ActMode mode, Rng& rng,
                        const EncodeFn& encode) {
  NoGradScope nograd;
  RssmState state = model.initial_state(1);
  std::array<double, 2> prev_action{0.0, 0.0};
  const bool sample_latent = mode == ActMode::kExplore;
  return run_episode(env, rng,
                     [&](const std::vector<double>& obs, int) {
                       state = filter_step(model, state, prev_action, obs,
                                           sample_latent, rng, encode);
                       auto a = behavior::policy_act(actor, state, mode, rng);
                       prev_action = tensor_action(a);
                       return prev_action;
                     });
}

Episode collect_random_episode(PointmassEnv& env, Rng& rng) {
  return run_episode(env, rng, [&](const std::vector<double>&, int) {
    return std::array<double, 2>{rng.uniform(-1.0, 1.0),
                                 rng.uniform(-1.0, 1.0)};
  });
}

std::vector<std::vector<double>> filter_features(const rssm::Rssm& model,
                                                 const Episode& ep) {
  NoGradScope nograd;
  Rng unused(0);
  RssmState state = model.initial_state(1);
  std::array<double, 2> prev_action{0.0, 0.0};
  std::vector<std::vector<double>> features;
  features.reserve(ep.length);
  for (int t = 0; t < ep.length; ++t) {
    std::vector<double> obs(ep.obs(t), ep.obs(t) + ep.obs_dim);
    state = filter_step(model, state, prev_action, obs, false, unused);
    auto f = state.feature();
    features.emplace_back(f->data);
    prev_action = {ep.action(t)[0], ep.action(t)[1]};
  }
  return features;
}

Trainer::Trainer(const TrainerConfig& cfg, const worlds::DomainSpec& domain)
    : cfg_(cfg),
      domain_(domain),
      model_opt_({cfg.model_lr}),
      actor_opt_({cfg.behavior.actor_lr}),
      critic_opt_({cfg.behavior.critic_lr}),
      beta_(objective::DualVariable::from_value(cfg.bottleneck.beta_init,
                                                cfg.bottleneck.beta_lr)),
      buffer_(cfg.schedule.buffer_capacity),
      env_(domain),
      train_rng_(cfg.seed * 7919 + 1),
      collect_rng_(cfg.seed * 7919 + 2) {
  Rng init_rng(cfg.seed * 7919 + 3);
  rssm::RssmConfig mc = cfg.model;
  mc.recon_enabled = cfg.recon_ablation;
  cfg_.model = mc;
  model_ = std::make_unique<rssm::Rssm>(mc, model_store_, init_rng);
  actor_ = std::make_unique<behavior::Actor>(cfg.behavior, mc, actor_store_,
                                             init_rng);
  critic_ = std::make_unique<behavior::Critic>(cfg.behavior, mc, critic_store_,
                                               init_rng);
}

void Trainer::seed_buffer() {
  for (int i = 0; i < cfg_.schedule.seed_episodes; ++i) {
    buffer_.add(collect_random_episode(env_, collect_rng_));
    env_steps_ += worlds::kEpisodeLen;
  }
}

void Trainer::zero_all_grads() {
  model_store_.zero_grad();
  actor_store_.zero_grad();
  critic_store_.zero_grad();
}

rssm::RssmState Trainer::gather_starts(const rssm::PosteriorRollout& rollout,
                                       int count, Rng& rng) const {
  // Detached rows sampled uniformly over (time, batch); imagination must
  // not backpropagate into the filtering pass.
  const int L = static_cast<int>(rollout.states.size());
  const int B = rollout.states[0].belief->shape[0];
  const int bd = model_->config().belief_dim;
  const int ld = model_->config().latent_dim;
  std::vector<double> belief(static_cast<std::size_t>(count) * bd);
  std::vector<double> z(static_cast<std::size_t>(count) * ld);
  for (int i = 0; i < count; ++i) {
    const int t = rng.uniform_int(L);
    const int b = rng.uniform_int(B);
    const auto& st = rollout.states[t];
    std::copy_n(&st.belief->data[b * bd], bd, &belief[i * bd]);
    std::copy_n(&st.z->data[b * ld], ld, &z[i * ld]);
  }
  rssm::RssmState s;
  s.belief = make_tensor({count, bd}, std::move(belief));
  s.z = make_tensor({count, ld}, std::move(z));
  s.dist = {stop_gradient(s.z), full({count, ld}, 1.0)};
  return s;
}

StepMetrics Trainer::update_step() {
  StepMetrics m;
  m.step = updates_;
  const auto& sched = cfg_.schedule;
  Minibatch mb = buffer_.sample(sched.batch, sched.segment_len, train_rng_);

  // Dynamics learning.
  objective::ModelLossMetrics mm;
  rssm::PosteriorRollout rollout;
  {
    Tape tape;
    TapeScope scope(tape);
    rollout = rssm::rollout_posterior(*model_, mb.obs, mb.prev_actions,
                                      model_->initial_state(sched.batch),
                                      train_rng_);
    TensorPtr loss;
    if (cfg_.recon_ablation) {
      loss = objective::recon_model_loss(*model_, rollout, mb.rewards, mb.obs,
                                         cfg_.bottleneck, mm);
    } else {
      loss = objective::repo_model_loss(*model_, rollout, mb.rewards, beta_,
                                        cfg_.bottleneck, mm);
    }
    m.model_loss = loss->data[0];
    tape.backward(loss);
    clip_grads_global_norm(model_store_, cfg_.grad_clip);
    model_opt_.step(model_store_);
    zero_all_grads();
  }
  m.reward_ll = mm.reward_ll;
  m.raw_kl = mm.raw_kl_mean;
  if (!cfg_.recon_ablation) {
    objective::dual_update(beta_, mm.raw_kl_mean, cfg_.bottleneck.epsilon);
  }
  m.beta = cfg_.recon_ablation ? 1.0 : beta_.value();

  // Behavior learning on imagined rollouts.
  rssm::ImaginedRollout imagined;
  {
    Tape tape;
    TapeScope scope(tape);
    auto start = gather_starts(rollout, sched.imagine_starts, train_rng_);
    std::vector<TensorPtr> log_probs;
    rssm::PolicyFn policy = [this, &log_probs](const rssm::RssmState& s,
                                               Rng& r) {
      auto sample = actor_->sample_with_log_prob(s, r);
      log_probs.push_back(sample.log_prob);
      return sample.action;
    };
    imagined = rssm::imagine(*model_, start, policy, cfg_.behavior.horizon,
                             train_rng_);
    auto aloss = behavior::actor_loss(*model_, *critic_, imagined,
                                      cfg_.behavior, &log_probs);
    m.actor_loss = aloss->data[0];
    m.imagined_return = -m.actor_loss;
    tape.backward(aloss);
    clip_grads_global_norm(actor_store_, cfg_.grad_clip);
    actor_opt_.step(actor_store_);
    zero_all_grads();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    // Fresh lambda-return targets against the current critic, detached.
    std::vector<TensorPtr> rewards(imagined.states.size()),
        values(imagined.states.size() + 1);
    for (std::size_t t = 0; t < imagined.states.size(); ++t) {
      rewards[t] = stop_gradient(model_->reward_head(imagined.states[t]));
      values[t] = critic_->value(imagined.states[t]);
    }
    values[imagined.states.size()] = values[imagined.states.size() - 1];
    auto targets = behavior::lambda_returns(rewards, values,
                                            cfg_.behavior.gamma,
                                            cfg_.behavior.lambda);
    auto closs = behavior::critic_loss(*critic_, imagined.states, targets);
    m.critic_loss = closs->data[0];
    tape.backward(closs);
    clip_grads_global_norm(critic_store_, cfg_.grad_clip);
    critic_opt_.step(critic_store_);
    zero_all_grads();
  }
  ++updates_;
  return m;
}

std::vector<StepMetrics> Trainer::train_cycle() {
  std::vector<StepMetrics> metrics;
  for (int c = 0; c < cfg_.schedule.updates_per_cycle; ++c) {
    metrics.push_back(update_step());
  }
  int remaining = cfg_.schedule.env_steps_per_cycle;
  while (remaining > 0) {
    buffer_.add(collect_episode(env_, *model_, *actor_, ActMode::kExplore,
                                collect_rng_));
    remaining -= worlds::kEpisodeLen;
    env_steps_ += worlds::kEpisodeLen;
  }
  return metrics;
}

double Trainer::eval_return(const worlds::DomainSpec& domain, int episodes,
                            std::uint64_t eval_seed) {
  worlds::DomainSpec spec = domain;
  spec.seed = eval_seed;
  PointmassEnv env(spec);
  Rng rng(eval_seed + 17);
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    auto ep = collect_episode(env, *model_, *actor_, ActMode::kEval, rng);
    for (double r : ep.rewards) total += r;
  }
  return total / episodes;
}

}  // namespace repo::trainer
