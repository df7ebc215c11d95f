#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "repo/behavior.hpp"
#include "repo/objective.hpp"
#include "repo/rssm.hpp"
#include "repo/worlds.hpp"

namespace repo::trainer {

using num::TensorPtr;

struct TrainSchedule {
  int seed_episodes{5};
  int updates_per_cycle{150};
  int env_steps_per_cycle{500};
  int batch{8};
  int segment_len{16};
  int total_env_steps{30000};
  int imagine_starts{8};
  std::size_t buffer_capacity{100000};  // transitions
};

struct Minibatch {
  std::vector<TensorPtr> obs;           // L tensors of (B, obs_dim)
  std::vector<TensorPtr> prev_actions;  // L tensors of (B, action_dim)
  std::vector<TensorPtr> rewards;       // L tensors of (B,)
};

struct NotReadyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Whole-episode FIFO storage; sampled segments never cross episode
/// boundaries.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  void add(worlds::Episode ep);
  bool ready(int segment_len) const;
  Minibatch sample(int batch, int segment_len, Rng& rng) const;
  /// Uniform single observations as one (n, obs_dim) tensor.
  TensorPtr sample_observations(int n, Rng& rng) const;

  std::size_t transition_count() const { return transitions_; }
  std::size_t episode_count() const { return episodes_.size(); }
  const std::vector<worlds::Episode>& episodes() const { return episodes_; }

 private:
  std::vector<worlds::Episode> episodes_;
  std::size_t capacity_;
  std::size_t transitions_{0};
};

struct TrainerConfig {
  rssm::RssmConfig model;
  objective::BottleneckConfig bottleneck;
  behavior::BehaviorConfig behavior;
  TrainSchedule schedule;
  double model_lr{3e-4};
  double grad_clip{100.0};
  bool recon_ablation{false};
  std::uint64_t seed{0};
};

struct StepMetrics {
  long step{0};
  double model_loss{0.0};
  double reward_ll{0.0};
  double raw_kl{0.0};
  double beta{0.0};
  double actor_loss{0.0};
  double critic_loss{0.0};
  double imagined_return{0.0};
};

using EncodeFn = std::function<TensorPtr(const TensorPtr&)>;

/// Posterior-filtered rollout with a frozen model; explore mode samples
/// latents and actions, eval mode uses distribution modes. `encode`
/// substitutes the model's encoder (test-time adaptation); null uses it.
worlds::Episode collect_episode(worlds::PointmassEnv& env,
                                const rssm::Rssm& model,
                                const behavior::Actor& actor,
                                behavior::ActMode mode, Rng& rng,
                                const EncodeFn& encode = nullptr);

/// Runs a random-action episode (seed phase).
worlds::Episode collect_random_episode(worlds::PointmassEnv& env, Rng& rng);

/// Deterministic posterior-mean features [belief; z] for every step of an
/// episode; used by probes and visualization.
std::vector<std::vector<double>> filter_features(const rssm::Rssm& model,
                                                 const worlds::Episode& ep);

class Trainer {
 public:
  Trainer(const TrainerConfig& cfg, const worlds::DomainSpec& domain);

  void seed_buffer();
  /// C model/behavior updates followed by N environment steps.
  std::vector<StepMetrics> train_cycle();
  /// One model + behavior update from a sampled minibatch.
  StepMetrics update_step();
  /// Mean return of the deterministic policy over fresh episodes.
  double eval_return(const worlds::DomainSpec& domain, int episodes,
                     std::uint64_t eval_seed);

  long total_updates() const { return updates_; }
  long env_steps() const { return env_steps_; }
  bool budget_exhausted() const {
    return env_steps_ >= cfg_.schedule.total_env_steps;
  }

  const rssm::Rssm& model() const { return *model_; }
  const behavior::Actor& actor() const { return *actor_; }
  const behavior::Critic& critic() const { return *critic_; }
  num::ParamStore& model_params() { return model_store_; }
  num::ParamStore& actor_params() { return actor_store_; }
  num::ParamStore& critic_params() { return critic_store_; }
  objective::DualVariable& beta() { return beta_; }
  ReplayBuffer& buffer() { return buffer_; }
  const TrainerConfig& config() const { return cfg_; }
  Rng& rng() { return train_rng_; }
  Rng& collect_rng() { return collect_rng_; }
  /// Restores progress counters when resuming from a checkpoint.
  void set_counters(long updates, long env_steps) {
    updates_ = updates;
    env_steps_ = env_steps;
  }

 private:
  rssm::RssmState gather_starts(const rssm::PosteriorRollout& rollout,
                                int count, Rng& rng) const;
  void zero_all_grads();

  TrainerConfig cfg_;
  worlds::DomainSpec domain_;
  num::ParamStore model_store_, actor_store_, critic_store_;
  std::unique_ptr<rssm::Rssm> model_;
  std::unique_ptr<behavior::Actor> actor_;
  std::unique_ptr<behavior::Critic> critic_;
  num::Adam model_opt_, actor_opt_, critic_opt_;
  objective::DualVariable beta_;
  ReplayBuffer buffer_;
  worlds::PointmassEnv env_;
  Rng train_rng_, collect_rng_;
  long updates_{0};
  long env_steps_{0};
};

}  // namespace repo::trainer
