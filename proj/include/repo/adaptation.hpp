#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "repo/behavior.hpp"
#include "repo/rssm.hpp"
#include "repo/trainer.hpp"
#include "repo/worlds.hpp"

namespace repo::adapt {

using num::ParamStore;
using num::TensorPtr;

/// Batched scalar function of encodings: (B, d) -> (B,).
using BatchFn = std::function<TensorPtr(const TensorPtr&)>;

struct SupportMetrics {
  double expression{0.0};  // saddle expression value
  double e_tau{0.0};       // E_train[tau]
  double mean_f_train{0.0};
  double mean_f_test{0.0};
};

struct SupportLosses {
  TensorPtr min_player;  // minimized by the test encoder and tau
  TensorPtr max_player;  // maximized (via sign flip) by f
  SupportMetrics metrics;
};

/// Chi-squared support-constraint saddle expression
///   E_train[tau * f] - E_test[f + f^2/4] + lambda * (E_train[tau] - 1).
/// x_train must carry no gradient; x_test flows into the test encoder.
SupportLosses support_losses(const TensorPtr& x_train, const TensorPtr& x_test,
                             const BatchFn& tau_fn, const BatchFn& f_fn,
                             double lambda);

/// Mean squared distance between paired encodings; the train side is
/// detached so gradient reaches only the test encoder.
TensorPtr calibration_loss(const TensorPtr& h_train, const TensorPtr& h_test);

struct GanLosses {
  TensorPtr encoder_loss;  // non-saturating generator loss on x_test
  TensorPtr critic_loss;   // discriminator cross-entropy
  double accuracy{0.0};    // train-vs-test classification rate at 0.5
};

/// Adversarial distribution-matching baseline; f_net plays discriminator
/// with logit output (positive = train side).
GanLosses distribution_matching_losses(const TensorPtr& x_train,
                                       const TensorPtr& x_test,
                                       const BatchFn& f_fn);

/// Toy-world regularizer: consecutive-pair distances of recovered latents
/// should match the ground-truth-geometry distances of the same points.
TensorPtr pairwise_consistency_loss(const TensorPtr& latents,
                                    const TensorPtr& latents_true);

/// Density-ratio and critic networks for adaptation. tau is softplus-
/// squashed; f optionally routes through a 64-unit stochastic bottleneck
/// whose KL to a standard normal is penalized (weight 0.1).
class RatioNets {
 public:
  RatioNets(int in_dim, int hidden, ParamStore& tau_store, ParamStore& f_store,
            bool use_vdb, Rng& rng);

  TensorPtr tau(const TensorPtr& x) const;  // (B,), nonnegative
  /// kl_out receives the bottleneck penalty (already weighted) when the
  /// stochastic bottleneck is enabled; untouched otherwise.
  TensorPtr f(const TensorPtr& x, Rng& rng, TensorPtr* kl_out = nullptr) const;
  bool use_vdb() const { return use_vdb_; }

 private:
  nn::Mlp tau_net_;
  nn::Mlp f_net_;       // plain head, or trunk -> 2*bottleneck when vdb
  nn::Linear f_out_;    // bottleneck -> 1 (vdb only)
  bool use_vdb_;
};

enum class AdaptObjective { kSupport, kDistributionMatching };

struct AdaptConfig {
  int updates_per_cycle{20};
  int env_steps_per_cycle{500};
  int batch{256};  // observations per side per update
  int calibration_trajectories{10};
  int seed_episodes{5};
  double encoder_lr{3e-4};
  double tau_lr{5e-5};
  double f_lr{1e-4};
  double lambda_step{5e-3};
  double lambda_init{1e-4};
  double calibration_weight{1.0};
  int ratio_hidden{128};
  bool use_vdb{false};
  bool use_calibration{true};
  AdaptObjective objective{AdaptObjective::kSupport};
};

struct AdaptCycleMetrics {
  int cycle{0};
  double saddle{0.0};
  double e_tau{0.0};
  double lambda{0.0};
  double calibration{0.0};
  long skipped_updates{0};
};

/// Test-time adaptation of a pixel agent: only a copy of the encoder
/// trains; world model, actor, and critic stay frozen (checksum-verified
/// around every update).
class PixelAdapter {
 public:
  PixelAdapter(const rssm::Rssm& model, const ParamStore& model_params,
               const behavior::Actor& actor, const ParamStore& actor_params,
               const trainer::ReplayBuffer& train_buffer,
               const worlds::DomainSpec& train_domain,
               const worlds::DomainSpec& test_domain, const AdaptConfig& cfg,
               std::uint64_t seed);

  /// Paired expert-policy observations rendered under both domains.
  void collect_calibration();
  /// Random-policy episodes that bootstrap the test buffer.
  void seed_test_buffer();
  AdaptCycleMetrics adapt_cycle();

  trainer::EncodeFn encoder() const;
  double eval_return(int episodes, std::uint64_t eval_seed);

  ParamStore& encoder_params() { return encoder_store_; }
  double lambda() const { return lambda_; }
  std::uint64_t frozen_checksum() const;
  const trainer::ReplayBuffer& test_buffer() const { return test_buffer_; }

 private:
  void update_once();

  const rssm::Rssm& model_;
  const ParamStore& model_params_;
  const behavior::Actor& actor_;
  const ParamStore& actor_params_;
  const trainer::ReplayBuffer& train_buffer_;
  worlds::DomainSpec train_domain_, test_domain_;
  AdaptConfig cfg_;

  ParamStore encoder_store_, tau_store_, f_store_;
  nn::Mlp test_encoder_;
  std::unique_ptr<RatioNets> nets_;
  num::Adam encoder_opt_, tau_opt_, f_opt_;
  double lambda_;
  trainer::ReplayBuffer test_buffer_;
  std::vector<double> calib_train_, calib_test_;  // flattened pairs
  int calib_count_{0};
  worlds::PointmassEnv test_env_;
  Rng rng_;
  long skipped_{0};
  int cycles_{0};
};

struct ToyAdaptConfig {
  AdaptObjective objective{AdaptObjective::kSupport};
  bool use_calibration{true};
  bool skewed_calibration{false};  // pairs confined to a corner of support
  bool use_pairwise{false};
  int iterations{3000};
  int batch{256};
  int calibration_points{64};
  int train_samples{4096};
  int test_samples{4096};
  int encoder_hidden{64};
  int ratio_hidden{64};
  double encoder_lr{3e-4};
  double tau_lr{5e-5};
  double f_lr{1e-4};
  double lambda_step{5e-3};
  double lambda_init{1e-4};
  double calibration_weight{1.0};
  double pairwise_weight{1.0};
  std::uint64_t seed{0};
};

struct ToyAdaptReport {
  double mean_l2_error{0.0};  // vs ground-truth test latents
  double e_tau{0.0};
  double saddle{0.0};
  bool degenerate{false};  // encodings collapsed to a point
};

/// Appendix-style 2-D recovery problem: the train encoder is the exact
/// inverse of the emission; a fresh MLP adapts to the test half-domain.
ToyAdaptReport toy_adapt(const ToyAdaptConfig& cfg);

}  // namespace repo::adapt
