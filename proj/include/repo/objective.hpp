#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "repo/distributions.hpp"
#include "repo/rssm.hpp"
#include "repo/tensor.hpp"

namespace repo::objective {

using dist::DiagonalGaussian;
using num::TensorPtr;

/// Positively-constrained multiplier parameterized on the log scale.
struct DualVariable {
  double raw{0.0};
  double step_size{1e-3};

  static constexpr double kMin = 1e-8;
  static constexpr double kMax = 1e4;

  static DualVariable from_value(double value, double step_size) {
    DualVariable d;
    d.raw = std::log(std::clamp(value, kMin, kMax));
    d.step_size = step_size;
    return d;
  }

  double value() const { return std::exp(raw); }

  void clamp() {
    raw = std::clamp(raw, std::log(kMin), std::log(kMax));
  }
};

struct BottleneckConfig {
  double epsilon{3.0};       // target KL per timestep, nats
  double beta_init{1e-4};
  double beta_lr{1e-3};
  double balance_ratio{4.0};  // r; prior-to-posterior training ratio

  double alpha() const { return balance_ratio / (balance_ratio + 1.0); }
};

struct BalancedKl {
  TensorPtr grad_path;  // stop-gradient routed: alpha trains the prior
  TensorPtr raw;        // plain KL, no stop-gradients
};

/// D_KL(p||q) = alpha * KL(sg(p)||q) + (1-alpha) * KL(p||sg(q)).
/// Both outputs are numerically equal in the forward pass.
BalancedKl balanced_kl(const DiagonalGaussian& posterior,
                       const DiagonalGaussian& prior, double alpha);

struct ModelLossMetrics {
  double reward_ll{0.0};   // mean reward log-likelihood per timestep
  double raw_kl_mean{0.0}; // mean unbalanced KL per timestep, detached
  double recon_ll{0.0};    // ablation only
};

/// -mean reward log-lik + beta * mean balanced KL; beta enters as a constant.
TensorPtr repo_model_loss(const rssm::Rssm& model,
                          const rssm::PosteriorRollout& rollout,
                          const std::vector<TensorPtr>& rewards,
                          const DualVariable& beta,
                          const BottleneckConfig& cfg,
                          ModelLossMetrics& metrics);

/// Pixel likelihood stddev for the reconstruction ablation.
inline constexpr double kPixelStddev = 0.3;

/// Dreamer-style ablation: adds -mean pixel log-lik with beta fixed at 1.
TensorPtr recon_model_loss(const rssm::Rssm& model,
                           const rssm::PosteriorRollout& rollout,
                           const std::vector<TensorPtr>& rewards,
                           const std::vector<TensorPtr>& observations,
                           const BottleneckConfig& cfg,
                           ModelLossMetrics& metrics);

/// Ascent on the constraint violation: beta grows multiplicatively while
/// the raw KL exceeds epsilon and shrinks otherwise.
void dual_update(DualVariable& beta, double raw_kl_mean, double epsilon);

}  // namespace repo::objective
