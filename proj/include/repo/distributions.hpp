#pragma once

#include "repo/tensor.hpp"

namespace repo::dist {

using num::TensorPtr;

inline constexpr double kStddevFloor = 0.1;
inline constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)

/// Diagonal Gaussian over the last axis; mean and stddev share a shape
/// (typically batch x dim) and stddev is strictly positive.
struct DiagonalGaussian {
  TensorPtr mean;
  TensorPtr stddev;

  int dim() const { return mean->shape.back(); }
};

/// softplus(raw) + floor; the stddev transform used by every head.
TensorPtr stddev_from_raw(const TensorPtr& raw);

DiagonalGaussian detached(const DiagonalGaussian& d);

/// KL(p || q) summed over the last axis, in nats. Result drops the last axis.
TensorPtr gaussian_kl(const DiagonalGaussian& p, const DiagonalGaussian& q);

/// mean + stddev * noise; pathwise gradient to both parameters.
TensorPtr gaussian_rsample(const DiagonalGaussian& d, const TensorPtr& noise);

/// Log density at x, summed over the last axis.
TensorPtr gaussian_log_prob(const DiagonalGaussian& d, const TensorPtr& x);

struct SquashedSample {
  TensorPtr action;    // tanh of the pre-squash sample, in (-1, 1)
  TensorPtr log_prob;  // includes the tanh change-of-variables correction
};

SquashedSample squashed_policy_sample(const DiagonalGaussian& pre,
                                      const TensorPtr& noise);

/// Unit-variance Gaussian log-likelihood of r under predicted mean,
/// elementwise (no reduction).
TensorPtr reward_log_lik(const TensorPtr& predicted_mean, const TensorPtr& r);

}  // namespace repo::dist
