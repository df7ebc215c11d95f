#include "repo/distributions.hpp"

namespace repo::dist {

using namespace repo::num;

TensorPtr stddev_from_raw(const TensorPtr& raw) {
  return add_scalar(softplus(raw), kStddevFloor);
}

DiagonalGaussian detached(const DiagonalGaussian& d) {
  return {stop_gradient(d.mean), stop_gradient(d.stddev)};
}

TensorPtr gaussian_kl(const DiagonalGaussian& p, const DiagonalGaussian& q) {
  if (p.mean->shape != q.mean->shape) {
    throw ShapeError("gaussian_kl: dimension mismatch " +
                     shape_str(p.mean->shape) + " vs " +
                     shape_str(q.mean->shape));
  }
  // sum_d [ log(sq/sp) + (sp^2 + (mp-mq)^2) / (2 sq^2) - 1/2 ]
  auto log_ratio = sub(log(q.stddev), log(p.stddev));
  auto var_p = square(p.stddev);
  auto dm2 = square(sub(p.mean, q.mean));
  auto quot = div(add(var_p, dm2), scalar_mul(square(q.stddev), 2.0));
  auto per_dim = add_scalar(add(log_ratio, quot), -0.5);
  return sum_last(per_dim);
}

TensorPtr gaussian_rsample(const DiagonalGaussian& d, const TensorPtr& noise) {
  return add(d.mean, mul(d.stddev, noise));
}

TensorPtr gaussian_log_prob(const DiagonalGaussian& d, const TensorPtr& x) {
  if (x->shape != d.mean->shape) {
    throw ShapeError("gaussian_log_prob: dimension mismatch " +
                     shape_str(x->shape) + " vs " + shape_str(d.mean->shape));
  }
  auto z = div(sub(x, d.mean), d.stddev);
  auto per_dim = add_scalar(
      neg(add(log(d.stddev), scalar_mul(square(z), 0.5))), -0.5 * kLogTwoPi);
  return sum_last(per_dim);
}

SquashedSample squashed_policy_sample(const DiagonalGaussian& pre,
                                      const TensorPtr& noise) {
  auto u = gaussian_rsample(pre, noise);
  auto action = tanh(u);
  auto base_lp = gaussian_log_prob(pre, u);
  // log det of the tanh Jacobian: sum log(1 - a^2 + 1e-6)
  auto correction = sum_last(log(add_scalar(neg(square(action)), 1.0 + 1e-6)));
  return {action, sub(base_lp, correction)};
}

TensorPtr reward_log_lik(const TensorPtr& predicted_mean, const TensorPtr& r) {
  auto sq = square(sub(r, predicted_mean));
  return add_scalar(scalar_mul(sq, -0.5), -0.5 * kLogTwoPi);
}

}  // namespace repo::dist
