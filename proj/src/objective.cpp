#include "repo/objective.hpp"

#include <cmath>
#include <stdexcept>

namespace repo::objective {

using namespace repo::num;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

BalancedKl balanced_kl(const DiagonalGaussian& posterior,
                       const DiagonalGaussian& prior, double alpha) {
  auto raw = dist::gaussian_kl(posterior, prior);
  auto prior_side = dist::gaussian_kl(dist::detached(posterior), prior);
  auto posterior_side = dist::gaussian_kl(posterior, dist::detached(prior));
  auto routed = add(scalar_mul(prior_side, alpha),
                    scalar_mul(posterior_side, 1.0 - alpha));
  return {routed, raw};
}

TensorPtr repo_model_loss(const rssm::Rssm& model,
                          const rssm::PosteriorRollout& rollout,
                          const std::vector<TensorPtr>& rewards,
                          const DualVariable& beta,
                          const BottleneckConfig& cfg,
                          ModelLossMetrics& metrics) {
  if (rollout.states.size() != rewards.size() || rewards.empty()) {
    throw std::invalid_argument("repo_model_loss: misaligned rollout");
  }
  const int L = static_cast<int>(rewards.size());
  TensorPtr ll_sum, kl_sum, raw_sum;
  for (int t = 0; t < L; ++t) {
    auto ll = mean(dist::reward_log_lik(model.reward_head(rollout.states[t]),
                                        rewards[t]));
    auto bkl = balanced_kl(rollout.posteriors[t], rollout.priors[t], cfg.alpha());
    auto kl = mean(bkl.grad_path);
    auto raw = mean(bkl.raw);
    ll_sum = t == 0 ? ll : add(ll_sum, ll);
    kl_sum = t == 0 ? kl : add(kl_sum, kl);
    raw_sum = t == 0 ? raw : add(raw_sum, raw);
  }
  const double inv_l = 1.0 / static_cast<double>(L);
  metrics.reward_ll = ll_sum->data[0] * inv_l;
  metrics.raw_kl_mean = raw_sum->data[0] * inv_l;
  auto loss = add(scalar_mul(ll_sum, -inv_l),
                  scalar_mul(kl_sum, beta.value() * inv_l));
  if (!all_finite(*loss)) {
    throw NumericError("repo_model_loss: non-finite loss");
  }
  return loss;
}

TensorPtr recon_model_loss(const rssm::Rssm& model,
                           const rssm::PosteriorRollout& rollout,
                           const std::vector<TensorPtr>& rewards,
                           const std::vector<TensorPtr>& observations,
                           const BottleneckConfig& cfg,
                           ModelLossMetrics& metrics) {
  if (observations.size() != rollout.states.size()) {
    throw std::invalid_argument("recon_model_loss: misaligned observations");
  }
  DualVariable unit = DualVariable::from_value(1.0, 0.0);
  auto base = repo_model_loss(model, rollout, rewards, unit, cfg, metrics);
  const int L = static_cast<int>(observations.size());
  TensorPtr px_sum;
  for (int t = 0; t < L; ++t) {
    // Gaussian pixel log-likelihood with sigma = kPixelStddev, averaged over
    // batch and pixels; the sharp likelihood makes reconstruction dominate
    // the ELBO the way a full-resolution image term would.
    auto pred = model.recon_head(rollout.states[t]);
    auto err = square(sub(observations[t], pred));
    auto ll = mean(add_scalar(
        scalar_mul(err, -0.5 / (kPixelStddev * kPixelStddev)),
        -std::log(kPixelStddev) - 0.5 * std::log(2.0 * kPi)));
    px_sum = t == 0 ? ll : add(px_sum, ll);
  }
  const double obs_dim = model.config().obs_dim;
  metrics.recon_ll = px_sum->data[0] / L;
  // Scale so pixels and rewards contribute comparably per timestep.
  auto loss = add(base, scalar_mul(px_sum, -1.0 / L * obs_dim));
  if (!all_finite(*loss)) {
    throw NumericError("recon_model_loss: non-finite loss");
  }
  return loss;
}

void dual_update(DualVariable& beta, double raw_kl_mean, double epsilon) {
  beta.raw += beta.step_size * (raw_kl_mean - epsilon);
  beta.clamp();
}

}  // namespace repo::objective
