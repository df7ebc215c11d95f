#include "repo/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace repo::adapt {

using namespace repo::num;
using worlds::Episode;
using worlds::PointmassEnv;

SupportLosses support_losses(const TensorPtr& x_train, const TensorPtr& x_test,
                             const BatchFn& tau_fn, const BatchFn& f_fn,
                             double lambda) {
  if (x_train->shape[0] == 0 || x_test->shape[0] == 0) {
    throw std::invalid_argument("support_losses: empty batch");
  }
  auto tau_tr = tau_fn(x_train);
  auto f_tr = f_fn(x_train);
  auto f_te = f_fn(x_test);
  auto e_tau = mean(tau_tr);
  auto train_term = mean(mul(tau_tr, f_tr));
  auto test_term = mean(add(f_te, scalar_mul(square(f_te), 0.25)));
  auto constraint = scalar_mul(add_scalar(e_tau, -1.0), lambda);
  auto expr = add(sub(train_term, test_term), constraint);

  SupportLosses out;
  out.min_player = expr;
  out.max_player = neg(expr);
  out.metrics.expression = expr->data[0];
  out.metrics.e_tau = e_tau->data[0];
  out.metrics.mean_f_train = mean(f_tr)->data[0];
  out.metrics.mean_f_test = mean(f_te)->data[0];
  return out;
}

TensorPtr calibration_loss(const TensorPtr& h_train, const TensorPtr& h_test) {
  if (h_train->shape[0] == 0) {
    throw std::invalid_argument("calibration_loss: empty pair set");
  }
  auto diff = sub(stop_gradient(h_train), h_test);
  return mean(sum_last(square(diff)));
}

GanLosses distribution_matching_losses(const TensorPtr& x_train,
                                       const TensorPtr& x_test,
                                       const BatchFn& f_fn) {
  auto l_tr = f_fn(x_train);
  auto l_te = f_fn(x_test);
  GanLosses out;
  // -log sigma(l_tr) - log(1 - sigma(l_te)) = softplus(-l_tr) + softplus(l_te)
  out.critic_loss =
      add(mean(softplus(neg(l_tr))), mean(softplus(l_te)));
  out.encoder_loss = mean(softplus(neg(l_te)));
  int correct = 0;
  for (double v : l_tr->data) correct += v > 0.0;
  for (double v : l_te->data) correct += v <= 0.0;
  out.accuracy = static_cast<double>(correct) /
                 (l_tr->data.size() + l_te->data.size());
  return out;
}

TensorPtr pairwise_consistency_loss(const TensorPtr& latents,
                                    const TensorPtr& latents_true) {
  const int n = latents->shape[0];
  if (latents_true->shape != latents->shape) {
    throw ShapeError("pairwise_consistency_loss: shape mismatch");
  }
  if (n < 2) throw std::invalid_argument("need at least one pair");
  // Fixed consecutive-difference matrix, (n-1, n).
  std::vector<double> d(static_cast<std::size_t>(n - 1) * n, 0.0);
  for (int i = 0; i + 1 < n; ++i) {
    d[static_cast<std::size_t>(i) * n + i] = 1.0;
    d[static_cast<std::size_t>(i) * n + i + 1] = -1.0;
  }
  auto diff_mat = make_tensor({n - 1, n}, std::move(d));
  auto dist = [&](const TensorPtr& z) {
    return sqrt(add_scalar(sum_last(square(matmul(diff_mat, z))), 1e-12));
  };
  return mean(square(sub(dist(latents), dist(stop_gradient(latents_true)))));
}

namespace {
constexpr int kVdbBottleneck = 64;
constexpr double kVdbKlWeight = 0.1;
}  // namespace

RatioNets::RatioNets(int in_dim, int hidden, ParamStore& tau_store,
                     ParamStore& f_store, bool use_vdb, Rng& rng)
    : tau_net_(tau_store, "tau", in_dim, hidden, 2, 1, rng),
      f_net_(f_store, "f", in_dim, hidden, 2,
             use_vdb ? 2 * kVdbBottleneck : 1, rng),
      use_vdb_(use_vdb) {
  if (use_vdb) {
    f_out_ = nn::Linear(f_store, "f_out", kVdbBottleneck, 1, rng);
  }
}

TensorPtr RatioNets::tau(const TensorPtr& x) const {
  return softplus(sum_last(tau_net_(x)));
}

TensorPtr RatioNets::f(const TensorPtr& x, Rng& rng, TensorPtr* kl_out) const {
  if (!use_vdb_) return sum_last(f_net_(x));
  auto params = f_net_(x);
  dist::DiagonalGaussian bottleneck{
      slice_last(params, 0, kVdbBottleneck),
      dist::stddev_from_raw(slice_last(params, kVdbBottleneck, kVdbBottleneck))};
  auto noise = make_tensor(
      {x->shape[0], kVdbBottleneck},
      rng.normal_vec(static_cast<std::size_t>(x->shape[0]) * kVdbBottleneck));
  auto z = dist::gaussian_rsample(bottleneck, noise);
  if (kl_out != nullptr) {
    dist::DiagonalGaussian unit{zeros({x->shape[0], kVdbBottleneck}),
                                full({x->shape[0], kVdbBottleneck}, 1.0)};
    *kl_out = scalar_mul(mean(dist::gaussian_kl(bottleneck, unit)),
                         kVdbKlWeight);
  }
  return sum_last(f_out_(z));
}

PixelAdapter::PixelAdapter(const rssm::Rssm& model,
                           const ParamStore& model_params,
                           const behavior::Actor& actor,
                           const ParamStore& actor_params,
                           const trainer::ReplayBuffer& train_buffer,
                           const worlds::DomainSpec& train_domain,
                           const worlds::DomainSpec& test_domain,
                           const AdaptConfig& cfg, std::uint64_t seed)
    : model_(model),
      model_params_(model_params),
      actor_(actor),
      actor_params_(actor_params),
      train_buffer_(train_buffer),
      train_domain_(train_domain),
      test_domain_(test_domain),
      cfg_(cfg),
      encoder_opt_({cfg.encoder_lr}),
      tau_opt_({cfg.tau_lr}),
      f_opt_({cfg.f_lr}),
      lambda_(cfg.lambda_init),
      test_buffer_(100000),
      test_env_(test_domain),
      rng_(seed * 92821 + 5) {
  const auto& mc = model_.config();
  test_encoder_ = nn::Mlp(encoder_store_, "test_encoder", mc.obs_dim,
                          mc.encoder_hidden, mc.encoder_layers, mc.embed_dim,
                          rng_);
  // Start from the frozen training encoder.
  for (auto& [name, t] : encoder_store_.items()) {
    const std::string src = "encoder" + name.substr(std::string("test_encoder").size());
    t->data = model_params_.get(src)->data;
  }
  nets_ = std::make_unique<RatioNets>(mc.embed_dim, cfg_.ratio_hidden,
                                      tau_store_, f_store_, cfg_.use_vdb, rng_);
}

std::uint64_t PixelAdapter::frozen_checksum() const {
  return model_params_.checksum() * 1099511628211ULL ^ actor_params_.checksum();
}

trainer::EncodeFn PixelAdapter::encoder() const {
  return [this](const TensorPtr& obs) { return test_encoder_(obs); };
}

void PixelAdapter::collect_calibration() {
  PointmassEnv env(train_domain_);
  for (int traj = 0; traj < cfg_.calibration_trajectories; ++traj) {
    env.reset();
    for (int t = 0; t < worlds::kEpisodeLen; ++t) {
      auto [o_train, o_test] =
          worlds::paired_render(env.state(), train_domain_, test_domain_);
      calib_train_.insert(calib_train_.end(), o_train.begin(), o_train.end());
      calib_test_.insert(calib_test_.end(), o_test.begin(), o_test.end());
      ++calib_count_;
      env.step(worlds::expert_action(env.state()));
    }
  }
}

void PixelAdapter::seed_test_buffer() {
  for (int i = 0; i < cfg_.seed_episodes; ++i) {
    test_buffer_.add(trainer::collect_random_episode(test_env_, rng_));
  }
}

void PixelAdapter::update_once() {
  const auto pre = frozen_checksum();
  const int obs_dim = model_.config().obs_dim;
  auto x_tr_obs = train_buffer_.sample_observations(cfg_.batch, rng_);
  auto x_te_obs = test_buffer_.sample_observations(cfg_.batch, rng_);

  TensorPtr o_ctr, o_cte;
  if (cfg_.use_calibration) {
    if (calib_count_ == 0) {
      throw std::logic_error("calibration enabled but no pairs collected");
    }
    const int n = std::min(cfg_.batch, calib_count_);
    std::vector<double> tr(static_cast<std::size_t>(n) * obs_dim);
    std::vector<double> te(tr.size());
    for (int i = 0; i < n; ++i) {
      const std::size_t pick = rng_.uniform_int(calib_count_);
      std::copy_n(&calib_train_[pick * obs_dim], obs_dim,
                  &tr[static_cast<std::size_t>(i) * obs_dim]);
      std::copy_n(&calib_test_[pick * obs_dim], obs_dim,
                  &te[static_cast<std::size_t>(i) * obs_dim]);
    }
    o_ctr = make_tensor({n, obs_dim}, std::move(tr));
    o_cte = make_tensor({n, obs_dim}, std::move(te));
  }

  auto tau_fn = [&](const TensorPtr& x) { return nets_->tau(x); };
  auto f_fn = [&](const TensorPtr& x) { return nets_->f(x, rng_); };

  // Min players: test encoder (+ tau under the support objective).
  {
    Tape tape;
    TapeScope scope(tape);
    TensorPtr x_tr;
    {
      NoGradScope nograd;
      x_tr = model_.encode(x_tr_obs);
    }
    auto x_te = test_encoder_(x_te_obs);
    TensorPtr loss;
    if (cfg_.objective == AdaptObjective::kSupport) {
      loss = support_losses(x_tr, x_te, tau_fn, f_fn, lambda_).min_player;
    } else {
      loss = distribution_matching_losses(x_tr, x_te, f_fn).encoder_loss;
    }
    if (cfg_.use_calibration) {
      TensorPtr h_ctr;
      {
        NoGradScope nograd;
        h_ctr = model_.encode(o_ctr);
      }
      auto calib = calibration_loss(h_ctr, test_encoder_(o_cte));
      loss = add(loss, scalar_mul(calib, cfg_.calibration_weight));
    }
    tape.backward(loss);
    encoder_opt_.step(encoder_store_);
    if (cfg_.objective == AdaptObjective::kSupport) tau_opt_.step(tau_store_);
    tau_store_.zero_grad();
    f_store_.zero_grad();
  }

  // Max players: f (and analytically lambda) on detached encodings.
  {
    Tape tape;
    TapeScope scope(tape);
    TensorPtr x_tr, x_te;
    {
      NoGradScope nograd;
      x_tr = model_.encode(x_tr_obs);
      x_te = test_encoder_(x_te_obs);
    }
    TensorPtr loss;
    double e_tau = 1.0;
    if (cfg_.objective == AdaptObjective::kSupport) {
      TensorPtr detached_tau;
      {
        NoGradScope nograd;
        detached_tau = nets_->tau(x_tr);
      }
      auto table_tau = [&](const TensorPtr&) { return detached_tau; };
      TensorPtr kl;
      auto f_with_kl = [&](const TensorPtr& x) {
        return nets_->f(x, rng_, &kl);
      };
      auto losses = support_losses(x_tr, x_te, table_tau, f_with_kl, lambda_);
      loss = losses.max_player;
      if (kl != nullptr) loss = add(loss, kl);
      e_tau = losses.metrics.e_tau;
    } else {
      loss = distribution_matching_losses(x_tr, x_te, f_fn).critic_loss;
    }
    tape.backward(loss);
    f_opt_.step(f_store_);
    if (cfg_.objective == AdaptObjective::kSupport) {
      lambda_ += cfg_.lambda_step * (e_tau - 1.0);
    }
  }
  encoder_store_.zero_grad();
  tau_store_.zero_grad();
  f_store_.zero_grad();
  if (frozen_checksum() != pre) {
    throw std::logic_error("frozen model parameters changed during adaptation");
  }
}

AdaptCycleMetrics PixelAdapter::adapt_cycle() {
  AdaptCycleMetrics out;
  out.cycle = cycles_++;
  for (int c = 0; c < cfg_.updates_per_cycle; ++c) update_once();

  // Report current objective statistics on fresh batches.
  {
    NoGradScope nograd;
    auto x_tr = model_.encode(train_buffer_.sample_observations(cfg_.batch, rng_));
    auto x_te = test_encoder_(test_buffer_.sample_observations(cfg_.batch, rng_));
    auto tau_fn = [&](const TensorPtr& x) { return nets_->tau(x); };
    auto f_fn = [&](const TensorPtr& x) { return nets_->f(x, rng_); };
    if (cfg_.objective == AdaptObjective::kSupport) {
      auto losses = support_losses(x_tr, x_te, tau_fn, f_fn, lambda_);
      out.saddle = losses.metrics.expression;
      out.e_tau = losses.metrics.e_tau;
    } else {
      out.saddle = distribution_matching_losses(x_tr, x_te, f_fn)
                       .critic_loss->data[0];
    }
    if (cfg_.use_calibration && calib_count_ > 0) {
      const int n = std::min(cfg_.batch, calib_count_);
      const int obs_dim = model_.config().obs_dim;
      auto o_ctr = make_tensor(
          {n, obs_dim},
          std::vector<double>(calib_train_.begin(),
                              calib_train_.begin() +
                                  static_cast<std::size_t>(n) * obs_dim));
      auto o_cte = make_tensor(
          {n, obs_dim},
          std::vector<double>(calib_test_.begin(),
                              calib_test_.begin() +
                                  static_cast<std::size_t>(n) * obs_dim));
      out.calibration =
          calibration_loss(model_.encode(o_ctr), test_encoder_(o_cte))->data[0];
    }
  }
  out.lambda = lambda_;
  out.skipped_updates = encoder_opt_.skipped_updates() +
                        tau_opt_.skipped_updates() + f_opt_.skipped_updates();
  skipped_ = out.skipped_updates;

  int remaining = cfg_.env_steps_per_cycle;
  while (remaining > 0) {
    test_buffer_.add(trainer::collect_episode(test_env_, model_, actor_,
                                              behavior::ActMode::kExplore,
                                              rng_, encoder()));
    remaining -= worlds::kEpisodeLen;
  }
  return out;
}

double PixelAdapter::eval_return(int episodes, std::uint64_t eval_seed) {
  PointmassEnv env(worlds::DomainSpec{test_domain_.background_mode,
                                      test_domain_.pattern_pool,
                                      test_domain_.seed + eval_seed});
  Rng rng(eval_seed + 17);
  double total = 0.0;
  for (int i = 0; i < episodes; ++i) {
    auto ep = trainer::collect_episode(env, model_, actor_,
                                       behavior::ActMode::kEval, rng,
                                       encoder());
    for (double r : ep.rewards) total += r;
  }
  return total / episodes;
}

namespace {

TensorPtr gather_rows(const std::vector<double>& flat, int dim,
                      const std::vector<int>& idx) {
  std::vector<double> out(idx.size() * dim);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(&flat[static_cast<std::size_t>(idx[i]) * dim], dim,
                &out[i * dim]);
  }
  return make_tensor({static_cast<int>(idx.size()), dim}, std::move(out));
}

std::vector<int> random_indices(int n, int count, Rng& rng) {
  std::vector<int> idx(count);
  for (auto& v : idx) v = rng.uniform_int(n);
  return idx;
}

}  // namespace

ToyAdaptReport toy_adapt(const ToyAdaptConfig& cfg) {
  Rng rng(cfg.seed * 31337 + 11);
  auto train = worlds::toy_world_sample(cfg.train_samples,
                                        worlds::ToyDomain::kTrain, rng);
  auto test = worlds::toy_world_sample(cfg.test_samples,
                                       worlds::ToyDomain::kTest, rng);

  ParamStore enc_store, tau_store, f_store;
  nn::Mlp encoder(enc_store, "test_encoder", 2, cfg.encoder_hidden, 2, 2, rng);
  RatioNets nets(2, cfg.ratio_hidden, tau_store, f_store, false, rng);
  num::Adam enc_opt({cfg.encoder_lr}), tau_opt({cfg.tau_lr}),
      f_opt({cfg.f_lr});
  double lambda = cfg.lambda_init;

  // Calibration anchors: paired (observation, exact train encoding).
  std::vector<double> calib_obs, calib_latents;
  if (cfg.use_calibration) {
    for (int i = 0; i < cfg.calibration_points; ++i) {
      const double hi0 = cfg.skewed_calibration ? 0.75 : 3.0;
      const double hi1 = cfg.skewed_calibration ? 1.5 : 6.0;
      const double z0 = rng.uniform(0.0, hi0);
      const double z1 = rng.uniform(0.0, hi1);
      calib_latents.push_back(z0);
      calib_latents.push_back(z1);
      calib_obs.push_back(worlds::toy_emission(z0));
      calib_obs.push_back(worlds::toy_emission(z1));
    }
  }

  auto tau_fn = [&](const TensorPtr& x) { return nets.tau(x); };
  auto f_fn = [&](const TensorPtr& x) { return nets.f(x, rng); };

  ToyAdaptReport report;
  for (int it = 0; it < cfg.iterations; ++it) {
    auto tr_idx = random_indices(cfg.train_samples, cfg.batch, rng);
    auto te_idx = random_indices(cfg.test_samples, cfg.batch, rng);
    auto x_tr = gather_rows(train.latents, 2, tr_idx);  // exact encoder
    auto o_te = gather_rows(test.observations, 2, te_idx);

    // Min players.
    {
      Tape tape;
      TapeScope scope(tape);
      auto x_te = encoder(o_te);
      TensorPtr loss;
      if (cfg.objective == AdaptObjective::kSupport) {
        loss = support_losses(x_tr, x_te, tau_fn, f_fn, lambda).min_player;
      } else {
        loss = distribution_matching_losses(x_tr, x_te, f_fn).encoder_loss;
      }
      if (cfg.use_calibration) {
        auto idx = random_indices(cfg.calibration_points,
                                  std::min(cfg.batch, cfg.calibration_points),
                                  rng);
        auto h_true = gather_rows(calib_latents, 2, idx);
        auto h_test = encoder(gather_rows(calib_obs, 2, idx));
        loss = add(loss, scalar_mul(calibration_loss(h_true, h_test),
                                    cfg.calibration_weight));
      }
      if (cfg.use_pairwise) {
        auto z_true = gather_rows(test.latents, 2, te_idx);
        loss = add(loss, scalar_mul(pairwise_consistency_loss(x_te, z_true),
                                    cfg.pairwise_weight));
      }
      tape.backward(loss);
      enc_opt.step(enc_store);
      if (cfg.objective == AdaptObjective::kSupport) tau_opt.step(tau_store);
      tau_store.zero_grad();
      f_store.zero_grad();
    }

    // Max players.
    {
      Tape tape;
      TapeScope scope(tape);
      TensorPtr x_te, detached_tau;
      {
        NoGradScope nograd;
        x_te = encoder(o_te);
        detached_tau = nets.tau(x_tr);
      }
      TensorPtr loss;
      if (cfg.objective == AdaptObjective::kSupport) {
        auto table_tau = [&](const TensorPtr&) { return detached_tau; };
        auto losses = support_losses(x_tr, x_te, table_tau, f_fn, lambda);
        loss = losses.max_player;
        report.saddle = losses.metrics.expression;
        report.e_tau = losses.metrics.e_tau;
        lambda += cfg.lambda_step * (losses.metrics.e_tau - 1.0);
      } else {
        loss = distribution_matching_losses(x_tr, x_te, f_fn).critic_loss;
      }
      tape.backward(loss);
      f_opt.step(f_store);
      enc_store.zero_grad();
      tau_store.zero_grad();
    }
  }

  // Recovery error over the full test set.
  {
    NoGradScope nograd;
    auto o_all = make_tensor({cfg.test_samples, 2}, test.observations);
    auto z_hat = encoder(o_all);
    double total = 0.0;
    double mean0 = 0.0, mean1 = 0.0;
    for (int i = 0; i < cfg.test_samples; ++i) {
      mean0 += z_hat->data[2 * i];
      mean1 += z_hat->data[2 * i + 1];
    }
    mean0 /= cfg.test_samples;
    mean1 /= cfg.test_samples;
    double max_spread = 0.0;
    for (int i = 0; i < cfg.test_samples; ++i) {
      const double dx = z_hat->data[2 * i] - test.latents[2 * i];
      const double dy = z_hat->data[2 * i + 1] - test.latents[2 * i + 1];
      total += std::sqrt(dx * dx + dy * dy);
      const double sx = z_hat->data[2 * i] - mean0;
      const double sy = z_hat->data[2 * i + 1] - mean1;
      max_spread = std::max(max_spread, std::sqrt(sx * sx + sy * sy));
    }
    report.mean_l2_error = total / cfg.test_samples;
    report.degenerate = !cfg.use_calibration && max_spread < 1e-3;

    auto x_tr_all = make_tensor({cfg.train_samples, 2}, train.latents);
    report.e_tau = mean(nets.tau(x_tr_all))->data[0];
  }
  return report;
}

}  // namespace repo::adapt
