#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "repo/rng.hpp"

namespace repo::diag {

/// Enumerable analogue of the filtering process: o' evolves exogenously,
/// z' is drawn from a posterior table given (z, a, o'), and rewards depend
/// on z alone. Small enough for exact trajectory sums.
struct DiscreteWorld {
  int nz{2}, no{2}, na{2}, nr{2};
  int horizon{2};
  int z0{0};
  bool obs_iid{false};  // o' ~ obs_init every step (history-free)

  std::vector<double> posterior;  // [z][a][o'][z'], rows over z' sum to 1
  std::vector<double> obs_init;   // [o]
  std::vector<double> obs_trans;  // [o][a][o']
  std::vector<double> reward;     // [z][r]

  double post(int z, int a, int o, int zn) const {
    return posterior[((static_cast<std::size_t>(z) * na + a) * no + o) * nz +
                     zn];
  }
  double otr(int o, int a, int on) const {
    return obs_trans[(static_cast<std::size_t>(o) * na + a) * no + on];
  }
  double rew(int z, int r) const {
    return reward[static_cast<std::size_t>(z) * nr + r];
  }

  /// Throws if any table row is not a distribution (1e-12 tolerance) or
  /// the sizes exceed the enumerable regime.
  void validate() const;

  static DiscreteWorld random(int nz, int no, int na, int nr, int horizon,
                              bool obs_iid, Rng& rng);
};

enum class MiTarget { kReward, kObservation };

/// Exact conditional mutual information I(z_{1:T}; r_{1:T} | a_{1:T}) or
/// I(z_{1:T}; o_{1:T} | a_{1:T}) in nats, uniform iid actions.
double exact_mi(const DiscreteWorld& world, MiTarget which);

struct BoundReport {
  double lhs{0.0};
  double rhs{0.0};
  bool holds{false};
};

/// Reward lower bound: I(z;r|a) >= E[sum_t log q_r(r_t|z_t)] + H(r|a).
/// q_r is a [z][r] table.
BoundReport reward_bound_check(const DiscreteWorld& world,
                               const std::vector<double>& q_r);

/// Compression upper bound: I(z;o|a) <= E[sum_t log p(z'|z,a,o') -
/// log q_z(z'|z,a)]. q_z is a [z][a][z'] table.
BoundReport compression_bound_check(const DiscreteWorld& world,
                                    const std::vector<double>& q_z);

/// Exact one-step latent dynamics marginalized over the stationary
/// observation draw; the tight q_z under history-free observations.
std::vector<double> marginal_latent_dynamics(const DiscreteWorld& world);

enum class ProbeKind { kLinear, kMlp };

/// Out-of-fold (5-fold) R-squared per target column. Linear probes solve
/// ridge normal equations; mlp probes train a small regressor. When
/// `oof_predictions` is given it receives the pooled n x k predictions.
std::vector<double> probe_fit(const std::vector<double>& latents, int n,
                              int d, const std::vector<double>& targets,
                              int k, ProbeKind kind, std::uint64_t seed = 0,
                              std::vector<double>* oof_predictions = nullptr);

struct PcaResult {
  std::vector<double> projections;  // n x 2
  std::array<double, 2> explained{0.0, 0.0};
  bool degenerate{false};  // zero total variance
};

/// Top-2 principal components via cyclic Jacobi (tol 1e-10); each
/// eigenvector's largest-magnitude entry is made positive.
PcaResult pca_top2(const std::vector<double>& data, int n, int d);

}  // namespace repo::diag
