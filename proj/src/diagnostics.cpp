#include "repo/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "repo/optim.hpp"
#include "repo/rssm.hpp"
#include "repo/tensor.hpp"

namespace repo::diag {

namespace {

void check_rows(const std::vector<double>& table, std::size_t rows,
                std::size_t cols, const char* name) {
  if (table.size() != rows * cols) {
    throw std::invalid_argument(std::string(name) + ": wrong table size");
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = table[r * cols + c];
      if (v < 0.0) {
        throw std::invalid_argument(std::string(name) + ": negative entry");
      }
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw std::invalid_argument(std::string(name) +
                                  ": row does not sum to 1");
    }
  }
}

std::vector<double> random_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      // Exponential draws give a Dirichlet(1,...,1) row after normalizing.
      const double e = -std::log(1.0 - rng.uniform());
      out[r * cols + c] = e;
      sum += e;
    }
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= sum;
  }
  return out;
}

int ipow(int base, int e) {
  int v = 1;
  for (int i = 0; i < e; ++i) v *= base;
  return v;
}

/// Calls fn(prob, o_path, z_path) for every (o, z) trajectory under the
/// fixed action sequence.
void for_each_path(
    const DiscreteWorld& w, const std::vector<int>& actions,
    const std::function<void(double, const std::vector<int>&,
                             const std::vector<int>&)>& fn) {
  const int T = w.horizon;
  std::vector<int> o_path(T), z_path(T);
  std::function<void(int, double)> rec = [&](int t, double prob) {
    if (t == T) {
      fn(prob, o_path, z_path);
      return;
    }
    const int z_prev = t == 0 ? w.z0 : z_path[t - 1];
    for (int o = 0; o < w.no; ++o) {
      const double po = (t == 0 || w.obs_iid)
                            ? w.obs_init[o]
                            : w.otr(o_path[t - 1], actions[t], o);
      if (po == 0.0) continue;
      o_path[t] = o;
      for (int z = 0; z < w.nz; ++z) {
        const double pz = w.post(z_prev, actions[t], o, z);
        if (pz == 0.0) continue;
        z_path[t] = z;
        rec(t + 1, prob * po * pz);
      }
    }
  };
  rec(0, 1.0);
}

std::vector<int> decode_seq(int code, int base, int len) {
  std::vector<int> out(len);
  for (int t = 0; t < len; ++t) {
    out[t] = code % base;
    code /= base;
  }
  return out;
}

int encode_seq(const std::vector<int>& seq, int base) {
  int code = 0;
  for (int t = static_cast<int>(seq.size()) - 1; t >= 0; --t) {
    code = code * base + seq[t];
  }
  return code;
}

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

/// P(z_{1:T} = each code | actions), summed over observation paths.
std::vector<double> latent_seq_dist(const DiscreteWorld& w,
                                    const std::vector<int>& actions) {
  std::vector<double> pz(ipow(w.nz, w.horizon), 0.0);
  for_each_path(w, actions,
                [&](double prob, const std::vector<int>&,
                    const std::vector<int>& z_path) {
                  pz[encode_seq(z_path, w.nz)] += prob;
                });
  return pz;
}

double reward_seq_prob(const DiscreteWorld& w, const std::vector<int>& z_seq,
                       const std::vector<int>& r_seq) {
  double p = 1.0;
  for (int t = 0; t < w.horizon; ++t) p *= w.rew(z_seq[t], r_seq[t]);
  return p;
}

}  // namespace

void DiscreteWorld::validate() const {
  if (nz > 4 || no > 4 || na > 4 || nr > 4 || horizon > 4 || nz < 1 ||
      no < 1 || na < 1 || nr < 1 || horizon < 1) {
    throw std::invalid_argument("DiscreteWorld: outside enumerable regime");
  }
  if (z0 < 0 || z0 >= nz) throw std::invalid_argument("DiscreteWorld: z0");
  check_rows(posterior, static_cast<std::size_t>(nz) * na * no, nz,
             "posterior");
  check_rows(obs_init, 1, no, "obs_init");
  if (!obs_iid) {
    check_rows(obs_trans, static_cast<std::size_t>(no) * na, no, "obs_trans");
  }
  check_rows(reward, nz, nr, "reward");
}

DiscreteWorld DiscreteWorld::random(int nz, int no, int na, int nr,
                                    int horizon, bool obs_iid, Rng& rng) {
  DiscreteWorld w;
  w.nz = nz;
  w.no = no;
  w.na = na;
  w.nr = nr;
  w.horizon = horizon;
  w.obs_iid = obs_iid;
  w.posterior = random_rows(static_cast<std::size_t>(nz) * na * no, nz, rng);
  w.obs_init = random_rows(1, no, rng);
  w.obs_trans = obs_iid
                    ? std::vector<double>()
                    : random_rows(static_cast<std::size_t>(no) * na, no, rng);
  w.reward = random_rows(nz, nr, rng);
  w.validate();
  return w;
}

double exact_mi(const DiscreteWorld& w, MiTarget which) {
  w.validate();
  const int T = w.horizon;
  const int n_actions = ipow(w.na, T);
  const double pa = 1.0 / n_actions;
  double mi = 0.0;
  for (int a_code = 0; a_code < n_actions; ++a_code) {
    const auto actions = decode_seq(a_code, w.na, T);
    if (which == MiTarget::kObservation) {
      const int nzT = ipow(w.nz, T), noT = ipow(w.no, T);
      std::vector<double> joint(static_cast<std::size_t>(nzT) * noT, 0.0);
      for_each_path(w, actions,
                    [&](double prob, const std::vector<int>& o_path,
                        const std::vector<int>& z_path) {
                      joint[static_cast<std::size_t>(encode_seq(o_path, w.no)) *
                                nzT +
                            encode_seq(z_path, w.nz)] += prob;
                    });
      std::vector<double> po(noT, 0.0), pz(nzT, 0.0);
      for (int o = 0; o < noT; ++o) {
        for (int z = 0; z < nzT; ++z) {
          const double p = joint[static_cast<std::size_t>(o) * nzT + z];
          po[o] += p;
          pz[z] += p;
        }
      }
      for (int o = 0; o < noT; ++o) {
        for (int z = 0; z < nzT; ++z) {
          const double p = joint[static_cast<std::size_t>(o) * nzT + z];
          if (p > 0.0) mi += pa * p * std::log(p / (po[o] * pz[z]));
        }
      }
    } else {
      const auto pz = latent_seq_dist(w, actions);
      const int nzT = ipow(w.nz, T), nrT = ipow(w.nr, T);
      std::vector<double> pr(nrT, 0.0);
      std::vector<std::vector<int>> z_seqs(nzT), r_seqs(nrT);
      for (int z = 0; z < nzT; ++z) z_seqs[z] = decode_seq(z, w.nz, T);
      for (int r = 0; r < nrT; ++r) r_seqs[r] = decode_seq(r, w.nr, T);
      for (int z = 0; z < nzT; ++z) {
        if (pz[z] == 0.0) continue;
        for (int r = 0; r < nrT; ++r) {
          pr[r] += pz[z] * reward_seq_prob(w, z_seqs[z], r_seqs[r]);
        }
      }
      for (int z = 0; z < nzT; ++z) {
        if (pz[z] == 0.0) continue;
        for (int r = 0; r < nrT; ++r) {
          const double prz = reward_seq_prob(w, z_seqs[z], r_seqs[r]);
          if (prz > 0.0 && pr[r] > 0.0) {
            mi += pa * pz[z] * prz * std::log(prz / pr[r]);
          }
        }
      }
    }
  }
  return mi;
}

BoundReport reward_bound_check(const DiscreteWorld& w,
                               const std::vector<double>& q_r) {
  w.validate();
  check_rows(q_r, w.nz, w.nr, "q_r");
  const int T = w.horizon;
  const int n_actions = ipow(w.na, T);
  const double pa = 1.0 / n_actions;
  double expected_ll = 0.0;
  double reward_entropy = 0.0;
  for (int a_code = 0; a_code < n_actions; ++a_code) {
    const auto actions = decode_seq(a_code, w.na, T);
    const auto pz = latent_seq_dist(w, actions);
    const int nzT = ipow(w.nz, T), nrT = ipow(w.nr, T);
    for (int z = 0; z < nzT; ++z) {
      if (pz[z] == 0.0) continue;
      const auto z_seq = decode_seq(z, w.nz, T);
      for (int t = 0; t < T; ++t) {
        for (int r = 0; r < w.nr; ++r) {
          const double p = w.rew(z_seq[t], r);
          if (p > 0.0) {
            expected_ll +=
                pa * pz[z] * p *
                std::log(q_r[static_cast<std::size_t>(z_seq[t]) * w.nr + r]);
          }
        }
      }
    }
    std::vector<double> pr(nrT, 0.0);
    for (int z = 0; z < nzT; ++z) {
      if (pz[z] == 0.0) continue;
      const auto z_seq = decode_seq(z, w.nz, T);
      for (int r = 0; r < nrT; ++r) {
        pr[r] += pz[z] * reward_seq_prob(w, z_seq, decode_seq(r, w.nr, T));
      }
    }
    for (double p : pr) reward_entropy -= pa * xlogx(p);
  }
  BoundReport report;
  report.lhs = exact_mi(w, MiTarget::kReward);
  report.rhs = expected_ll + reward_entropy;
  report.holds = report.lhs >= report.rhs - 1e-9;
  return report;
}

BoundReport compression_bound_check(const DiscreteWorld& w,
                                    const std::vector<double>& q_z) {
  w.validate();
  check_rows(q_z, static_cast<std::size_t>(w.nz) * w.na, w.nz, "q_z");
  const int T = w.horizon;
  const int n_actions = ipow(w.na, T);
  const double pa = 1.0 / n_actions;
  double expected_gap = 0.0;
  for (int a_code = 0; a_code < n_actions; ++a_code) {
    const auto actions = decode_seq(a_code, w.na, T);
    for_each_path(
        w, actions,
        [&](double prob, const std::vector<int>& o_path,
            const std::vector<int>& z_path) {
          double gap = 0.0;
          for (int t = 0; t < T; ++t) {
            const int z_prev = t == 0 ? w.z0 : z_path[t - 1];
            const double post = w.post(z_prev, actions[t], o_path[t], z_path[t]);
            const double prior =
                q_z[(static_cast<std::size_t>(z_prev) * w.na + actions[t]) *
                        w.nz +
                    z_path[t]];
            gap += std::log(post) - std::log(prior);
          }
          expected_gap += pa * prob * gap;
        });
  }
  BoundReport report;
  report.lhs = exact_mi(w, MiTarget::kObservation);
  report.rhs = expected_gap;
  report.holds = report.rhs >= report.lhs - 1e-9;
  return report;
}

std::vector<double> marginal_latent_dynamics(const DiscreteWorld& w) {
  std::vector<double> q(static_cast<std::size_t>(w.nz) * w.na * w.nz, 0.0);
  for (int z = 0; z < w.nz; ++z) {
    for (int a = 0; a < w.na; ++a) {
      for (int o = 0; o < w.no; ++o) {
        for (int zn = 0; zn < w.nz; ++zn) {
          q[(static_cast<std::size_t>(z) * w.na + a) * w.nz + zn] +=
              w.obs_init[o] * w.post(z, a, o, zn);
        }
      }
    }
  }
  return q;
}

namespace {

std::vector<double> mlp_probe_predict(const std::vector<double>& x_train,
                                      const std::vector<double>& y_train,
                                      int n_train,
                                      const std::vector<double>& x_test,
                                      int n_test, int d, int k, Rng& rng) {
  using namespace repo::num;
  ParamStore store;
  nn::Mlp net(store, "probe", d, 64, 2, k, rng);
  Adam opt({1e-3});
  const int batch = std::min(128, n_train);
  for (int step = 0; step < 2000; ++step) {
    std::vector<double> xb(static_cast<std::size_t>(batch) * d);
    std::vector<double> yb(static_cast<std::size_t>(batch) * k);
    for (int i = 0; i < batch; ++i) {
      const int pick = rng.uniform_int(n_train);
      std::copy_n(&x_train[static_cast<std::size_t>(pick) * d], d,
                  &xb[static_cast<std::size_t>(i) * d]);
      std::copy_n(&y_train[static_cast<std::size_t>(pick) * k], k,
                  &yb[static_cast<std::size_t>(i) * k]);
    }
    Tape tape;
    TapeScope scope(tape);
    auto pred = net(make_tensor({batch, d}, std::move(xb)));
    auto loss = mean(sum_last(square(sub(pred, make_tensor({batch, k},
                                                           std::move(yb))))));
    tape.backward(loss);
    opt.step(store);
  }
  NoGradScope nograd;
  auto pred = net(make_tensor({n_test, d}, x_test));
  return pred->data;
}

}  // namespace

std::vector<double> probe_fit(const std::vector<double>& latents, int n,
                              int d, const std::vector<double>& targets,
                              int k, ProbeKind kind, std::uint64_t seed,
                              std::vector<double>* oof_predictions) {
  if (n < 10 * d) throw std::invalid_argument("probe_fit: need n >= 10 d");
  if (latents.size() != static_cast<std::size_t>(n) * d ||
      targets.size() != static_cast<std::size_t>(n) * k) {
    throw std::invalid_argument("probe_fit: size mismatch");
  }
  Rng rng(seed * 977 + 3);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) {
    std::swap(order[i], order[rng.uniform_int(i + 1)]);
  }

  std::vector<double> pred(static_cast<std::size_t>(n) * k, 0.0);
  constexpr int kFolds = 5;
  for (int fold = 0; fold < kFolds; ++fold) {
    const int lo = static_cast<int>(static_cast<long>(fold) * n / kFolds);
    const int hi = static_cast<int>(static_cast<long>(fold + 1) * n / kFolds);
    const int n_test = hi - lo, n_train = n - n_test;
    std::vector<double> xtr(static_cast<std::size_t>(n_train) * d);
    std::vector<double> ytr(static_cast<std::size_t>(n_train) * k);
    std::vector<double> xte(static_cast<std::size_t>(n_test) * d);
    std::vector<int> test_rows(n_test);
    int tr = 0, te = 0;
    for (int i = 0; i < n; ++i) {
      const int row = order[i];
      if (i >= lo && i < hi) {
        std::copy_n(&latents[static_cast<std::size_t>(row) * d], d,
                    &xte[static_cast<std::size_t>(te) * d]);
        test_rows[te++] = row;
      } else {
        std::copy_n(&latents[static_cast<std::size_t>(row) * d], d,
                    &xtr[static_cast<std::size_t>(tr) * d]);
        std::copy_n(&targets[static_cast<std::size_t>(row) * k], k,
                    &ytr[static_cast<std::size_t>(tr) * k]);
        ++tr;
      }
    }
    std::vector<double> fold_pred;
    if (kind == ProbeKind::kLinear) {
      // Ridge normal equations on [X 1].
      Eigen::MatrixXd x(n_train, d + 1), y(n_train, k);
      for (int i = 0; i < n_train; ++i) {
        for (int j = 0; j < d; ++j) {
          x(i, j) = xtr[static_cast<std::size_t>(i) * d + j];
        }
        x(i, d) = 1.0;
        for (int j = 0; j < k; ++j) {
          y(i, j) = ytr[static_cast<std::size_t>(i) * k + j];
        }
      }
      Eigen::MatrixXd gram = x.transpose() * x;
      gram.diagonal().array() += 1e-6;
      Eigen::MatrixXd weights = gram.ldlt().solve(x.transpose() * y);
      Eigen::MatrixXd xt(n_test, d + 1);
      for (int i = 0; i < n_test; ++i) {
        for (int j = 0; j < d; ++j) {
          xt(i, j) = xte[static_cast<std::size_t>(i) * d + j];
        }
        xt(i, d) = 1.0;
      }
      Eigen::MatrixXd yp = xt * weights;
      fold_pred.resize(static_cast<std::size_t>(n_test) * k);
      for (int i = 0; i < n_test; ++i) {
        for (int j = 0; j < k; ++j) {
          fold_pred[static_cast<std::size_t>(i) * k + j] = yp(i, j);
        }
      }
    } else {
      fold_pred =
          mlp_probe_predict(xtr, ytr, n_train, xte, n_test, d, k, rng);
    }
    for (int i = 0; i < n_test; ++i) {
      std::copy_n(&fold_pred[static_cast<std::size_t>(i) * k], k,
                  &pred[static_cast<std::size_t>(test_rows[i]) * k]);
    }
  }

  if (oof_predictions != nullptr) *oof_predictions = pred;

  std::vector<double> r2(k, 0.0);
  for (int j = 0; j < k; ++j) {
    double mean_y = 0.0;
    for (int i = 0; i < n; ++i) {
      mean_y += targets[static_cast<std::size_t>(i) * k + j];
    }
    mean_y /= n;
    double ss_res = 0.0, ss_tot = 0.0;
    for (int i = 0; i < n; ++i) {
      const double y = targets[static_cast<std::size_t>(i) * k + j];
      const double e = y - pred[static_cast<std::size_t>(i) * k + j];
      ss_res += e * e;
      ss_tot += (y - mean_y) * (y - mean_y);
    }
    r2[j] = 1.0 - ss_res / std::max(ss_tot, 1e-12);
  }
  return r2;
}

PcaResult pca_top2(const std::vector<double>& data, int n, int d) {
  if (n < 3) throw std::invalid_argument("pca_top2: need n >= 3");
  std::vector<double> mean(d, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      mean[j] += data[static_cast<std::size_t>(i) * d + j];
    }
  }
  for (auto& m : mean) m /= n;
  std::vector<double> cov(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int p = 0; p < d; ++p) {
      const double vp = data[static_cast<std::size_t>(i) * d + p] - mean[p];
      for (int q = p; q < d; ++q) {
        cov[static_cast<std::size_t>(p) * d + q] +=
            vp * (data[static_cast<std::size_t>(i) * d + q] - mean[q]);
      }
    }
  }
  double trace = 0.0;
  for (int p = 0; p < d; ++p) {
    for (int q = p; q < d; ++q) {
      cov[static_cast<std::size_t>(p) * d + q] /= n;
      cov[static_cast<std::size_t>(q) * d + p] =
          cov[static_cast<std::size_t>(p) * d + q];
    }
    trace += cov[static_cast<std::size_t>(p) * d + p];
  }

  PcaResult out;
  out.projections.assign(static_cast<std::size_t>(n) * 2, 0.0);
  if (trace < 1e-15) {
    out.degenerate = true;
    return out;
  }

  // Cyclic Jacobi eigendecomposition; rotations accumulate into vecs.
  std::vector<double> a = cov;
  std::vector<double> vecs(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) vecs[static_cast<std::size_t>(i) * d + i] = 1.0;
  auto at = [&](std::vector<double>& m, int i, int j) -> double& {
    return m[static_cast<std::size_t>(i) * d + j];
  };
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) off = std::max(off, std::abs(at(a, p, q)));
    }
    if (off < 1e-10 * std::max(1.0, trace)) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(a, p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int i = 0; i < d; ++i) {
          const double aip = at(a, i, p), aiq = at(a, i, q);
          at(a, i, p) = c * aip - s * aiq;
          at(a, i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < d; ++i) {
          const double api = at(a, p, i), aqi = at(a, q, i);
          at(a, p, i) = c * api - s * aqi;
          at(a, q, i) = s * api + c * aqi;
          const double vip = at(vecs, i, p), viq = at(vecs, i, q);
          at(vecs, i, p) = c * vip - s * viq;
          at(vecs, i, q) = s * vip + c * viq;
        }
      }
    }
  }

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    return at(a, i, i) > at(a, j, j);
  });
  for (int comp = 0; comp < 2 && comp < d; ++comp) {
    const int col = order[comp];
    // Sign convention: largest-magnitude entry positive.
    int arg = 0;
    for (int i = 1; i < d; ++i) {
      if (std::abs(at(vecs, i, col)) > std::abs(at(vecs, arg, col))) arg = i;
    }
    const double sign = at(vecs, arg, col) >= 0.0 ? 1.0 : -1.0;
    out.explained[comp] = std::max(0.0, at(a, col, col)) / trace;
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) {
        dot += (data[static_cast<std::size_t>(i) * d + j] - mean[j]) *
               sign * at(vecs, j, col);
      }
      out.projections[static_cast<std::size_t>(i) * 2 + comp] = dot;
    }
  }
  return out;
}

}  // namespace repo::diag
