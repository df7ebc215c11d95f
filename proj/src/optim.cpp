#include "repo/optim.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace repo::num {

TensorPtr ParamStore::add(const std::string& name, TensorPtr t) {
  if (index_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  t->requires_grad = true;
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return items_.back().second;
}

const TensorPtr& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw std::invalid_argument("unknown parameter: " + name);
  }
  return items_[it->second].second;
}

bool ParamStore::has(const std::string& name) const {
  return index_.count(name) != 0;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t->size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : items_) t->zero_grad();
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : items_) {
    for (double v : t->data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

void Adam::step(ParamStore& params) {
  // A non-finite gradient anywhere skips the whole update.
  for (const auto& [name, t] : params.items()) {
    if (t->grad.empty()) continue;
    for (double g : t->grad) {
      if (!std::isfinite(g)) {
        ++skipped_;
        params.zero_grad();
        ++step_count_;
        return;
      }
    }
  }
  ++step_count_;
  const double t_ = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (auto& [name, p] : params.items()) {
    if (p->grad.empty()) continue;
    AdamState& st = state_[name];
    if (st.first_moment.size() != p->size()) {
      st.first_moment.assign(p->size(), 0.0);
      st.second_moment.assign(p->size(), 0.0);
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = p->grad[i];
      st.first_moment[i] = cfg_.beta1 * st.first_moment[i] + (1.0 - cfg_.beta1) * g;
      st.second_moment[i] =
          cfg_.beta2 * st.second_moment[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = st.first_moment[i] / bc1;
      const double v_hat = st.second_moment[i] / bc2;
      p->data[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
  params.zero_grad();
}

double global_grad_norm(const ParamStore& params) {
  double ss = 0.0;
  for (const auto& [name, t] : params.items()) {
    for (double g : t->grad) ss += g * g;
  }
  return std::sqrt(ss);
}

void clip_grads_global_norm(ParamStore& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (norm <= max_norm || norm == 0.0) return;
  const double scale = max_norm / norm;
  for (const auto& [name, t] : params.items()) {
    for (double& g : const_cast<std::vector<double>&>(t->grad)) g *= scale;
  }
}

double grad_check(const std::function<TensorPtr(const TensorPtr&)>& fn,
                  const std::vector<double>& point, double step) {
  const int n = static_cast<int>(point.size());
  std::vector<double> analytic(n, 0.0);
  {
    Tape tape;
    TapeScope scope(tape);
    auto x = make_tensor({n}, point, true);
    auto y = fn(x);
    if (!y->is_scalar()) {
      throw std::invalid_argument("grad_check: function must be scalar-valued");
    }
    tape.backward(y);
    if (!x->grad.empty()) analytic = x->grad;
  }
  double max_err = 0.0;
  for (int i = 0; i < n; ++i) {
    auto eval = [&](double delta) {
      NoGradScope nograd;
      std::vector<double> p = point;
      p[i] += delta;
      auto x = make_tensor({n}, p);
      return fn(x)->data[0];
    };
    const double numeric = (eval(step) - eval(-step)) / (2.0 * step);
    const double err =
        std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace repo::num
