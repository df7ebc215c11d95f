#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "repo/tensor.hpp"

namespace repo::num {

/// Named parameter tensors, iterated in insertion order.
class ParamStore {
 public:
  TensorPtr add(const std::string& name, TensorPtr t);
  const TensorPtr& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, TensorPtr>>& items() const {
    return items_;
  }
  std::size_t scalar_count() const;
  void zero_grad();
  /// FNV-1a over raw parameter bytes; used for frozen-model guarantees.
  std::uint64_t checksum() const;

 private:
  std::vector<std::pair<std::string, TensorPtr>> items_;
  std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

/// Bias-corrected Adam over a ParamStore. Non-finite gradients skip the
/// whole update and bump a warning counter.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void step(ParamStore& params);
  long step_count() const { return step_count_; }
  long skipped_updates() const { return skipped_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

 private:
  AdamConfig cfg_;
  std::map<std::string, AdamState> state_;
  long step_count_{0};
  long skipped_{0};
};

double global_grad_norm(const ParamStore& params);
void clip_grads_global_norm(ParamStore& params, double max_norm);

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<TensorPtr(const TensorPtr&)>& fn,
                  const std::vector<double>& point, double step = 1e-5);

}  // namespace repo::num
