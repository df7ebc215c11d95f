#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace repo::num {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major tensor of 64-bit floats, rank <= 3.
/// Immutable after creation except for gradient accumulation.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  bool requires_grad{false};
  std::vector<double> grad;  // empty until first accumulation

  // Recorded by the active tape for define-by-run reverse mode.
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backprop;

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  bool is_scalar() const { return data.size() == 1; }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.clear(); }
};

std::string shape_str(const std::vector<int>& shape);
std::size_t shape_numel(const std::vector<int>& shape);

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, double value);
TensorPtr scalar(double value);

bool all_finite(const Tensor& t);

/// Append-only record of operation outputs; creation order is topological.
class Tape {
 public:
  void record(const TensorPtr& t) { nodes_.push_back(t); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  /// Reverse sweep from a scalar root. Visits each node exactly once;
  /// gradients accumulate additively across fan-out.
  void backward(const TensorPtr& root);

 private:
  std::vector<TensorPtr> nodes_;
};

Tape* active_tape();

/// Installs a tape for the current thread; ops record onto it when any
/// input requires grad.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

/// Suppresses recording (pure forward evaluation).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;

 private:
  Tape* prev_;
};

// Kernels. Elementwise binary ops accept equal shapes, or a rank-1 right
// operand broadcast along the last axis of the left.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr div(const TensorPtr& a, const TensorPtr& b);
TensorPtr scalar_mul(const TensorPtr& a, double c);
TensorPtr add_scalar(const TensorPtr& a, double c);
TensorPtr neg(const TensorPtr& a);
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr exp(const TensorPtr& a);
TensorPtr sqrt(const TensorPtr& a);
TensorPtr log(const TensorPtr& a);
TensorPtr tanh(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr elu(const TensorPtr& a);
TensorPtr softplus(const TensorPtr& a);
TensorPtr square(const TensorPtr& a);
TensorPtr sum(const TensorPtr& a);
TensorPtr mean(const TensorPtr& a);
TensorPtr sum_last(const TensorPtr& a);   // reduce the last axis
TensorPtr concat_last(const TensorPtr& a, const TensorPtr& b);
TensorPtr slice_last(const TensorPtr& a, int offset, int len);
TensorPtr stop_gradient(const TensorPtr& a);

}  // namespace repo::num
