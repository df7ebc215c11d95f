#include "repo/tensor.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <sstream>

namespace repo::num {

namespace {

thread_local Tape* g_tape = nullptr;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void check_finite_or_throw(const Tensor& t, const char* op) {
  for (double v : t.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite output value");
    }
  }
}

bool should_record(std::initializer_list<TensorPtr> inputs) {
  if (g_tape == nullptr) return false;
  for (const auto& t : inputs) {
    if (t->requires_grad) return true;
  }
  return false;
}

TensorPtr make_result(std::vector<int> shape, std::vector<double> data,
                      std::vector<TensorPtr> parents,
                      std::function<void(Tensor&)> backprop) {
  auto out = std::make_shared<Tensor>();
  out->shape = std::move(shape);
  out->data = std::move(data);
  if (!parents.empty() && g_tape != nullptr) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      out->requires_grad = true;
      out->parents = std::move(parents);
      out->backprop = std::move(backprop);
      g_tape->record(out);
    }
  }
  return out;
}

// Broadcast classification for elementwise binary ops.
enum class Bcast { kSame, kLastAxis };

Bcast classify(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape == b.shape) return Bcast::kSame;
  if (b.rank() == 1 && a.rank() >= 1 && a.shape.back() == b.shape[0]) {
    return Bcast::kLastAxis;
  }
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape) +
                   " and " + shape_str(b.shape) + " do not conform");
}

template <typename Fwd>
TensorPtr binary_op(const TensorPtr& a, const TensorPtr& b, const char* op,
                    Fwd fwd,
                    std::function<void(Tensor&, const TensorPtr&,
                                       const TensorPtr&, Bcast)>
                        backprop) {
  Bcast mode = classify(*a, *b, op);
  std::vector<double> out(a->size());
  const std::size_t n = a->size();
  if (mode == Bcast::kSame) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a->data[i], b->data[i]);
  } else {
    const std::size_t m = b->size();
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(a->data[i], b->data[i % m]);
  }
  if (!should_record({a, b})) {
    return make_result(a->shape, std::move(out), {}, nullptr);
  }
  return make_result(
      a->shape, std::move(out), {a, b},
      [a, b, mode, backprop](Tensor& self) { backprop(self, a, b, mode); });
}

template <typename Fwd, typename Bwd>
TensorPtr unary_op(const TensorPtr& a, const char* op, Fwd fwd, Bwd dfn,
                   bool domain_check = false) {
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < a->size(); ++i) out[i] = fwd(a->data[i]);
  auto result = make_result(
      a->shape, std::move(out), {a}, [a, dfn](Tensor& self) {
        a->ensure_grad();
        for (std::size_t i = 0; i < self.data.size(); ++i) {
          a->grad[i] += self.grad[i] * dfn(a->data[i], self.data[i]);
        }
      });
  if (domain_check) check_finite_or_throw(*result, op);
  return result;
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data,
                      bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  }
  auto t = std::make_shared<Tensor>();
  t->shape = std::move(shape);
  t->data = std::move(data);
  t->requires_grad = requires_grad;
  return t;
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, 0.0),
                     requires_grad);
}

TensorPtr full(std::vector<int> shape, double value) {
  std::size_t n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(n, value));
}

TensorPtr scalar(double value) { return make_tensor({1}, {value}); }

bool all_finite(const Tensor& t) {
  for (double v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tape::backward(const TensorPtr& root) {
  if (!root->is_scalar()) {
    throw std::invalid_argument("backward: root must be scalar-shaped, got " +
                                shape_str(root->shape));
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Tensor& node = **it;
    if (node.grad.empty() || !node.backprop) continue;
    node.backprop(node);
  }
}

Tape* active_tape() { return g_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_tape) { g_tape = &tape; }
TapeScope::~TapeScope() { g_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_tape) { g_tape = nullptr; }
NoGradScope::~NoGradScope() { g_tape = prev_; }

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](Tensor& self, const TensorPtr& a, const TensorPtr& b, Bcast mode) {
        a->ensure_grad();
        b->ensure_grad();
        const std::size_t n = self.data.size();
        const std::size_t m = b->size();
        for (std::size_t i = 0; i < n; ++i) {
          a->grad[i] += self.grad[i];
          b->grad[mode == Bcast::kSame ? i : i % m] += self.grad[i];
        }
      });
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  return binary_op(
      a, b, "subtract", [](double x, double y) { return x - y; },
      [](Tensor& self, const TensorPtr& a, const TensorPtr& b, Bcast mode) {
        a->ensure_grad();
        b->ensure_grad();
        const std::size_t n = self.data.size();
        const std::size_t m = b->size();
        for (std::size_t i = 0; i < n; ++i) {
          a->grad[i] += self.grad[i];
          b->grad[mode == Bcast::kSame ? i : i % m] -= self.grad[i];
        }
      });
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  return binary_op(
      a, b, "multiply", [](double x, double y) { return x * y; },
      [](Tensor& self, const TensorPtr& a, const TensorPtr& b, Bcast mode) {
        a->ensure_grad();
        b->ensure_grad();
        const std::size_t n = self.data.size();
        const std::size_t m = b->size();
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t j = mode == Bcast::kSame ? i : i % m;
          a->grad[i] += self.grad[i] * b->data[j];
          b->grad[j] += self.grad[i] * a->data[i];
        }
      });
}

TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
  return binary_op(
      a, b, "divide", [](double x, double y) { return x / y; },
      [](Tensor& self, const TensorPtr& a, const TensorPtr& b, Bcast mode) {
        a->ensure_grad();
        b->ensure_grad();
        const std::size_t n = self.data.size();
        const std::size_t m = b->size();
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t j = mode == Bcast::kSame ? i : i % m;
          a->grad[i] += self.grad[i] / b->data[j];
          b->grad[j] -= self.grad[i] * a->data[i] / (b->data[j] * b->data[j]);
        }
      });
}

TensorPtr scalar_mul(const TensorPtr& a, double c) {
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < a->size(); ++i) out[i] = a->data[i] * c;
  return make_result(a->shape, std::move(out), {a}, [a, c](Tensor& self) {
    a->ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      a->grad[i] += self.grad[i] * c;
    }
  });
}

TensorPtr add_scalar(const TensorPtr& a, double c) {
  std::vector<double> out(a->size());
  for (std::size_t i = 0; i < a->size(); ++i) out[i] = a->data[i] + c;
  return make_result(a->shape, std::move(out), {a}, [a](Tensor& self) {
    a->ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      a->grad[i] += self.grad[i];
    }
  });
}

TensorPtr neg(const TensorPtr& a) { return scalar_mul(a, -1.0); }

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
    throw ShapeError("matmul: shapes " + shape_str(a->shape) + " and " +
                     shape_str(b->shape) + " do not conform");
  }
  const int n = a->shape[0], k = a->shape[1], m = b->shape[1];
  std::vector<double> out(static_cast<std::size_t>(n) * m);
  {
    ConstMatMap am(a->data.data(), n, k);
    ConstMatMap bm(b->data.data(), k, m);
    MatMap(out.data(), n, m).noalias() = am * bm;
  }
  return make_result(
      {n, m}, std::move(out), {a, b}, [a, b, n, k, m](Tensor& self) {
        a->ensure_grad();
        b->ensure_grad();
        ConstMatMap g(self.grad.data(), n, m);
        ConstMatMap am(a->data.data(), n, k);
        ConstMatMap bm(b->data.data(), k, m);
        MatMap(a->grad.data(), n, k).noalias() += g * bm.transpose();
        MatMap(b->grad.data(), k, m).noalias() += am.transpose() * g;
      });
}

TensorPtr exp(const TensorPtr& a) {
  for (double v : a->data) {
    if (v > 709.0) throw NumericError("exp: argument overflows");
  }
  return unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

TensorPtr sqrt(const TensorPtr& a) {
  for (double v : a->data) {
    if (v < 0.0) {
      throw NumericError("sqrt: negative argument " + std::to_string(v));
    }
  }
  return unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / std::max(y, 1e-12); });
}

TensorPtr log(const TensorPtr& a) {
  for (double v : a->data) {
    if (v <= 0.0) {
      throw NumericError("log: non-positive argument " + std::to_string(v));
    }
  }
  return unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

TensorPtr tanh(const TensorPtr& a) {
  return unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

TensorPtr sigmoid(const TensorPtr& a) {
  return unary_op(
      a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

TensorPtr elu(const TensorPtr& a) {
  return unary_op(
      a, "elu", [](double x) { return x > 0.0 ? x : std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

TensorPtr softplus(const TensorPtr& a) {
  return unary_op(
      a, "softplus",
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

TensorPtr square(const TensorPtr& a) {
  return unary_op(
      a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

TensorPtr sum(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  return make_result({1}, {s}, {a}, [a](Tensor& self) {
    a->ensure_grad();
    for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += self.grad[0];
  });
}

TensorPtr mean(const TensorPtr& a) {
  double s = 0.0;
  for (double v : a->data) s += v;
  const double inv = 1.0 / static_cast<double>(a->size());
  return make_result({1}, {s * inv}, {a}, [a, inv](Tensor& self) {
    a->ensure_grad();
    for (std::size_t i = 0; i < a->size(); ++i) {
      a->grad[i] += self.grad[0] * inv;
    }
  });
}

TensorPtr sum_last(const TensorPtr& a) {
  if (a->rank() < 2) {
    return sum(a);
  }
  const int last = a->shape.back();
  std::vector<int> out_shape(a->shape.begin(), a->shape.end() - 1);
  const std::size_t rows = shape_numel(out_shape);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int j = 0; j < last; ++j) out[r] += a->data[r * last + j];
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [a, rows, last](Tensor& self) {
                       a->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (int j = 0; j < last; ++j) {
                           a->grad[r * last + j] += self.grad[r];
                         }
                       }
                     });
}

TensorPtr concat_last(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != b->rank()) {
    throw ShapeError("concat: rank mismatch " + shape_str(a->shape) + " vs " +
                     shape_str(b->shape));
  }
  for (int i = 0; i + 1 < a->rank(); ++i) {
    if (a->shape[i] != b->shape[i]) {
      throw ShapeError("concat: leading dims differ " + shape_str(a->shape) +
                       " vs " + shape_str(b->shape));
    }
  }
  const int la = a->shape.back(), lb = b->shape.back();
  std::vector<int> out_shape = a->shape;
  out_shape.back() = la + lb;
  std::vector<int> lead(a->shape.begin(), a->shape.end() - 1);
  const std::size_t rows = lead.empty() ? 1 : shape_numel(lead);
  std::vector<double> out(rows * (la + lb));
  for (std::size_t r = 0; r < rows; ++r) {
    for (int j = 0; j < la; ++j) out[r * (la + lb) + j] = a->data[r * la + j];
    for (int j = 0; j < lb; ++j) {
      out[r * (la + lb) + la + j] = b->data[r * lb + j];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a, b},
                     [a, b, rows, la, lb](Tensor& self) {
                       a->ensure_grad();
                       b->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (int j = 0; j < la; ++j) {
                           a->grad[r * la + j] += self.grad[r * (la + lb) + j];
                         }
                         for (int j = 0; j < lb; ++j) {
                           b->grad[r * lb + j] +=
                               self.grad[r * (la + lb) + la + j];
                         }
                       }
                     });
}

TensorPtr slice_last(const TensorPtr& a, int offset, int len) {
  const int last = a->shape.back();
  if (offset < 0 || len <= 0 || offset + len > last) {
    throw ShapeError("slice: [" + std::to_string(offset) + "," +
                     std::to_string(offset + len) + ") out of range for " +
                     shape_str(a->shape));
  }
  std::vector<int> out_shape = a->shape;
  out_shape.back() = len;
  std::vector<int> lead(a->shape.begin(), a->shape.end() - 1);
  const std::size_t rows = lead.empty() ? 1 : shape_numel(lead);
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    for (int j = 0; j < len; ++j) {
      out[r * len + j] = a->data[r * last + offset + j];
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a},
                     [a, rows, last, offset, len](Tensor& self) {
                       a->ensure_grad();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (int j = 0; j < len; ++j) {
                           a->grad[r * last + offset + j] +=
                               self.grad[r * len + j];
                         }
                       }
                     });
}

TensorPtr stop_gradient(const TensorPtr& a) {
  // Value node with no parents: blocks reverse flow.
  return make_tensor(a->shape, a->data, false);
}

}  // namespace repo::num
