#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "fusionact/common.hpp"

namespace fusionact {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad.data();
  }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
/// handle, not the storage; clone() makes a deep copy. Gradients accumulate
/// into the shared storage during Graph::backward.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);

  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng,
                        bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return impl_->values.size(); }

  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }
  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }

  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool b) { impl_->requires_grad = b; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  // Const on purpose: a Tensor is a handle, and backward closures hold
  // const copies of it while accumulating into the shared storage.
  double* grad_buffer() const { return impl_->grad_buffer(); }
  void zero_grad() { impl_->grad.clear(); }

  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode tape. Ops executed while a GraphScope is active append one
/// node each; execution order is a topological order, so the backward sweep
/// walks the list once in reverse. The tape is cleared after backward.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
  /// requires_grad tensor reachable from the recorded ops.
  void backward(const Tensor& loss);

  static Graph* active();
  void push(const char* op, std::vector<Tensor> inputs, Tensor output,
            std::function<void()> backward_fn);

 private:
  struct Node {
    const char* op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
};

/// RAII activation of a tape for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

namespace autograd {

/// Propagates requires_grad to `output` and, when a tape is active and some
/// input needs gradients, records the node.
void record(const char* op, std::vector<Tensor> inputs, Tensor& output,
            std::function<void()> backward_fn);

}  // namespace autograd

// Elementwise and reduction ops (all differentiable).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
/// c - x, elementwise.
Tensor rsub_scalar(double c, const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Shift-invariant softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Row-wise broadcast product: x [rows, cols] * s [rows, 1].
Tensor scale_rows(const Tensor& x, const Tensor& s);
/// Concatenation of [rows, ca] and [rows, cb] along the column axis.
Tensor hconcat(const Tensor& a, const Tensor& b);

bool all_finite(const Tensor& x);

/// Gradients of named parameters after a backward pass. Parameters without
/// an accumulated gradient map to a zero tensor of the right shape.
std::map<std::string, Tensor> named_gradients(
    const std::vector<std::pair<std::string, Tensor>>& params);

/// Max relative error between the analytic gradient of scalar-valued f at x
/// and central finite differences with step eps. eps must be in (0, 1e-2].
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, double eps);

}  // namespace fusionact
