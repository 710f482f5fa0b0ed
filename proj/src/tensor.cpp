#include "fusionact/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fusionact {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("shape dimensions must be positive, got " + shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  impl_ = std::make_shared<detail::TensorImpl>();
  std::size_t n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->values.assign(n, fill);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_to_string(shape));
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->values = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
  Tensor t(std::move(shape), 0.0, requires_grad);
  for (double& v : t.impl_->values) v = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item() requires a single-element tensor, got shape " +
                     shape_to_string(shape()));
  return impl_->values[0];
}

const std::vector<double>& Tensor::grad() const {
  if (impl_->grad.empty())
    throw ContractError("gradient has not been accumulated for this tensor");
  return impl_->grad;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<detail::TensorImpl>(*impl_);
  return t;
}

namespace {
thread_local Graph* g_active_graph = nullptr;
}

Graph* Graph::active() { return g_active_graph; }

void Graph::push(const char* op, std::vector<Tensor> inputs, Tensor output,
                 std::function<void()> backward_fn) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward_fn)});
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  loss.impl()->grad_buffer()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    // Nodes whose output never received a gradient contributed nothing to
    // the loss; skip them so their inputs stay untouched.
    if (!it->output.has_grad()) continue;
    it->backward_fn();
  }
  nodes_.clear();
}

GraphScope::GraphScope(Graph& graph) : previous_(g_active_graph) {
  g_active_graph = &graph;
}

GraphScope::~GraphScope() { g_active_graph = previous_; }

namespace autograd {

void record(const char* op, std::vector<Tensor> inputs, Tensor& output,
            std::function<void()> backward_fn) {
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  output.set_requires_grad(needs);
  Graph* g = Graph::active();
  if (g && needs) g->push(op, std::move(inputs), output, std::move(backward_fn));
}

}  // namespace autograd

namespace {

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  autograd::record("add", {a, b}, out, [a, b, out]() {
    const double* go = out.grad_buffer();
    std::size_t n = out.size();
    if (a.requires_grad()) {
      double* ga = a.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      double* gb = b.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
  autograd::record("sub", {a, b}, out, [a, b, out]() {
    const double* go = out.grad_buffer();
    std::size_t n = out.size();
    if (a.requires_grad()) {
      double* ga = a.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
    }
    if (b.requires_grad()) {
      double* gb = b.grad_buffer();
      for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  autograd::record("mul", {a, b}, out, [a, b, out]() {
    const double* go = out.grad_buffer();
    std::size_t n = out.size();
    if (a.requires_grad()) {
      double* ga = a.grad_buffer();
      const double* pb = b.data();
      for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * pb[i];
    }
    if (b.requires_grad()) {
      double* gb = b.grad_buffer();
      const double* pa = a.data();
      for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * pa[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = px[i] * c;
  autograd::record("scale", {x}, out, [x, out, c]() {
    const double* go = out.grad_buffer();
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < out.size(); ++i) gx[i] += go[i] * c;
  });
  return out;
}

Tensor add_scalar(const Tensor& x, double c) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = px[i] + c;
  autograd::record("add_scalar", {x}, out, [x, out]() {
    const double* go = out.grad_buffer();
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < out.size(); ++i) gx[i] += go[i];
  });
  return out;
}

Tensor rsub_scalar(double c, const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = c - px[i];
  autograd::record("rsub_scalar", {x}, out, [x, out]() {
    const double* go = out.grad_buffer();
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < out.size(); ++i) gx[i] -= go[i];
  });
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  autograd::record("relu", {x}, out, [x, out]() {
    const double* go = out.grad_buffer();
    const double* px = x.data();
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < out.size(); ++i)
      if (px[i] > 0.0) gx[i] += go[i];
  });
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = px[i];
    // Branch on sign so exp never sees a large positive argument.
    if (v >= 0.0) {
      po[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      po[i] = e / (1.0 + e);
    }
  }
  autograd::record("sigmoid", {x}, out, [x, out]() {
    const double* go = out.grad_buffer();
    const double* po = out.data();
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < out.size(); ++i)
      gx[i] += go[i] * po[i] * (1.0 - po[i]);
  });
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw ShapeError("softmax: axis out of range for shape " + shape_to_string(x.shape()));

  // Walk the axis as (outer, n, inner) strides so any rank works.
  std::size_t n = static_cast<std::size_t>(x.dim(axis));
  std::size_t inner = 1;
  for (int i = axis + 1; i < nd; ++i) inner *= static_cast<std::size_t>(x.dim(i));
  std::size_t outer = x.size() / (n * inner);

  Tensor out(x.shape());
  const double* px = x.data();
  double* po = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t base = o * n * inner + in;
      double mx = px[base];
      for (std::size_t k = 1; k < n; ++k) mx = std::max(mx, px[base + k * inner]);
      double denom = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        double e = std::exp(px[base + k * inner] - mx);
        po[base + k * inner] = e;
        denom += e;
      }
      for (std::size_t k = 0; k < n; ++k) po[base + k * inner] /= denom;
    }
  }
  autograd::record("softmax", {x}, out, [x, out, n, inner, outer]() {
    const double* go = out.grad_buffer();
    const double* po = out.data();
    double* gx = x.grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k)
          dot += go[base + k * inner] * po[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          std::size_t idx = base + k * inner;
          gx[idx] += po[idx] * (go[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += px[i];
  Tensor out = Tensor::scalar(total);
  autograd::record("sum", {x}, out, [x, out]() {
    double g = out.grad_buffer()[0];
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) total += px[i];
  double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(total * inv);
  autograd::record("mean", {x}, out, [x, out, inv]() {
    double g = out.grad_buffer()[0] * inv;
    double* gx = x.grad_buffer();
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g;
  });
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.ndim() != 2 || s.ndim() != 2 || s.dim(1) != 1 || s.dim(0) != x.dim(0))
    throw ShapeError("scale_rows: expected x [rows, cols] and s [rows, 1], got " +
                     shape_to_string(x.shape()) + " and " + shape_to_string(s.shape()));
  std::size_t rows = static_cast<std::size_t>(x.dim(0));
  std::size_t cols = static_cast<std::size_t>(x.dim(1));
  Tensor out(x.shape());
  const double* px = x.data();
  const double* ps = s.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] * ps[r];
  autograd::record("scale_rows", {x, s}, out, [x, s, out, rows, cols]() {
    const double* go = out.grad_buffer();
    if (x.requires_grad()) {
      double* gx = x.grad_buffer();
      const double* ps = s.data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += go[r * cols + c] * ps[r];
    }
    if (s.requires_grad()) {
      double* gs = s.grad_buffer();
      const double* px = x.data();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += go[r * cols + c] * px[r * cols + c];
        gs[r] += acc;
      }
    }
  });
  return out;
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0))
    throw ShapeError("hconcat: expected matrices with equal row counts, got " +
                     shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  std::size_t rows = static_cast<std::size_t>(a.dim(0));
  std::size_t ca = static_cast<std::size_t>(a.dim(1));
  std::size_t cb = static_cast<std::size_t>(b.dim(1));
  Tensor out({a.dim(0), a.dim(1) + b.dim(1)});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < ca; ++c) po[r * (ca + cb) + c] = pa[r * ca + c];
    for (std::size_t c = 0; c < cb; ++c) po[r * (ca + cb) + ca + c] = pb[r * cb + c];
  }
  autograd::record("hconcat", {a, b}, out, [a, b, out, rows, ca, cb]() {
    const double* go = out.grad_buffer();
    if (a.requires_grad()) {
      double* ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += go[r * (ca + cb) + c];
    }
    if (b.requires_grad()) {
      double* gb = b.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += go[r * (ca + cb) + ca + c];
    }
  });
  return out;
}

bool all_finite(const Tensor& x) {
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(px[i])) return false;
  return true;
}

std::map<std::string, Tensor> named_gradients(
    const std::vector<std::pair<std::string, Tensor>>& params) {
  std::map<std::string, Tensor> grads;
  for (const auto& [name, p] : params) {
    Tensor g(p.shape());
    if (p.has_grad()) g.values() = p.grad();
    grads.emplace(name, std::move(g));
  }
  return grads;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps) {
  if (!(eps > 0.0) || eps > 1e-2)
    throw ContractError("grad_check: eps must lie in (0, 1e-2], got " + std::to_string(eps));

  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  probe.zero_grad();  // the clone may carry gradient state from earlier passes
  {
    Graph graph;
    GraphScope scope(graph);
    Tensor y = f(probe);
    if (y.size() != 1)
      throw ContractError("grad_check: f must produce a scalar, got shape " +
                          shape_to_string(y.shape()));
    graph.backward(y);
  }
  std::vector<double> analytic(probe.size(), 0.0);
  if (probe.has_grad()) analytic = probe.grad();

  Tensor work = x.clone();
  work.set_requires_grad(false);
  double worst = 0.0;
  for (std::size_t i = 0; i < work.size(); ++i) {
    double orig = work.data()[i];
    work.data()[i] = orig + eps;
    double fp = f(work).item();
    work.data()[i] = orig - eps;
    double fm = f(work).item();
    work.data()[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double rel = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace fusionact
