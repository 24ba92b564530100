#include "radgen/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "radgen/error.hpp"

namespace radgen {

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

thread_local int no_grad_depth = 0;

Tensor make_op(Shape shape, std::vector<double> values, std::vector<NodePtr> parents,
               std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->leaf = false;
  if (grad_enabled()) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(fn);
    }
  }
  return Tensor(std::move(n));
}

// Parent's gradient buffer if it participates in backward, else nullptr.
double* grad_of(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

// C[m x n] += A[m x k] * B[k x n]. Each output row depends only on the same
// row of A, accumulated in a fixed k order.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double a0 = ai[p], a1 = ai[p + 1], a2 = ai[p + 2], a3 = ai[p + 3];
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j) {
        double v = ci[j];
        v += a0 * b0[j];
        v += a1 * b1[j];
        v += a2 * b2[j];
        v += a3 * b3[j];
        ci[j] = v;
      }
    }
    for (; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x k] += G[m x n] * B[k x n]^T
// Four rows of G share each pass over B; every output keeps its own
// sequential sum, so row results do not depend on m.
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* g0 = g + i * n;
    const double* g1 = g0 + n;
    const double* g2 = g1 + n;
    const double* g3 = g2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = bp[j];
        s0 += g0[j] * bv;
        s1 += g1[j] * bv;
        s2 += g2[j] * bv;
        s3 += g3[j] * bv;
      }
      c[i * k + p] += s0;
      c[(i + 1) * k + p] += s1;
      c[(i + 2) * k + p] += s2;
      c[(i + 3) * k + p] += s3;
    }
  }
  for (; i < m; ++i) {
    const double* gi = g + i * n;
    double* ci = c + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const double* b0 = b + p * n;
      const double* b1 = b0 + n;
      const double* b2 = b1 + n;
      const double* b3 = b2 + n;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double gv = gi[j];
        s0 += gv * b0[j];
        s1 += gv * b1[j];
        s2 += gv * b2[j];
        s3 += gv * b3[j];
      }
      ci[p] += s0;
      ci[p + 1] += s1;
      ci[p + 2] += s2;
      ci[p + 3] += s3;
    }
    for (; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      ci[p] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * G[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * k;
    const double* g0 = g + i * n;
    const double* g1 = g0 + n;
    const double* g2 = g1 + n;
    const double* g3 = g2 + n;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        double v = cp[j];
        v += v0 * g0[j];
        v += v1 * g1[j];
        v += v2 * g2[j];
        v += v3 * g3[j];
        cp[j] = v;
      }
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
    }
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return make_op(x.shape(), std::move(out), {x.node()}, [deriv](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& xin = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xin[i], self.value[i]);
    }
  });
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return no_grad_depth == 0; }
NoGradGuard::NoGradGuard() { ++no_grad_depth; }
NoGradGuard::~NoGradGuard() { --no_grad_depth; }

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  if (values.size() != shape_size(shape)) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = from(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rank() == 2 ? node_->shape[0] : 1; }
std::size_t Tensor::cols() const { return rank() == 0 ? 1 : node_->shape.back(); }
std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw std::logic_error("mutable_values() on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
  node_->requires_grad = on;
  if (!on) node_->grad.clear();
}

bool Tensor::is_leaf() const { return node_->leaf; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  if (size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !p->leaf && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients are recomputed from scratch; leaves accumulate.
  for (Node* n : order) {
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return make_op({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = grad_of(self, 0)) gemm_nt(g, self.parents[1]->value.data(), ga, m, n, k);
    if (double* gb = grad_of(self, 1)) gemm_tn(self.parents[0]->value.data(), g, gb, m, k, n);
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return make_op({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    double* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (double* g = grad_of(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op(a.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double factor) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return make_op(a.shape(), std::move(out), {a.node()}, [factor](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  require_rank(bias, 1, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.size() != n) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  const auto xv = x.values(), bv = bias.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return make_op(x.shape(), std::move(out), {x.node(), bias.node()}, [m, n](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    if (double* g = grad_of(self, 1))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
  });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax_rows(const Tensor& x) {
  if (x.rank() != 1 && x.rank() != 2) {
    throw ShapeError("softmax_rows: expected rank 1 or 2, got " + shape_string(x.shape()));
  }
  const std::size_t m = x.rows(), n = x.cols();
  const auto xv = x.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return make_op(x.shape(), std::move(out), {x.node()}, [m, n](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.value.data() + i * n;
      const double* g = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.shape()[0], d = x.shape()[1];
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  const auto xv = x.values(), gv = gain.values(), bv = bias.values();
  std::vector<double> out(m * d), xhat(m * d), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xv.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mu) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gv[j] + bv[j];
    }
  }
  return make_op(x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
                 [m, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const auto& gv = self.parents[1]->value;
                   const double* g = self.grad.data();
                   if (double* gg = grad_of(self, 1))
                     for (std::size_t i = 0; i < m * d; ++i) gg[i % d] += g[i] * xhat[i];
                   if (double* gb = grad_of(self, 2))
                     for (std::size_t i = 0; i < m * d; ++i) gb[i % d] += g[i];
                   double* gx = grad_of(self, 0);
                   if (!gx) return;
                   std::vector<double> dxhat(d);
                   for (std::size_t i = 0; i < m; ++i) {
                     double mean_d = 0.0, mean_dx = 0.0;
                     for (std::size_t j = 0; j < d; ++j) {
                       dxhat[j] = g[i * d + j] * gv[j];
                       mean_d += dxhat[j];
                       mean_dx += dxhat[j] * xhat[i * d + j];
                     }
                     mean_d /= static_cast<double>(d);
                     mean_dx /= static_cast<double>(d);
                     for (std::size_t j = 0; j < d; ++j) {
                       gx[i * d + j] +=
                           inv_std[i] * (dxhat[j] - mean_d - xhat[i * d + j] * mean_dx);
                     }
                   }
                 });
}

Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId pad_id) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t t_len = logits.shape()[0], v = logits.shape()[1];
  if (targets.size() != t_len) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t_len) + " logit rows");
  }
  const auto lv = logits.values();
  std::vector<double> probs(t_len * v, 0.0);
  std::vector<TokenId> tgt(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < t_len; ++t) {
    if (tgt[t] == pad_id) continue;
    if (tgt[t] < 0 || static_cast<std::size_t>(tgt[t]) >= v) {
      throw ShapeError("cross_entropy: target id " + std::to_string(tgt[t]) +
                       " out of range for " + std::to_string(v) + " classes");
    }
    const double* row = lv.data() + t * v;
    const double mx = *std::max_element(row, row + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[t * v + j] = std::exp(row[j] - mx);
      s += probs[t * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[t * v + j] /= s;
    total += (mx + std::log(s)) - row[tgt[t]];
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every target position is padding");
  const double denom = static_cast<double>(count);
  return make_op({}, {total / denom}, {logits.node()},
                 [t_len, v, pad_id, denom, probs = std::move(probs),
                  tgt = std::move(tgt)](Node& self) {
                   double* gl = grad_of(self, 0);
                   if (!gl) return;
                   const double g = self.grad[0] / denom;
                   for (std::size_t t = 0; t < t_len; ++t) {
                     if (tgt[t] == pad_id) continue;
                     for (std::size_t j = 0; j < v; ++j) gl[t * v + j] += g * probs[t * v + j];
                     gl[t * v + static_cast<std::size_t>(tgt[t])] -= g;
                   }
                 });
}

Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> targets) {
  if (targets.size() != logits.size()) {
    throw ShapeError("binary_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(logits.size()) + " logits");
  }
  const auto z = logits.values();
  const std::size_t n = z.size();
  std::vector<double> y(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::max(z[i], 0.0) - z[i] * y[i] + std::log1p(std::exp(-std::abs(z[i])));
  }
  return make_op({}, {total / static_cast<double>(n)}, {logits.node()},
                 [n, y = std::move(y)](Node& self) {
                   double* gz = grad_of(self, 0);
                   if (!gz) return;
                   const auto& z = self.parents[0]->value;
                   const double g = self.grad[0] / static_cast<double>(n);
                   for (std::size_t i = 0; i < n; ++i) {
                     const double s = z[i] >= 0 ? 1.0 / (1.0 + std::exp(-z[i]))
                                                : std::exp(z[i]) / (1.0 + std::exp(z[i]));
                     gz[i] += g * (s - y[i]);
                   }
                 });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_op({}, {s}, {x.node()}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  const auto xv = x.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  const double inv = 1.0 / static_cast<double>(m);
  for (auto& v : out) v *= inv;
  return make_op({n}, std::move(out), {x.node()}, [m, n, inv](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t v = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  std::vector<TokenId> idx(ids.begin(), ids.end());
  for (auto id : idx) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw ShapeError("embedding: token id " + std::to_string(id) + " out of range for " +
                       std::to_string(v) + " rows");
    }
  }
  const auto tv = table.values();
  std::vector<double> out(idx.size() * d);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    std::copy_n(tv.data() + static_cast<std::size_t>(idx[t]) * d, d, out.data() + t * d);
  }
  const std::size_t count = idx.size();
  return make_op({count, d}, std::move(out), {table.node()},
                 [d, idx = std::move(idx)](Node& self) {
                   double* g = grad_of(self, 0);
                   if (!g) return;
                   for (std::size_t t = 0; t < idx.size(); ++t)
                     for (std::size_t j = 0; j < d; ++j)
                       g[static_cast<std::size_t>(idx[t]) * d + j] += self.grad[t * d + j];
                 });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  const auto xv = x.values();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(xv.size()), out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out[i] = xv[i] * mask[i];
  }
  return make_op(x.shape(), std::move(out), {x.node()}, [mask = std::move(mask)](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < mask.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  std::vector<NodePtr> parents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.rows() != m) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    widths.push_back(p.cols());
    parents.push_back(p.node());
    total += p.cols();
  }
  std::vector<double> out(m * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return make_op({m, total}, std::move(out), std::move(parents),
                 [m, total, widths = std::move(widths)](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     if (double* g = grad_of(self, k))
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < widths[k]; ++j)
                           g[i * widths[k] + j] += self.grad[i * total + off + j];
                     off += widths[k];
                   }
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin >= end || end > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(x.shape()));
  }
  const std::size_t w = end - begin;
  const auto xv = x.values();
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(xv.data() + i * n + begin, w, out.data() + i * w);
  return make_op({m, w}, std::move(out), {x.node()}, [m, n, w, begin](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::vector<NodePtr> parents;
  std::vector<std::size_t> sizes;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 1 && p.rank() != 2) throw ShapeError("concat_rows: expected rank 1 or 2");
    if (p.cols() != n) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts[0].shape()) + " vs " +
                       shape_string(p.shape()));
    }
    rows += p.rows();
    sizes.push_back(p.size());
    parents.push_back(p.node());
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return make_op({rows, n}, std::move(out), std::move(parents),
                 [sizes = std::move(sizes)](Node& self) {
                   std::size_t off = 0;
                   for (std::size_t k = 0; k < sizes.size(); ++k) {
                     if (double* g = grad_of(self, k))
                       for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
                     off += sizes[k];
                   }
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin >= end || end > m) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_string(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * n),
                          xv.begin() + static_cast<std::ptrdiff_t>(end * n));
  return make_op({end - begin, n}, std::move(out), {x.node()}, [begin, n](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * n + i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op(std::move(shape), std::move(out), {x.node()}, [](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank(x, 3, "conv2d");
  require_rank(weight, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const std::size_t c_in = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t c_out = weight.shape()[0], k = weight.shape()[2];
  if (weight.shape()[1] != c_in || weight.shape()[3] != k || bias.size() != c_out) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " / bias " +
                     shape_string(bias.shape()) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  if (stride == 0 || h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel larger than padded input " + shape_string(x.shape()));
  }
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (w + 2 * padding - k) / stride + 1;
  const auto xv = x.values(), wv = weight.values(), bv = bias.values();
  std::vector<double> out(c_out * ho * wo);
  // Visits every (output, input tap) pair that lands inside the image.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox)
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                        static_cast<std::ptrdiff_t>(padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                fn((o * ho + oy) * wo + ox,
                   (c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix),
                   ((o * c_in + c) * k + ky) * k + kx);
              }
            }
  };
  for (std::size_t o = 0; o < c_out; ++o)
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * ho * wo), ho * wo, bv[o]);
  for_taps([&](std::size_t oi, std::size_t xi, std::size_t wi) { out[oi] += xv[xi] * wv[wi]; });
  return make_op({c_out, ho, wo}, std::move(out), {x.node(), weight.node(), bias.node()},
                 [for_taps, c_out, ho, wo](Node& self) {
                   const auto& xv = self.parents[0]->value;
                   const auto& wv = self.parents[1]->value;
                   double* gx = grad_of(self, 0);
                   double* gw = grad_of(self, 1);
                   double* gb = grad_of(self, 2);
                   const double* g = self.grad.data();
                   if (gb)
                     for (std::size_t o = 0; o < c_out; ++o)
                       for (std::size_t i = 0; i < ho * wo; ++i) gb[o] += g[o * ho * wo + i];
                   if (!gx && !gw) return;
                   for_taps([&](std::size_t oi, std::size_t xi, std::size_t wi) {
                     if (gx) gx[xi] += g[oi] * wv[wi];
                     if (gw) gw[wi] += g[oi] * xv[xi];
                   });
                 });
}

Tensor channels_to_rows(const Tensor& x) {
  require_rank(x, 3, "channels_to_rows");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t hw = h * w;
  const auto xv = x.values();
  std::vector<double> out(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = xv[ch * hw + p];
  return make_op({hw, c}, std::move(out), {x.node()}, [c, hw](Node& self) {
    if (double* g = grad_of(self, 0))
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) g[ch * hw + p] += self.grad[p * c + ch];
  });
}

}  // namespace radgen
