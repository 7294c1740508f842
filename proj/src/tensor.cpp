#include "aidvar/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace aidvar {

namespace {
std::atomic<std::uint64_t> g_next_id{1};

NodePtr makeNode(std::vector<int> shape, std::vector<double> val) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->val = std::move(val);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

bool anyGrad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->node()->requires_grad || t->node()->backfn) return true;
  return false;
}

// Wires parents/backfn only when some input participates in the tape.
Tensor result(std::vector<int> shape, std::vector<double> val,
              std::initializer_list<const Tensor*> inputs,
              std::function<void(Node&)> backfn) {
  auto n = makeNode(std::move(shape), std::move(val));
  if (anyGrad(inputs)) {
    n->requires_grad = true;
    for (const Tensor* t : inputs) n->parents.push_back(t->node());
    n->backfn = std::move(backfn);
  }
  return Tensor(n);
}

void addInto(Node& dst, const std::vector<double>& g) {
  dst.ensureGrad();
  for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}
}  // namespace

std::size_t shapeNumel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension");
    n *= std::size_t(d);
  }
  return n;
}

std::string shapeStr(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i)
    os << shape[i] << (i + 1 < shape.size() ? "," : "");
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, bool requires_grad) {
  std::size_t n = shapeNumel(shape);
  node_ = makeNode(std::move(shape), std::vector<double>(n, 0.0));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values,
               bool requires_grad) {
  if (shapeNumel(shape) != values.size())
    throw ShapeError("value count does not match shape " + shapeStr(shape));
  node_ = makeNode(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw ContractError("backward requires scalar loss");
  // Collect the reachable subgraph, then replay in decreasing creation id.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const NodePtr& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](Node* a, Node* b) { return a->id > b->id; });
  for (Node* n : order) n->ensureGrad();
  loss.node()->grad[0] += 1.0;
  for (Node* n : order)
    if (n->backfn) n->backfn(*n);
  // Constants (leaves that do not require grad) act as sinks during the
  // sweep; keep their exposed gradient at zero so frozen parameters audit
  // clean.
  for (Node* n : order)
    if (!n->requires_grad && !n->backfn)
      std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

namespace ops {

namespace {
void checkSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shapeStr(a.shape()) + " vs " + shapeStr(b.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  checkSameShape(a, b, "add");
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + pb[i];
  return result(a.shape(), std::move(v), {&a, &b}, [](Node& n) {
    addInto(*n.parents[0], n.grad);
    addInto(*n.parents[1], n.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  checkSameShape(a, b, "sub");
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] - pb[i];
  return result(a.shape(), std::move(v), {&a, &b}, [](Node& n) {
    addInto(*n.parents[0], n.grad);
    Node& pb2 = *n.parents[1];
    pb2.ensureGrad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pb2.grad[i] -= n.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  checkSameShape(a, b, "mul");
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * pb[i];
  return result(a.shape(), std::move(v), {&a, &b}, [](Node& n) {
    Node& A = *n.parents[0];
    Node& B = *n.parents[1];
    A.ensureGrad();
    B.ensureGrad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      A.grad[i] += n.grad[i] * B.val[i];
      B.grad[i] += n.grad[i] * A.val[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] * c;
  return result(a.shape(), std::move(v), {&a}, [c](Node& n) {
    Node& A = *n.parents[0];
    A.ensureGrad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] += n.grad[i] * c;
  });
}

Tensor addConst(const Tensor& a, double c) {
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] + c;
  return result(a.shape(), std::move(v), {&a},
                [](Node& n) { addInto(*n.parents[0], n.grad); });
}

Tensor relu(const Tensor& a) {
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] > 0.0 ? pa[i] : 0.0;
  return result(a.shape(), std::move(v), {&a}, [](Node& n) {
    Node& A = *n.parents[0];
    A.ensureGrad();
    for (std::size_t i = 0; i < n.grad.size(); ++i)
      if (A.val[i] > 0.0) A.grad[i] += n.grad[i];
  });
}

Tensor gelu(const Tensor& a) {
  // Exact erf form; derivative: Phi(x) + x * phi(x).
  constexpr double kInvSqrt2 = 0.7071067811865476;
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = 0.5 * pa[i] * (1.0 + std::erf(pa[i] * kInvSqrt2));
  return result(a.shape(), std::move(v), {&a}, [=](Node& n) {
    Node& A = *n.parents[0];
    A.ensureGrad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double x = A.val[i];
      double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      A.grad[i] += n.grad[i] * (cdf + x * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    double x = pa[i];
    v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                    : std::exp(x) / (1.0 + std::exp(x));
  }
  return result(a.shape(), std::move(v), {&a}, [](Node& n) {
    Node& A = *n.parents[0];
    A.ensureGrad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      double s = n.val[i];
      A.grad[i] += n.grad[i] * s * (1.0 - s);
    }
  });
}

Tensor detach(const Tensor& a) {
  return Tensor(a.shape(), a.values(), false);
}

Tensor divByScalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("divByScalar: divisor must be scalar");
  double sv = s.data()[0];
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = pa[i] / sv;
  return result(a.shape(), std::move(v), {&a, &s}, [](Node& n) {
    Node& A = *n.parents[0];
    Node& S = *n.parents[1];
    A.ensureGrad();
    S.ensureGrad();
    double sv2 = S.val[0];
    double sgrad = 0.0;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      A.grad[i] += n.grad[i] / sv2;
      sgrad -= n.grad[i] * A.val[i] / (sv2 * sv2);
    }
    S.grad[0] += sgrad;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shapeStr(a.shape()) +
                     " x " + shapeStr(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> v(std::size_t(m) * n, 0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = pa[std::size_t(i) * k + p];
      const double* brow = pb + std::size_t(p) * n;
      double* vrow = v.data() + std::size_t(i) * n;
      for (int j = 0; j < n; ++j) vrow[j] += av * brow[j];
    }
  return result({m, n}, std::move(v), {&a, &b}, [m, k, n](Node& nd) {
    Node& A = *nd.parents[0];
    Node& B = *nd.parents[1];
    A.ensureGrad();
    B.ensureGrad();
    // dA = dC * B^T
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double g = nd.grad[std::size_t(i) * n + j];
        const double* brow = B.val.data();
        for (int p = 0; p < k; ++p)
          A.grad[std::size_t(i) * k + p] += g * brow[std::size_t(p) * n + j];
      }
    // dB = A^T * dC
    for (int p = 0; p < k; ++p)
      for (int i = 0; i < m; ++i) {
        double av = A.val[std::size_t(i) * k + p];
        const double* grow = nd.grad.data() + std::size_t(i) * n;
        double* brow = B.grad.data() + std::size_t(p) * n;
        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
      }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose: expects 2-D");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[std::size_t(j) * m + i] = pa[std::size_t(i) * n + j];
  return result({n, m}, std::move(v), {&a}, [m, n](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        A.grad[std::size_t(i) * n + j] += nd.grad[std::size_t(j) * m + i];
  });
}

Tensor addRow(const Tensor& a, const Tensor& row) {
  if (a.ndim() != 2 || row.ndim() != 1 || a.dim(1) != row.dim(0))
    throw ShapeError("addRow: shape mismatch");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  const double* pr = row.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      v[std::size_t(i) * n + j] = pa[std::size_t(i) * n + j] + pr[j];
  return result(a.shape(), std::move(v), {&a, &row}, [m, n](Node& nd) {
    Node& A = *nd.parents[0];
    Node& R = *nd.parents[1];
    A.ensureGrad();
    R.ensureGrad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double g = nd.grad[std::size_t(i) * n + j];
        A.grad[std::size_t(i) * n + j] += g;
        R.grad[j] += g;
      }
  });
}

Tensor rowMean(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("rowMean: expects 2-D");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(std::size_t(m), 0.0);
  const double* pa = a.data();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += pa[std::size_t(i) * n + j];
    v[std::size_t(i)] = s / n;
  }
  return result({m}, std::move(v), {&a}, [m, n](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (int i = 0; i < m; ++i) {
      double g = nd.grad[std::size_t(i)] / n;
      for (int j = 0; j < n; ++j) A.grad[std::size_t(i) * n + j] += g;
    }
  });
}

Tensor colMean(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("colMean: expects 2-D");
  const int m = a.dim(0), n = a.dim(1);
  std::vector<double> v(std::size_t(n), 0.0);
  const double* pa = a.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) v[std::size_t(j)] += pa[std::size_t(i) * n + j];
  for (int j = 0; j < n; ++j) v[std::size_t(j)] /= m;
  return result({n}, std::move(v), {&a}, [m, n](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        A.grad[std::size_t(i) * n + j] += nd.grad[std::size_t(j)] / m;
  });
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shapeNumel(shape) != a.numel())
    throw ShapeError("reshape: element count mismatch");
  return result(std::move(shape), a.values(), {&a},
                [](Node& nd) { addInto(*nd.parents[0], nd.grad); });
}

Tensor concatRows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concatRows: empty input");
  const int n = parts[0].dim(1);
  int mTotal = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != n)
      throw ShapeError("concatRows: column mismatch");
    mTotal += p.dim(0);
  }
  std::vector<double> v;
  v.reserve(std::size_t(mTotal) * n);
  bool grad = false;
  for (const Tensor& p : parts) {
    v.insert(v.end(), p.values().begin(), p.values().end());
    grad = grad || p.node()->requires_grad || p.node()->backfn != nullptr;
  }
  auto nd = makeNode({mTotal, n}, std::move(v));
  if (grad) {
    nd->requires_grad = true;
    for (const Tensor& p : parts) nd->parents.push_back(p.node());
    nd->backfn = [](Node& out) {
      std::size_t off = 0;
      for (const NodePtr& p : out.parents) {
        p->ensureGrad();
        for (std::size_t i = 0; i < p->val.size(); ++i)
          p->grad[i] += out.grad[off + i];
        off += p->val.size();
      }
    };
  }
  return Tensor(nd);
}

Tensor sliceRows(const Tensor& a, int r0, int r1) {
  if (a.ndim() != 2 || r0 < 0 || r1 > a.dim(0) || r0 >= r1)
    throw ShapeError("sliceRows: bad range");
  const int n = a.dim(1);
  std::vector<double> v(a.values().begin() + std::size_t(r0) * n,
                        a.values().begin() + std::size_t(r1) * n);
  return result({r1 - r0, n}, std::move(v), {&a}, [r0, n](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (std::size_t i = 0; i < nd.grad.size(); ++i)
      A.grad[std::size_t(r0) * n + i] += nd.grad[i];
  });
}

Tensor sumAll(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return result({1}, {s}, {&a}, [](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (double& g : A.grad) g += nd.grad[0];
  });
}

Tensor meanAll(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  double inv = 1.0 / double(a.numel());
  return result({1}, {s * inv}, {&a}, [inv](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (double& g : A.grad) g += nd.grad[0] * inv;
  });
}

Tensor softmax(const Tensor& a) {
  if (a.ndim() < 1) throw ShapeError("softmax: needs at least 1-D");
  const int V = a.shape().back();
  const std::size_t rows = a.numel() / std::size_t(V);
  std::vector<double> v(a.numel());
  const double* pa = a.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = pa + r * V;
    double* y = v.data() + r * V;
    double mx = x[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < V; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < V; ++j) y[j] /= z;
  }
  return result(a.shape(), std::move(v), {&a}, [V, rows](Node& nd) {
    Node& A = *nd.parents[0];
    A.ensureGrad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = nd.val.data() + r * V;
      const double* g = nd.grad.data() + r * V;
      double dot = 0.0;
      for (int j = 0; j < V; ++j) dot += y[j] * g[j];
      double* ga = A.grad.data() + r * V;
      for (int j = 0; j < V; ++j) ga[j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor crossEntropy(const Tensor& logits, std::span<const int> targets) {
  if (logits.ndim() != 2) throw ShapeError("crossEntropy: logits must be 2-D");
  const int N = logits.dim(0), V = logits.dim(1);
  if (int(targets.size()) != N)
    throw ShapeError("crossEntropy: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= V)
      throw ContractError("crossEntropy: target index out of range");
  const double* pl = logits.data();
  // Cache softmax probabilities for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(logits.numel());
  double loss = 0.0;
  for (int i = 0; i < N; ++i) {
    const double* x = pl + std::size_t(i) * V;
    double* y = probs->data() + std::size_t(i) * V;
    double mx = x[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < V; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < V; ++j) y[j] /= z;
    loss -= std::log(std::max(y[targets[std::size_t(i)]], 1e-300));
  }
  loss /= N;
  std::vector<int> tgt(targets.begin(), targets.end());
  return result({1}, {loss}, {&logits},
                [N, V, probs, tgt = std::move(tgt)](Node& nd) {
                  Node& L = *nd.parents[0];
                  L.ensureGrad();
                  double g = nd.grad[0] / N;
                  for (int i = 0; i < N; ++i) {
                    const double* y = probs->data() + std::size_t(i) * V;
                    double* gl = L.grad.data() + std::size_t(i) * V;
                    for (int j = 0; j < V; ++j) gl[j] += g * y[j];
                    gl[tgt[std::size_t(i)]] -= g;
                  }
                });
}

Tensor layerNorm(const Tensor& x, double eps, const Tensor& gain,
                 const Tensor& bias) {
  const int D = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != D || bias.ndim() != 1 ||
      bias.dim(0) != D)
    throw ShapeError("layerNorm: affine shape mismatch");
  const std::size_t rows = x.numel() / std::size_t(D);
  std::vector<double> v(x.numel());
  // Cache per-row (mean, invstd, clamped) for backward.
  auto stats = std::make_shared<std::vector<double>>(rows * 3);
  const double* px = x.data();
  const double* pg = gain.data();
  const double* pb = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = px + r * D;
    double mean = 0.0;
    for (int j = 0; j < D; ++j) mean += xr[j];
    mean /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= D;
    bool clamped = var < eps;
    double invstd = 1.0 / std::sqrt(clamped ? eps : var);
    (*stats)[r * 3] = mean;
    (*stats)[r * 3 + 1] = invstd;
    (*stats)[r * 3 + 2] = clamped ? 1.0 : 0.0;
    double* yr = v.data() + r * D;
    for (int j = 0; j < D; ++j)
      yr[j] = (xr[j] - mean) * invstd * pg[j] + pb[j];
  }
  return result(x.shape(), std::move(v), {&x, &gain, &bias},
                [D, rows, stats](Node& nd) {
                  Node& X = *nd.parents[0];
                  Node& G = *nd.parents[1];
                  Node& B = *nd.parents[2];
                  X.ensureGrad();
                  G.ensureGrad();
                  B.ensureGrad();
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean = (*stats)[r * 3];
                    double invstd = (*stats)[r * 3 + 1];
                    bool clamped = (*stats)[r * 3 + 2] > 0.5;
                    const double* xr = X.val.data() + r * D;
                    const double* g = nd.grad.data() + r * D;
                    // dL/d(normalized_j) = g_j * gain_j
                    double sumDy = 0.0, sumDyXhat = 0.0;
                    for (int j = 0; j < D; ++j) {
                      double xhat = (xr[j] - mean) * invstd;
                      double dy = g[j] * G.val[std::size_t(j)];
                      G.grad[std::size_t(j)] += g[j] * xhat;
                      B.grad[std::size_t(j)] += g[j];
                      sumDy += dy;
                      sumDyXhat += dy * xhat;
                    }
                    for (int j = 0; j < D; ++j) {
                      double xhat = (xr[j] - mean) * invstd;
                      double dy = g[j] * G.val[std::size_t(j)];
                      // Variance path vanishes when the floor is active.
                      double varTerm = clamped ? 0.0 : xhat * sumDyXhat / D;
                      X.grad[r * D + std::size_t(j)] +=
                          invstd * (dy - sumDy / D - varTerm);
                    }
                  }
                });
}

Tensor embedding(const Tensor& table, std::span<const int> idx) {
  if (table.ndim() != 2) throw ShapeError("embedding: table must be 2-D");
  const int V = table.dim(0), d = table.dim(1);
  const int N = int(idx.size());
  for (int i : idx)
    if (i < 0 || i >= V) throw ContractError("embedding: index out of range");
  std::vector<double> v(std::size_t(N) * d);
  const double* pt = table.data();
  for (int i = 0; i < N; ++i)
    std::copy_n(pt + std::size_t(idx[std::size_t(i)]) * d, d,
                v.data() + std::size_t(i) * d);
  std::vector<int> ix(idx.begin(), idx.end());
  return result({N, d}, std::move(v), {&table},
                [d, N, ix = std::move(ix)](Node& nd) {
                  Node& T = *nd.parents[0];
                  T.ensureGrad();
                  for (int i = 0; i < N; ++i) {
                    const double* g = nd.grad.data() + std::size_t(i) * d;
                    double* tg =
                        T.grad.data() + std::size_t(ix[std::size_t(i)]) * d;
                    for (int j = 0; j < d; ++j) tg[j] += g[j];
                  }
                });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw ShapeError("conv2d: expects x[C,H,W], w[Co,Ci,k,k]");
  const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Ci || w.dim(3) != k || k % 2 == 0)
    throw ShapeError("conv2d: weight shape mismatch (odd square kernel)");
  if (b.ndim() != 1 || b.dim(0) != Co) throw ShapeError("conv2d: bias shape");
  const int pad = k / 2;
  std::vector<double> v(std::size_t(Co) * H * W);
  const double* px = x.data();
  const double* pw = w.data();
  const double* pb = b.data();
  for (int co = 0; co < Co; ++co) {
    double* out = v.data() + std::size_t(co) * H * W;
    for (int i = 0; i < H * W; ++i) out[i] = pb[co];
    for (int ci = 0; ci < Ci; ++ci) {
      const double* in = px + std::size_t(ci) * H * W;
      const double* ker = pw + (std::size_t(co) * Ci + ci) * k * k;
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          double kv = ker[dy * k + dx];
          if (kv == 0.0) continue;
          int oy0 = std::max(0, pad - dy), oy1 = std::min(H, H + pad - dy);
          int ox0 = std::max(0, pad - dx), ox1 = std::min(W, W + pad - dx);
          for (int oy = oy0; oy < oy1; ++oy) {
            const double* irow = in + std::size_t(oy + dy - pad) * W;
            double* orow = out + std::size_t(oy) * W;
            for (int ox = ox0; ox < ox1; ++ox)
              orow[ox] += kv * irow[ox + dx - pad];
          }
        }
    }
  }
  return result({Co, H, W}, std::move(v), {&x, &w, &b},
                [Ci, H, W, Co, k, pad](Node& nd) {
                  Node& X = *nd.parents[0];
                  Node& Wt = *nd.parents[1];
                  Node& B = *nd.parents[2];
                  X.ensureGrad();
                  Wt.ensureGrad();
                  B.ensureGrad();
                  for (int co = 0; co < Co; ++co) {
                    const double* gout = nd.grad.data() + std::size_t(co) * H * W;
                    double bsum = 0.0;
                    for (int i = 0; i < H * W; ++i) bsum += gout[i];
                    B.grad[std::size_t(co)] += bsum;
                    for (int ci = 0; ci < Ci; ++ci) {
                      const double* in = X.val.data() + std::size_t(ci) * H * W;
                      double* gin = X.grad.data() + std::size_t(ci) * H * W;
                      const double* ker =
                          Wt.val.data() + (std::size_t(co) * Ci + ci) * k * k;
                      double* gker =
                          Wt.grad.data() + (std::size_t(co) * Ci + ci) * k * k;
                      for (int dy = 0; dy < k; ++dy)
                        for (int dx = 0; dx < k; ++dx) {
                          double kv = ker[dy * k + dx];
                          double kg = 0.0;
                          int oy0 = std::max(0, pad - dy),
                              oy1 = std::min(H, H + pad - dy);
                          int ox0 = std::max(0, pad - dx),
                              ox1 = std::min(W, W + pad - dx);
                          for (int oy = oy0; oy < oy1; ++oy) {
                            const double* irow =
                                in + std::size_t(oy + dy - pad) * W;
                            double* girow =
                                gin + std::size_t(oy + dy - pad) * W;
                            const double* grow = gout + std::size_t(oy) * W;
                            for (int ox = ox0; ox < ox1; ++ox) {
                              kg += grow[ox] * irow[ox + dx - pad];
                              girow[ox + dx - pad] += grow[ox] * kv;
                            }
                          }
                          gker[dy * k + dx] += kg;
                        }
                    }
                  }
                });
}

Tensor nearestUpsample(const Tensor& x, int factor) {
  if (x.ndim() != 3) throw ShapeError("nearestUpsample: expects [C,H,W]");
  if (factor < 1) throw ShapeError("nearestUpsample: factor must be >= 1");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Ho = H * factor, Wo = W * factor;
  std::vector<double> v(std::size_t(C) * Ho * Wo);
  const double* px = x.data();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox)
        v[(std::size_t(c) * Ho + oy) * Wo + ox] =
            px[(std::size_t(c) * H + oy / factor) * W + ox / factor];
  return result({C, Ho, Wo}, std::move(v), {&x},
                [C, H, W, factor, Ho, Wo](Node& nd) {
                  Node& X = *nd.parents[0];
                  X.ensureGrad();
                  for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < Ho; ++oy)
                      for (int ox = 0; ox < Wo; ++ox)
                        X.grad[(std::size_t(c) * H + oy / factor) * W +
                               ox / factor] +=
                            nd.grad[(std::size_t(c) * Ho + oy) * Wo + ox];
                });
}

Tensor areaDownsample(const Tensor& x, int outH, int outW) {
  if (x.ndim() != 3) throw ShapeError("areaDownsample: expects [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (outH <= 0 || outW <= 0 || H % outH != 0 || W % outW != 0)
    throw ShapeError("areaDownsample: output size must divide input size");
  const int fy = H / outH, fx = W / outW;
  const double inv = 1.0 / (double(fy) * fx);
  std::vector<double> v(std::size_t(C) * outH * outW, 0.0);
  const double* px = x.data();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < outH; ++oy)
      for (int ox = 0; ox < outW; ++ox) {
        double s = 0.0;
        for (int dy = 0; dy < fy; ++dy)
          for (int dx = 0; dx < fx; ++dx)
            s += px[(std::size_t(c) * H + oy * fy + dy) * W + ox * fx + dx];
        v[(std::size_t(c) * outH + oy) * outW + ox] = s * inv;
      }
  return result({C, outH, outW}, std::move(v), {&x},
                [C, H, W, outH, outW, fy, fx, inv](Node& nd) {
                  Node& X = *nd.parents[0];
                  X.ensureGrad();
                  for (int c = 0; c < C; ++c)
                    for (int oy = 0; oy < outH; ++oy)
                      for (int ox = 0; ox < outW; ++ox) {
                        double g =
                            nd.grad[(std::size_t(c) * outH + oy) * outW + ox] *
                            inv;
                        for (int dy = 0; dy < fy; ++dy)
                          for (int dx = 0; dx < fx; ++dx)
                            X.grad[(std::size_t(c) * H + oy * fy + dy) * W +
                                   ox * fx + dx] += g;
                      }
                });
}

}  // namespace ops
}  // namespace aidvar
