#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace aidvar {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded value in the computation graph. Nodes are numbered in creation
// order, which is a topological order by construction; backward() replays the
// reachable subgraph in decreasing id order.
struct Node {
  std::vector<int> shape;
  std::vector<double> val;
  std::vector<double> grad;  // allocated lazily, same length as val
  bool requires_grad{false};
  std::uint64_t id{0};
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backfn;  // scatters this->grad into parents

  void ensureGrad() {
    if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
  }
};

// Value-semantics handle onto a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<int> shape, bool requires_grad = false);
  Tensor(std::vector<int> shape, std::vector<double> values,
         bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }
  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  int ndim() const { return int(node_->shape.size()); }
  std::size_t numel() const { return node_->val.size(); }

  double* data() { return node_->val.data(); }
  const double* data() const { return node_->val.data(); }
  std::vector<double>& values() { return node_->val; }
  const std::vector<double>& values() const { return node_->val; }

  bool requiresGrad() const { return node_->requires_grad; }
  void setRequiresGrad(bool rg) { node_->requires_grad = rg; }
  std::vector<double>& grad() {
    node_->ensureGrad();
    return node_->grad;
  }
  void zeroGrad() {
    if (node_) node_->grad.assign(node_->val.size(), 0.0);
  }
  double item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor");
    return node_->val[0];
  }

  NodePtr node() const { return node_; }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

 private:
  NodePtr node_;
};

std::size_t shapeNumel(const std::vector<int>& shape);
std::string shapeStr(const std::vector<int>& shape);

// Runs reverse-mode accumulation from a scalar loss. Every tensor with
// requires_grad reachable from the loss receives (accumulates) its gradient.
void backward(const Tensor& loss);

namespace ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor addConst(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor detach(const Tensor& a);
// a / s with s a scalar tensor (gradients flow to both).
Tensor divByScalar(const Tensor& a, const Tensor& s);

// ---- linear algebra (2-D) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// [m,n] + [n] broadcast over rows.
Tensor addRow(const Tensor& a, const Tensor& row);
// mean over columns of [m,n] -> [m]
Tensor rowMean(const Tensor& a);
// mean over rows of [m,n] -> [n]
Tensor colMean(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concatRows(const std::vector<Tensor>& parts);
Tensor sliceRows(const Tensor& a, int r0, int r1);

// ---- reductions ----
Tensor sumAll(const Tensor& a);
Tensor meanAll(const Tensor& a);

// ---- neural-net primitives ----
// Softmax along the last axis, max-subtracted for stability.
Tensor softmax(const Tensor& a);
// Mean negative log-softmax at target indices; logits [N,V].
Tensor crossEntropy(const Tensor& logits, std::span<const int> targets);
// Normalization over the last axis with the variance floored at eps before
// the square root, then elementwise affine (gain/bias of last-axis length).
Tensor layerNorm(const Tensor& x, double eps, const Tensor& gain,
                 const Tensor& bias);
// Rows of table [V,d] gathered at idx -> [N,d]; gradient scatter-adds into
// the table.
Tensor embedding(const Tensor& table, std::span<const int> idx);

// ---- spatial (single image, [C,H,W]) ----
// Same-padded stride-1 convolution; weight [Co,Ci,k,k] with odd k, bias [Co].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor nearestUpsample(const Tensor& x, int factor);
// Average-pool to (outH, outW); input dims must be divisible.
Tensor areaDownsample(const Tensor& x, int outH, int outW);

}  // namespace ops
}  // namespace aidvar
