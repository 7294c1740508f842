#include "aidvar/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace aidvar {

Tensor& ParamStore::create(const std::string& name, std::vector<int> shape,
                           double initStd, Rng& rng) {
  std::vector<double> v(shapeNumel(shape));
  for (double& x : v) x = rng.normal(0.0, initStd);
  items_.emplace_back(name, Tensor(std::move(shape), std::move(v), true));
  return items_.back().second;
}

Tensor& ParamStore::createZeros(const std::string& name,
                                std::vector<int> shape) {
  items_.emplace_back(name, Tensor(std::move(shape), true));
  return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw std::runtime_error("ParamStore: missing parameter " + name);
}

const Tensor& ParamStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw std::runtime_error("ParamStore: missing parameter " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

std::size_t ParamStore::paramCount() const {
  std::size_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

std::uint64_t ParamStore::contentHash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : items_) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.values().data(), t.numel() * sizeof(double), h);
  }
  return h;
}

void ParamStore::zeroGrads() {
  for (auto& [name, t] : items_) t.zeroGrad();
}

void ParamStore::setRequiresGrad(bool rg) {
  for (auto& [name, t] : items_) t.setRequiresGrad(rg);
}

AdamW::AdamW(ParamStore& params, Config cfg) : params_(params), cfg_(cfg) {
  for (auto& [name, t] : params_.items()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step() {
  ++t_;
  double clipScale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double sq = 0.0;
    for (auto& [name, t] : params_.items())
      for (double g : t.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip) clipScale = cfg_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  std::size_t pi = 0;
  for (auto& [name, t] : params_.items()) {
    auto& g = t.grad();
    auto& val = t.values();
    auto& m = m_[pi];
    auto& v = v_[pi];
    ++pi;
    for (std::size_t i = 0; i < val.size(); ++i) {
      double gi = g[i] * clipScale;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      val[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                           cfg_.weight_decay * val[i]);
    }
  }
}

void TransformerBlock::init(ParamStore& ps, const std::string& prefix, int dm,
                            int heads, int ffn, double resScale, double eps,
                            Rng& rng) {
  dModel = dm;
  nHeads = heads;
  ffnHidden = ffn;
  residualScale = resScale;
  lnEps = eps;
  if (dm % heads != 0)
    throw ContractError("TransformerBlock: dModel % nHeads != 0");
  const double std = 0.02;
  wq = ps.create(prefix + ".wq", {dm, dm}, std, rng);
  wk = ps.create(prefix + ".wk", {dm, dm}, std, rng);
  wv = ps.create(prefix + ".wv", {dm, dm}, std, rng);
  wo = ps.create(prefix + ".wo", {dm, dm}, std, rng);
  bq = ps.createZeros(prefix + ".bq", {dm});
  bk = ps.createZeros(prefix + ".bk", {dm});
  bv = ps.createZeros(prefix + ".bv", {dm});
  bo = ps.createZeros(prefix + ".bo", {dm});
  w1 = ps.create(prefix + ".w1", {dm, ffn}, std, rng);
  b1 = ps.createZeros(prefix + ".b1", {ffn});
  w2 = ps.create(prefix + ".w2", {ffn, dm}, std, rng);
  b2 = ps.createZeros(prefix + ".b2", {dm});
  ln1g = Tensor({dm}, std::vector<double>(std::size_t(dm), 1.0), true);
  ln2g = Tensor({dm}, std::vector<double>(std::size_t(dm), 1.0), true);
  ps.items().emplace_back(prefix + ".ln1g", ln1g);
  ps.items().emplace_back(prefix + ".ln2g", ln2g);
  ln1b = ps.createZeros(prefix + ".ln1b", {dm});
  ln2b = ps.createZeros(prefix + ".ln2b", {dm});
}

Tensor TransformerBlock::forward(const Tensor& x, const Tensor& mask) const {
  using namespace ops;
  const int n = x.dim(0);
  const int dh = dModel / nHeads;
  Tensor h = layerNorm(x, lnEps, ln1g, ln1b);
  Tensor q = addRow(matmul(h, wq), bq);
  Tensor k = addRow(matmul(h, wk), bk);
  Tensor v = addRow(matmul(h, wv), bv);
  std::vector<Tensor> headOut;
  headOut.reserve(std::size_t(nHeads));
  const double invSqrt = 1.0 / std::sqrt(double(dh));
  for (int hd = 0; hd < nHeads; ++hd) {
    // Per-head column slice via transpose+sliceRows (keeps op set small).
    Tensor qh = transpose(sliceRows(transpose(q), hd * dh, (hd + 1) * dh));
    Tensor kh = transpose(sliceRows(transpose(k), hd * dh, (hd + 1) * dh));
    Tensor vh = transpose(sliceRows(transpose(v), hd * dh, (hd + 1) * dh));
    Tensor scores = scale(matmul(qh, transpose(kh)), invSqrt);
    if (mask.defined()) scores = add(scores, mask);
    Tensor att = softmax(scores);
    headOut.push_back(transpose(matmul(att, vh)));  // [dh, n]
  }
  Tensor attn = transpose(concatRows(headOut));  // [n, D]
  Tensor attnProj = addRow(matmul(attn, wo), bo);
  Tensor x1 = add(x, scale(attnProj, residualScale));
  Tensor h2 = layerNorm(x1, lnEps, ln2g, ln2b);
  Tensor ffn = addRow(
      matmul(gelu(addRow(matmul(h2, w1), b1)), w2), b2);
  (void)n;
  return add(x1, scale(ffn, residualScale));
}

Tensor sinusoidalGrid(int p, int dModel) {
  // Half the channels encode the row coordinate, half the column.
  std::vector<double> v(std::size_t(p) * p * dModel, 0.0);
  int half = dModel / 2;
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x) {
      double* row = v.data() + (std::size_t(y) * p + x) * dModel;
      for (int i = 0; i < half; i += 2) {
        double freq = std::pow(10000.0, -double(i) / std::max(1, half));
        row[i] = std::sin(y * freq);
        if (i + 1 < half) row[i + 1] = std::cos(y * freq);
      }
      for (int i = half; i < dModel; i += 2) {
        double freq = std::pow(10000.0, -double(i - half) /
                                            std::max(1, dModel - half));
        row[i] = std::sin(x * freq);
        if (i + 1 < dModel) row[i + 1] = std::cos(x * freq);
      }
    }
  return Tensor({p * p, dModel}, std::move(v), false);
}

Tensor blockCausalMask(const std::vector<int>& scaleOf) {
  const int n = int(scaleOf.size());
  std::vector<double> v(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (scaleOf[std::size_t(j)] > scaleOf[std::size_t(i)])
        v[std::size_t(i) * n + j] = -1e30;
  return Tensor({n, n}, std::move(v), false);
}

}  // namespace aidvar
