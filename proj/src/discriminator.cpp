#include "aidvar/discriminator.hpp"

#include <algorithm>
#include <cmath>

namespace aidvar {
using namespace ops;

Extractor::Extractor(ExtractorConfig cfg, std::uint64_t initSeed)
    : cfg_(cfg) {
  if (cfg_.imageSize != 32)
    throw ContractError("extractor: expects 32x32 inputs");
  Rng rng(initSeed);
  params_.create("w1", {cfg_.c1, 3, 3, 3}, 0.1, rng);
  params_.createZeros("b1", {cfg_.c1});
  params_.create("w2", {cfg_.c2, cfg_.c1, 3, 3}, 0.1, rng);
  params_.createZeros("b2", {cfg_.c2});
  params_.create("w3", {cfg_.c3, cfg_.c2, 3, 3}, 0.1, rng);
  params_.createZeros("b3", {cfg_.c3});
  params_.create("wc", {cfg_.c3, cfg_.numClasses}, 0.1, rng);
  params_.createZeros("bc", {cfg_.numClasses});
}

void Extractor::freeze() {
  params_.setRequiresGrad(false);
  frozenHash_ = params_.contentHash();
  frozen_ = true;
}

void Extractor::verifyFrozen() const {
  if (!frozen_) throw StateError("extractor: not frozen");
  if (params_.contentHash() != frozenHash_)
    throw StateError("extractor: frozen parameters were modified");
}

std::vector<Tensor> Extractor::featureLevels(const Tensor& image) const {
  Tensor l0 = gelu(conv2d(image, params_.get("w1"), params_.get("b1")));
  Tensor l1 = gelu(conv2d(areaDownsample(l0, 16, 16), params_.get("w2"),
                          params_.get("b2")));
  Tensor l2 = gelu(conv2d(areaDownsample(l1, 8, 8), params_.get("w3"),
                          params_.get("b3")));
  return {l1, l2};
}

Tensor Extractor::feat(const Tensor& image) const {
  Tensor l2 = featureLevels(image)[1];
  return rowMean(reshape(l2, {cfg_.c3, 8 * 8}));
}

Tensor Extractor::classLogits(const Tensor& image) const {
  Tensor f = reshape(feat(image), {1, cfg_.c3});
  return addRow(matmul(f, params_.get("wc")), params_.get("bc"));
}

ExtractorTrainReport pretrainExtractor(Extractor& ex, const Corpus& train,
                                       const Corpus& val,
                                       const ExtractorTrainConfig& cfg) {
  Rng rng(cfg.seed);
  AdamW::Config oc;
  oc.lr = cfg.lr;
  oc.weight_decay = 0.0;
  oc.grad_clip = 1.0;
  AdamW opt(ex.params(), oc);
  const int N = int(train.samples.size());
  const int S = ex.config().imageSize;
  ExtractorTrainReport report;
  double epochLoss = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) order[std::size_t(i)] = i;
    for (int i = N - 1; i > 0; --i)
      std::swap(order[std::size_t(i)],
                order[rng.uniformInt(std::uint64_t(i + 1))]);
    epochLoss = 0.0;
    int steps = 0;
    for (int b0 = 0; b0 < N; b0 += cfg.batchSize) {
      int b1 = std::min(N, b0 + cfg.batchSize);
      ex.params().zeroGrads();
      Tensor total = Tensor::scalar(0.0);
      for (int bi = b0; bi < b1; ++bi) {
        const ImageSample& s = train.samples[std::size_t(order[std::size_t(bi)])];
        Tensor logits = ex.classLogits(imageTensor(s, S, 3));
        total = add(total, crossEntropy(logits, std::vector<int>{s.classLabel}));
      }
      total = scale(total, 1.0 / double(b1 - b0));
      backward(total);
      opt.step();
      epochLoss += total.item();
      ++steps;
      if (!std::isfinite(total.item()))
        throw TrainingError("extractor pretraining diverged");
    }
    epochLoss /= std::max(1, steps);
  }
  report.finalTrainLoss = epochLoss;
  int correct = 0;
  for (const ImageSample& s : val.samples) {
    Tensor logits = ex.classLogits(imageTensor(s, S, 3));
    const double* row = logits.data();
    int best = int(std::max_element(row, row + ex.config().numClasses) - row);
    correct += best == s.classLabel;
  }
  report.valAccuracy =
      double(correct) / double(std::max<std::size_t>(1, val.samples.size()));
  ex.freeze();
  report.frozenHash = ex.paramHash();
  return report;
}

Discriminator::Discriminator(const Extractor* extractor,
                             DiscriminatorConfig cfg, std::uint64_t initSeed)
    : extractor_(extractor), cfg_(cfg) {
  if (extractor_ == nullptr)
    throw ContractError("discriminator: null extractor");
  Rng rng(initSeed);
  nLevels_ = 2;
  initHead(0, extractor_->config().c2, rng);
  initHead(1, extractor_->config().c3, rng);
}

Discriminator::Discriminator(int latentDim, DiscriminatorConfig cfg,
                             std::uint64_t initSeed)
    : latentDim_(latentDim), cfg_(cfg) {
  Rng rng(initSeed);
  nLevels_ = 1;
  initHead(0, latentDim, rng);
}

void Discriminator::initHead(int level, int inChannels, Rng& rng) {
  const std::string p = "h" + std::to_string(level);
  const int ch = cfg_.headChannels;
  params_.create(p + ".proj_w", {ch, inChannels, 1, 1}, 0.1, rng);
  params_.createZeros(p + ".proj_b", {ch});
  params_.create(p + ".res_w", {ch, ch, 9, 9}, 0.02, rng);
  params_.createZeros(p + ".res_b", {ch});
  // final 1x1 conv stored as a [1, ch] matrix so the spectral norm is a
  // plain matrix norm; reshaped to conv weights on use
  params_.create(p + ".sn_w", {1, ch}, 0.3, rng);
  params_.createZeros(p + ".sn_b", {1});
}

namespace {
// deterministic power iteration on plain values; u,v enter the tape as
// constants so sigma = u^T W v stays differentiable in W
void powerIteration(const Tensor& w, int iters, std::vector<double>& u,
                    std::vector<double>& v) {
  const int m = w.dim(0), n = w.dim(1);
  const double* pw = w.data();
  u.assign(std::size_t(m), 1.0 / std::sqrt(double(m)));
  v.assign(std::size_t(n), 0.0);
  for (int it = 0; it < iters; ++it) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < m; ++i) s += pw[std::size_t(i) * n + j] * u[std::size_t(i)];
      v[std::size_t(j)] = s;
    }
    double nv = 0.0;
    for (double x : v) nv += x * x;
    nv = std::sqrt(std::max(nv, 1e-30));
    for (double& x : v) x /= nv;
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += pw[std::size_t(i) * n + j] * v[std::size_t(j)];
      u[std::size_t(i)] = s;
    }
    double nu = 0.0;
    for (double x : u) nu += x * x;
    nu = std::sqrt(std::max(nu, 1e-30));
    for (double& x : u) x /= nu;
  }
}
}  // namespace

Tensor Discriminator::headForward(int level, const Tensor& feature) const {
  const std::string p = "h" + std::to_string(level);
  Tensor a = conv2d(feature, params_.get(p + ".proj_w"),
                    params_.get(p + ".proj_b"));
  Tensor r = add(a, conv2d(gelu(a), params_.get(p + ".res_w"),
                           params_.get(p + ".res_b")));
  const Tensor& w = params_.get(p + ".sn_w");
  std::vector<double> u, v;
  powerIteration(w, cfg_.snPowerIterations, u, v);
  Tensor ut({1, w.dim(0)}, std::vector<double>(u), false);
  Tensor vt({w.dim(1), 1}, std::vector<double>(v), false);
  Tensor sigma = reshape(matmul(matmul(ut, w), vt), {1});
  Tensor wn = divByScalar(w, sigma);
  Tensor logits = conv2d(r, reshape(wn, {1, cfg_.headChannels, 1, 1}),
                         params_.get(p + ".sn_b"));
  return meanAll(logits);
}

Tensor Discriminator::score(const Tensor& input) const {
  std::vector<Tensor> levels;
  if (extractor_ != nullptr) {
    levels = extractor_->featureLevels(input);
  } else {
    if (input.ndim() != 3 || input.dim(0) != latentDim_)
      throw ContractError("discriminator: bad latent input");
    levels = {input};
  }
  Tensor s = Tensor::scalar(0.0);
  for (int l = 0; l < nLevels_; ++l)
    s = add(s, headForward(l, levels[std::size_t(l)]));
  return scale(s, 1.0 / double(nLevels_));
}

double Discriminator::measuredSpectralNorm(int level) const {
  const Tensor& w = params_.get("h" + std::to_string(level) + ".sn_w");
  std::vector<double> u, v;
  powerIteration(w, 200, u, v);
  double s = 0.0;
  for (int i = 0; i < w.dim(0); ++i)
    for (int j = 0; j < w.dim(1); ++j)
      s += u[std::size_t(i)] * w.data()[std::size_t(i) * w.dim(1) + j] *
           v[std::size_t(j)];
  return s;
}

Tensor r1Surrogate(const Discriminator& d, const Tensor& realInput, Rng& rng,
                   double eps) {
  std::vector<double> dir(realInput.numel());
  double nrm = 0.0;
  for (double& x : dir) {
    x = rng.normal(0.0, 1.0);
    nrm += x * x;
  }
  nrm = std::sqrt(std::max(nrm, 1e-30));
  for (double& x : dir) x /= nrm;
  Tensor v(realInput.shape(), std::move(dir), false);
  Tensor shifted = add(realInput, scale(v, eps));
  Tensor slope = scale(sub(d.score(shifted), d.score(realInput)), 1.0 / eps);
  return mul(slope, slope);
}

}  // namespace aidvar
