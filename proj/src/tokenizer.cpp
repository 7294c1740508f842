#include "aidvar/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aidvar {

using namespace ops;

namespace {
Tensor mse(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return meanAll(mul(d, d));
}
}  // namespace

Tokenizer::Tokenizer(TokenizerConfig cfg, std::uint64_t initSeed)
    : cfg_(std::move(cfg)) {
  Rng rng(initSeed);
  const int d = cfg_.latentDim;
  const int V = cfg_.codebookSize;
  const int ch = cfg_.hiddenChannels;
  if (cfg_.identityStub) {
    if (cfg_.channels != d || cfg_.imageSize != cfg_.latentSize() ||
        cfg_.scaleCount() != 1)
      throw ContractError(
          "identity stub requires channels==latentDim, imageSize==p_K, K==1");
  } else {
    params_.create("enc.c1.w", {ch, cfg_.channels, 3, 3}, 0.2, rng);
    params_.createZeros("enc.c1.b", {ch});
    params_.create("enc.c2.w", {ch, ch, 3, 3}, 0.1, rng);
    params_.createZeros("enc.c2.b", {ch});
    params_.create("enc.c3.w", {d, ch, 3, 3}, 0.1, rng);
    params_.createZeros("enc.c3.b", {d});
    params_.create("dec.c1.w", {ch, d, 3, 3}, 0.1, rng);
    params_.createZeros("dec.c1.b", {ch});
    params_.create("dec.c2.w", {ch, ch, 3, 3}, 0.1, rng);
    params_.createZeros("dec.c2.b", {ch});
    params_.create("dec.c3.w", {cfg_.channels, ch, 3, 3}, 0.1, rng);
    params_.createZeros("dec.c3.b", {cfg_.channels});
    params_.create("phi.w", {d, d, 3, 3}, 0.05, rng);
    params_.createZeros("phi.b", {d});
    // Phi starts near the identity so early accumulation is well-scaled.
    Tensor& pw = params_.get("phi.w");
    for (int c = 0; c < d; ++c)
      pw.values()[((std::size_t(c) * d + c) * 3 + 1) * 3 + 1] += 1.0;
  }
  codebook_ = params_.create("codebook", {V, d}, 0.5, rng);
}

double Tokenizer::codebookMinDistance() const {
  const int V = cfg_.codebookSize, d = cfg_.latentDim;
  const double* W = codebook_.data();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < V; ++i)
    for (int j = i + 1; j < V; ++j) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) {
        double diff = W[std::size_t(i) * d + c] - W[std::size_t(j) * d + c];
        s += diff * diff;
      }
      best = std::min(best, s);
    }
  return std::sqrt(best);
}

Tensor Tokenizer::encodeFeatures(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(0) != cfg_.channels ||
      image.dim(1) != cfg_.imageSize)
    throw ShapeError("encodeFeatures: image shape mismatch");
  if (cfg_.identityStub) return image;
  const int Hl = cfg_.latentSize();
  Tensor h = gelu(conv2d(image, params_.get("enc.c1.w"), params_.get("enc.c1.b")));
  h = areaDownsample(h, cfg_.imageSize / 2, cfg_.imageSize / 2);
  h = gelu(conv2d(h, params_.get("enc.c2.w"), params_.get("enc.c2.b")));
  h = areaDownsample(h, Hl, Hl);
  return conv2d(h, params_.get("enc.c3.w"), params_.get("enc.c3.b"));
}

Tensor Tokenizer::decodeFeatures(const Tensor& f) const {
  if (cfg_.identityStub) return f;
  const int Hl = cfg_.latentSize();
  if (f.ndim() != 3 || f.dim(0) != cfg_.latentDim || f.dim(1) != Hl)
    throw ShapeError("decodeFeatures: feature shape mismatch");
  Tensor h = gelu(conv2d(f, params_.get("dec.c1.w"), params_.get("dec.c1.b")));
  h = nearestUpsample(h, 2);
  h = gelu(conv2d(h, params_.get("dec.c2.w"), params_.get("dec.c2.b")));
  h = nearestUpsample(h, cfg_.imageSize / (2 * Hl));
  return sigmoid(conv2d(h, params_.get("dec.c3.w"), params_.get("dec.c3.b")));
}

Tensor Tokenizer::phi(const Tensor& h, int scaleIdx) const {
  const int p = cfg_.resolutions[std::size_t(scaleIdx)];
  const int H = cfg_.latentSize();
  const int d = cfg_.latentDim;
  if (h.ndim() != 2 || h.dim(0) != p * p || h.dim(1) != d)
    throw ShapeError("phi: expects [p_k^2, d]");
  Tensor grid = reshape(transpose(h), {d, p, p});
  Tensor up = p == H ? grid : nearestUpsample(grid, H / p);
  if (cfg_.identityStub) return up;
  return conv2d(up, params_.get("phi.w"), params_.get("phi.b"));
}

int Tokenizer::nearestCode(const double* vec) const {
  const int V = cfg_.codebookSize, d = cfg_.latentDim;
  const double* W = codebook_.data();
  int best = 0;
  double bestDist = std::numeric_limits<double>::infinity();
  for (int v = 0; v < V; ++v) {
    double s = 0.0;
    const double* row = W + std::size_t(v) * d;
    for (int c = 0; c < d; ++c) {
      double diff = vec[c] - row[c];
      s += diff * diff;
    }
    if (s < bestDist) {
      bestDist = s;
      best = v;
    }
  }
  return best;
}

TokenPyramid Tokenizer::encode(const Tensor& image) const {
  if (!trained_)
    throw StateError("encode: tokenizer has not been trained");
  const int K = cfg_.scaleCount();
  const int H = cfg_.latentSize();
  const int d = cfg_.latentDim;
  Tensor e = detach(encodeFeatures(image));
  TokenPyramid pyr;
  pyr.resolutions = cfg_.resolutions;
  Tensor f = Tensor::zeros({d, H, H});
  for (int k = 0; k < K; ++k) {
    const int p = cfg_.resolutions[std::size_t(k)];
    Tensor residual = areaDownsample(sub(e, f), p, p);  // [d,p,p]
    // Quantize each position to the nearest codebook row.
    std::vector<int> toks(std::size_t(p) * p);
    std::vector<double> pos(static_cast<std::size_t>(d));
    for (int i = 0; i < p * p; ++i) {
      for (int c = 0; c < d; ++c)
        pos[std::size_t(c)] = residual.values()[std::size_t(c) * p * p + i];
      toks[std::size_t(i)] = nearestCode(pos.data());
    }
    Tensor h = embedding(codebook_, toks);  // [p*p, d]
    f = add(f, phi(h, k));
    pyr.tokens.push_back(std::move(toks));
    pyr.accumulated.push_back(detach(f));
  }
  return pyr;
}

Tensor Tokenizer::decodeHard(const TokenPyramid& pyr, int upToScale) const {
  const int K = cfg_.scaleCount();
  if (upToScale < 1 || upToScale > K)
    throw ContractError("decodeHard: scale out of range");
  const int H = cfg_.latentSize();
  Tensor f = Tensor::zeros({cfg_.latentDim, H, H});
  for (int k = 0; k < upToScale; ++k) {
    Tensor h = embedding(codebook_, pyr.tokens[std::size_t(k)]);
    f = add(f, phi(h, k));
  }
  return decodeFeatures(f);
}

Tensor Tokenizer::accumulateSoft(const std::vector<Tensor>& probs,
                                 int upToScale) const {
  const int K = cfg_.scaleCount();
  if (upToScale < 1 || upToScale > K || int(probs.size()) < upToScale)
    throw ContractError("accumulateSoft: scale out of range");
  const int H = cfg_.latentSize();
  Tensor f = Tensor::zeros({cfg_.latentDim, H, H});
  for (int k = 0; k < upToScale; ++k) {
    const int p = cfg_.resolutions[std::size_t(k)];
    const Tensor& pk = probs[std::size_t(k)];
    if (pk.ndim() != 2 || pk.dim(0) != p * p || pk.dim(1) != cfg_.codebookSize)
      throw ShapeError("accumulateSoft: probs shape mismatch at scale " +
                       std::to_string(k + 1));
    Tensor h = matmul(pk, codebook_);  // H' = probs * W, [n_k, d]
    f = add(f, phi(h, k));
  }
  return f;
}

Tensor Tokenizer::decodeSoftProbs(const std::vector<Tensor>& probs,
                                  int upToScale) const {
  return decodeFeatures(accumulateSoft(probs, upToScale));
}

Tensor Tokenizer::decodeSoftLogits(const LogitPyramid& logits,
                                   int upToScale) const {
  std::vector<Tensor> probs;
  probs.reserve(logits.size());
  for (const Tensor& z : logits) probs.push_back(softmax(z));
  return decodeSoftProbs(probs, upToScale);
}

Tensor imageTensor(const ImageSample& s, int imageSize, int channels) {
  return Tensor({channels, imageSize, imageSize}, s.pixels, false);
}

double imageL2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

TokenizerTrainReport trainTokenizer(Tokenizer& tok, const Corpus& train,
                                    const Corpus& val,
                                    const TokenizerTrainConfig& cfg) {
  if (train.samples.empty())
    throw ContractError("trainTokenizer: empty corpus");
  const TokenizerConfig& tc = tok.config();
  const int K = tc.scaleCount();
  const int H = tc.latentSize();
  const int d = tc.latentDim;
  const int V = tc.codebookSize;
  Rng rng(cfg.seed);

  // Seed the codebook from encoder residual statistics of the first batch so
  // quantization starts in-distribution.
  {
    Tensor& W = tok.params().get("codebook");
    int nSeed = std::min<int>(int(train.samples.size()), 8);
    std::vector<std::vector<double>> pool;
    for (int i = 0; i < nSeed; ++i) {
      Tensor img = imageTensor(train.samples[std::size_t(i)], tc.imageSize,
                               tc.channels);
      Tensor e = detach(tok.encodeFeatures(img));
      for (int k = 0; k < K; ++k) {
        int p = tc.resolutions[std::size_t(k)];
        Tensor r = areaDownsample(e, p, p);
        for (int pos = 0; pos < p * p; ++pos) {
          std::vector<double> vcol(static_cast<std::size_t>(d));
          for (int c = 0; c < d; ++c)
            vcol[std::size_t(c)] = r.values()[std::size_t(c) * p * p + pos];
          pool.push_back(std::move(vcol));
        }
      }
    }
    for (int v = 0; v < V; ++v) {
      const auto& src = pool[rng.uniformInt(pool.size())];
      for (int c = 0; c < d; ++c)
        W.values()[std::size_t(v) * d + c] =
            src[std::size_t(c)] + rng.normal(0.0, 0.05);
    }
  }

  AdamW::Config oc;
  oc.lr = cfg.lr;
  oc.weight_decay = 0.0;
  oc.grad_clip = 0.0;
  AdamW opt(tok.params(), oc);
  Tensor& W = tok.params().get("codebook");

  TokenizerTrainReport report;
  const int N = int(train.samples.size());
  std::vector<int> usage(std::size_t(V), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::fill(usage.begin(), usage.end(), 0);
    double epochLoss = 0.0;
    int steps = 0;
    std::vector<int> order(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) order[std::size_t(i)] = i;
    for (int i = N - 1; i > 0; --i)
      std::swap(order[std::size_t(i)], order[rng.uniformInt(std::uint64_t(i + 1))]);

    std::vector<std::vector<double>> residualPool;
    for (int b0 = 0; b0 < N; b0 += cfg.batchSize) {
      int b1 = std::min(N, b0 + cfg.batchSize);
      tok.params().zeroGrads();
      Tensor total = Tensor::scalar(0.0);
      for (int bi = b0; bi < b1; ++bi) {
        const ImageSample& s = train.samples[std::size_t(order[std::size_t(bi)])];
        Tensor img = imageTensor(s, tc.imageSize, tc.channels);
        Tensor e = tok.encodeFeatures(img);
        Tensor f = Tensor::zeros({d, H, H});
        Tensor vqLoss = Tensor::scalar(0.0);
        for (int k = 0; k < K; ++k) {
          int p = tc.resolutions[std::size_t(k)];
          Tensor residual = areaDownsample(sub(e, detach(f)), p, p);
          Tensor rFlat = transpose(reshape(residual, {d, p * p}));  // [n,d]
          std::vector<int> toks(std::size_t(p) * p);
          for (int pos = 0; pos < p * p; ++pos) {
            toks[std::size_t(pos)] =
                tok.nearestCode(rFlat.values().data() + std::size_t(pos) * d);
            usage[std::size_t(toks[std::size_t(pos)])]++;
            if (residualPool.size() < 4096 && rng.uniform() < 0.05)
              residualPool.emplace_back(
                  rFlat.values().begin() + std::size_t(pos) * d,
                  rFlat.values().begin() + std::size_t(pos + 1) * d);
          }
          Tensor hHard = embedding(W, toks);
          // codebook pull + encoder commitment
          vqLoss = add(vqLoss, mse(hHard, detach(rFlat)));
          vqLoss = add(vqLoss,
                       scale(mse(rFlat, detach(hHard)), cfg.commitmentBeta));
          // straight-through estimator
          Tensor hSt = add(rFlat, detach(sub(hHard, rFlat)));
          f = add(f, tok.phi(hSt, k));
        }
        Tensor recon = tok.decodeFeatures(f);
        Tensor loss = add(mse(recon, img), vqLoss);
        total = add(total, loss);
      }
      total = scale(total, 1.0 / double(b1 - b0));
      if (!std::isfinite(total.item()))
        throw TrainingError("trainTokenizer: loss diverged (non-finite)");
      backward(total);
      opt.step();
      epochLoss += total.item();
      ++steps;
    }
    report.finalTrainLoss = epochLoss / std::max(1, steps);

    // Dead-code reseeding: move unused rows onto observed residuals.
    if (!residualPool.empty()) {
      for (int v = 0; v < V; ++v)
        if (usage[std::size_t(v)] == 0) {
          const auto& src = residualPool[rng.uniformInt(residualPool.size())];
          for (int c = 0; c < d; ++c)
            W.values()[std::size_t(v) * d + c] = src[std::size_t(c)];
        }
    }
  }

  tok.markTrained();

  // Validation: reconstruction MSE and codebook usage.
  std::vector<int> valUsage(std::size_t(V), 0);
  double mseSum = 0.0;
  for (const ImageSample& s : val.samples) {
    Tensor img = imageTensor(s, tc.imageSize, tc.channels);
    TokenPyramid pyr = tok.encode(img);
    for (const auto& toks : pyr.tokens)
      for (int t : toks) valUsage[std::size_t(t)]++;
    Tensor recon = tok.decodeHard(pyr, K);
    double se = 0.0;
    for (std::size_t i = 0; i < img.numel(); ++i) {
      double diff = recon.values()[i] - img.values()[i];
      se += diff * diff;
    }
    mseSum += se / double(img.numel());
  }
  report.valMse = val.samples.empty() ? 0.0 : mseSum / double(val.samples.size());
  report.deadCodesAfterReseed =
      int(std::count(valUsage.begin(), valUsage.end(), 0));
  report.allCodesUsedOnVal = report.deadCodesAfterReseed == 0;
  return report;
}

}  // namespace aidvar
