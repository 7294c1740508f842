#include "aidvar/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace aidvar {
using namespace ops;

Backbone::Backbone(BackboneConfig cfg, TokenizerConfig tokCfg,
                   std::uint64_t initSeed)
    : cfg_(cfg), tokCfg_(std::move(tokCfg)) {
  Rng rng(initSeed);
  const int D = cfg_.dModel;
  const int d = tokCfg_.latentDim;
  const int K = tokCfg_.scaleCount();
  params_.create("class_emb", {cfg_.numClasses + 1, D}, 0.02, rng);
  params_.create("in_proj", {d, D}, 0.02, rng);
  params_.createZeros("in_bias", {D});
  params_.create("scale_emb", {K, D}, 0.02, rng);
  blocks_.resize(std::size_t(cfg_.nBlocks));
  for (int i = 0; i < cfg_.nBlocks; ++i)
    blocks_[std::size_t(i)].init(params_, "blk" + std::to_string(i), D,
                                 cfg_.nHeads, cfg_.ffnHidden, 1.0, cfg_.lnEps,
                                 rng);
  Tensor g({D}, std::vector<double>(std::size_t(D), 1.0), true);
  params_.items().emplace_back("final_ln_g", g);
  params_.createZeros("final_ln_b", {D});
  params_.create("out_proj", {D, tokCfg_.codebookSize}, 0.02, rng);
  params_.createZeros("out_bias", {tokCfg_.codebookSize});
  for (int p : tokCfg_.resolutions) posGrids_.push_back(sinusoidalGrid(p, D));
}

void Backbone::freeze() {
  params_.setRequiresGrad(false);
  frozenHash_ = params_.contentHash();
  frozen_ = true;
}

void Backbone::verifyFrozen() const {
  if (!frozen_) throw StateError("backbone: not frozen");
  if (params_.contentHash() != frozenHash_)
    throw StateError("backbone: frozen parameters were modified");
}

Tensor Backbone::inputRows(int scaleIdx, const Tensor* prevAccum,
                           int classLabel) const {
  const int D = cfg_.dModel;
  const Tensor& scaleEmb = params_.get("scale_emb");
  Tensor se = reshape(embedding(scaleEmb, std::vector<int>{scaleIdx}), {D});
  if (scaleIdx == 0) {
    int idx = classLabel < 0 ? cfg_.numClasses : classLabel;
    if (idx > cfg_.numClasses) throw ContractError("inputRows: bad class");
    Tensor row = embedding(params_.get("class_emb"), std::vector<int>{idx});
    return addRow(add(row, posGrids_[0]), se);
  }
  if (prevAccum == nullptr)
    throw ContractError("inputRows: missing previous accumulation");
  const int p = tokCfg_.resolutions[std::size_t(scaleIdx)];
  const int d = tokCfg_.latentDim;
  Tensor x = transpose(reshape(areaDownsample(*prevAccum, p, p), {d, p * p}));
  Tensor rows = addRow(matmul(x, params_.get("in_proj")),
                       params_.get("in_bias"));
  return addRow(add(rows, posGrids_[std::size_t(scaleIdx)]), se);
}

namespace {
// Concatenated block-stack forward over scales 0..rows.size()-1; returns the
// hidden rows after the final norm, in scale order.
Tensor runStack(const std::vector<TransformerBlock>& blocks,
                const ParamStore& params, double lnEps,
                const std::vector<int>& resolutions,
                const std::vector<Tensor>& rows,
                const std::vector<Tensor>& guidance, double w) {
  std::vector<Tensor> injected;
  std::vector<int> scaleOf;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    Tensor r = rows[k];
    if (k < guidance.size() && guidance[k].defined() && w != 0.0) {
      if (k == 0) throw ContractError("guidance at the start scale");
      if (guidance[k].shape() != r.shape())
        throw ContractError("guidance shape mismatch");
      r = add(r, scale(guidance[k], w));
    }
    injected.push_back(r);
    int p = resolutions[k];
    for (int i = 0; i < p * p; ++i) scaleOf.push_back(int(k));
  }
  Tensor h = concatRows(injected);
  Tensor mask = blockCausalMask(scaleOf);
  for (const TransformerBlock& blk : blocks) h = blk.forward(h, mask);
  return layerNorm(h, lnEps, params.get("final_ln_g"),
                   params.get("final_ln_b"));
}

int prefixPositions(const std::vector<int>& resolutions, int upTo) {
  int n = 0;
  for (int k = 0; k < upTo; ++k) n += resolutions[std::size_t(k)] *
                                      resolutions[std::size_t(k)];
  return n;
}
}  // namespace

Tensor Backbone::predictLogits(const std::vector<Tensor>& rows,
                               const std::vector<Tensor>& guidance,
                               double w) const {
  if (rows.empty() || rows.size() > std::size_t(tokCfg_.scaleCount()))
    throw ContractError("predictLogits: bad scale count");
  Tensor h = runStack(blocks_, params_, cfg_.lnEps, tokCfg_.resolutions, rows,
                      guidance, w);
  const int k = int(rows.size()) - 1;
  const int p = tokCfg_.resolutions[std::size_t(k)];
  int off = prefixPositions(tokCfg_.resolutions, k);
  Tensor hk = sliceRows(h, off, off + p * p);
  return addRow(matmul(hk, params_.get("out_proj")), params_.get("out_bias"));
}

LogitPyramid Backbone::teacherForced(const TokenPyramid& pyr,
                                     int classLabel) const {
  const int K = tokCfg_.scaleCount();
  std::vector<Tensor> rows;
  rows.push_back(inputRows(0, nullptr, classLabel));
  for (int k = 1; k < K; ++k)
    rows.push_back(inputRows(k, &pyr.accumulated[std::size_t(k - 1)],
                             classLabel));
  Tensor h = runStack(blocks_, params_, cfg_.lnEps, tokCfg_.resolutions, rows,
                      {}, 0.0);
  LogitPyramid out;
  for (int k = 0; k < K; ++k) {
    const int p = tokCfg_.resolutions[std::size_t(k)];
    int off = prefixPositions(tokCfg_.resolutions, k);
    Tensor hk = sliceRows(h, off, off + p * p);
    out.push_back(addRow(matmul(hk, params_.get("out_proj")),
                         params_.get("out_bias")));
  }
  return out;
}

std::vector<int> sampleTokens(const Tensor& condLogits,
                              const Tensor& uncondLogits,
                              const SamplerConfig& sampler, Rng& rng) {
  if (condLogits.shape() != uncondLogits.shape())
    throw ContractError("sampleTokens: logit shape mismatch");
  if (sampler.temperature <= 0.0)
    throw ContractError("sampleTokens: temperature must be > 0");
  const int n = condLogits.dim(0), V = condLogits.dim(1);
  int topK = sampler.topK <= 0 ? V : std::min(sampler.topK, V);
  std::vector<int> out(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(V));
  std::vector<int> idx(static_cast<std::size_t>(V));
  for (int i = 0; i < n; ++i) {
    const double* c = condLogits.data() + std::size_t(i) * V;
    const double* u = uncondLogits.data() + std::size_t(i) * V;
    for (int j = 0; j < V; ++j)
      z[std::size_t(j)] =
          (u[j] + sampler.cfgScale * (c[j] - u[j])) / sampler.temperature;
    for (int j = 0; j < V; ++j) idx[std::size_t(j)] = j;
    std::partial_sort(idx.begin(), idx.begin() + topK, idx.end(),
                      [&](int a, int b) {
                        if (z[std::size_t(a)] != z[std::size_t(b)])
                          return z[std::size_t(a)] > z[std::size_t(b)];
                        return a < b;
                      });
    double mx = z[std::size_t(idx[0])];
    double total = 0.0;
    std::vector<double> probs(static_cast<std::size_t>(topK));
    for (int j = 0; j < topK; ++j) {
      probs[std::size_t(j)] = std::exp(z[std::size_t(idx[std::size_t(j)])] - mx);
      total += probs[std::size_t(j)];
    }
    double r = rng.uniform() * total;
    double acc = 0.0;
    int pick = topK - 1;
    for (int j = 0; j < topK; ++j) {
      acc += probs[std::size_t(j)];
      if (r <= acc) {
        pick = j;
        break;
      }
    }
    out[std::size_t(i)] = idx[std::size_t(pick)];
  }
  return out;
}

GenerationResult generate(const Tokenizer& tok, const Backbone& bb,
                          int classLabel, const SamplerConfig& sampler,
                          const GuidanceFn* guidance, double w,
                          const Tensor* slabNoise, int noiseScale) {
  const TokenizerConfig& tc = tok.config();
  const int K = tc.scaleCount();
  const int d = tc.latentDim;
  const int H = tc.latentSize();
  if (slabNoise != nullptr) {
    if (noiseScale < 0 || noiseScale >= K)
      throw ContractError("generate: noise scale out of range");
    if (slabNoise->shape() != std::vector<int>{d, H, H})
      throw ContractError("generate: noise slab shape mismatch");
  }
  Rng rng(sampler.seed);
  GenerationResult res;
  res.classLabel = classLabel;
  res.pyramid.resolutions = tc.resolutions;

  std::vector<Tensor> condRows, uncondRows, guidanceVec;
  Tensor f = Tensor::zeros({d, H, H});
  Tensor prevSlab;
  for (int k = 0; k < K; ++k) {
    condRows.push_back(bb.inputRows(k, k == 0 ? nullptr : &f, classLabel));
    uncondRows.push_back(bb.inputRows(k, k == 0 ? nullptr : &f, -1));
    Tensor g;
    if (guidance != nullptr && *guidance && k >= 1)
      g = (*guidance)(k, prevSlab);
    guidanceVec.push_back(g);
    Tensor cz = bb.predictLogits(condRows, guidanceVec, w);
    Tensor uz = bb.predictLogits(uncondRows, guidanceVec, w);
    std::vector<int> toks = sampleTokens(cz, uz, sampler, rng);
    Tensor h = embedding(tok.codebook(), toks);
    prevSlab = tok.phi(h, k);
    if (slabNoise != nullptr && k == noiseScale)
      prevSlab = add(prevSlab, *slabNoise);
    f = add(f, prevSlab);
    res.pyramid.tokens.push_back(std::move(toks));
    res.pyramid.accumulated.push_back(f);
    res.condLogits.push_back(cz);
  }
  res.image = tok.decodeFeatures(f);
  return res;
}

BackboneTrainReport pretrainBackbone(Backbone& bb, const Tokenizer& tok,
                                     const Corpus& train, const Corpus& val,
                                     const BackboneTrainConfig& cfg) {
  const TokenizerConfig& tc = tok.config();
  const int K = tc.scaleCount();
  Rng rng(cfg.seed);

  // Pyramids are fixed by the frozen tokenizer; encode once.
  auto encodeAll = [&](const Corpus& c) {
    std::vector<TokenPyramid> out;
    out.reserve(c.samples.size());
    for (const ImageSample& s : c.samples)
      out.push_back(tok.encode(imageTensor(s, tc.imageSize, tc.channels)));
    return out;
  };
  std::vector<TokenPyramid> trainPyr = encodeAll(train);
  std::vector<TokenPyramid> valPyr = encodeAll(val);

  auto sampleLoss = [&](const TokenPyramid& pyr, int label) {
    LogitPyramid z = bb.teacherForced(pyr, label);
    Tensor loss = Tensor::scalar(0.0);
    for (int k = 0; k < K; ++k)
      loss = add(loss, crossEntropy(z[std::size_t(k)],
                                    pyr.tokens[std::size_t(k)]));
    return scale(loss, 1.0 / double(K));
  };

  AdamW::Config oc;
  oc.lr = cfg.lr;
  oc.weight_decay = 0.0;
  oc.grad_clip = 1.0;
  AdamW opt(bb.params(), oc);

  BackboneTrainReport report;
  report.initialLoss =
      sampleLoss(trainPyr[0], train.samples[0].classLabel).item();

  const int N = int(trainPyr.size());
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
      bb.params().zeroGrads();
      Tensor total = Tensor::scalar(0.0);
      for (int bi = b0; bi < b1; ++bi) {
        int si = order[std::size_t(bi)];
        int label = train.samples[std::size_t(si)].classLabel;
        if (rng.uniform() < cfg.condDropout) label = -1;
        total = add(total, sampleLoss(trainPyr[std::size_t(si)], label));
      }
      total = scale(total, 1.0 / double(b1 - b0));
      backward(total);
      opt.step();
      epochLoss += total.item();
      ++steps;
      if (!std::isfinite(total.item()))
        throw TrainingError("backbone pretraining diverged");
    }
    epochLoss /= std::max(1, steps);
  }
  report.finalTrainLoss = epochLoss;

  long long correct = 0, totalTok = 0;
  for (std::size_t i = 0; i < valPyr.size(); ++i) {
    LogitPyramid z =
        bb.teacherForced(valPyr[i], val.samples[i].classLabel);
    for (int k = 0; k < K; ++k) {
      const Tensor& zk = z[std::size_t(k)];
      const int n = zk.dim(0), V = zk.dim(1);
      for (int r = 0; r < n; ++r) {
        const double* row = zk.data() + std::size_t(r) * V;
        int best = int(std::max_element(row, row + V) - row);
        correct += best == valPyr[i].tokens[std::size_t(k)][std::size_t(r)];
        ++totalTok;
      }
    }
  }
  report.valTokenAccuracy = double(correct) / double(std::max(1LL, totalTok));
  if (cfg.valAccFloor > 0.0 && report.valTokenAccuracy <= cfg.valAccFloor)
    throw TrainingError("backbone validation accuracy below floor");

  bb.freeze();
  report.frozenHash = bb.paramHash();
  return report;
}

}  // namespace aidvar
