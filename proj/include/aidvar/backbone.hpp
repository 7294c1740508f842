#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "aidvar/nn.hpp"
#include "aidvar/tokenizer.hpp"

namespace aidvar {

struct BackboneConfig {
  int dModel = 64;
  int nBlocks = 4;
  int nHeads = 4;
  int ffnHidden = 128;  // min(2*dModel, 512)
  int numClasses = kNumClasses;
  double lnEps = 1e-5;
};

struct SamplerConfig {
  double temperature = 1.0;
  int topK = 0;  // 0 means all V codes
  double cfgScale = 1.5;
  std::uint64_t seed = 1;
};

struct BackboneTrainConfig {
  int epochs = 6;
  int batchSize = 8;
  double lr = 1e-3;
  double condDropout = 0.1;
  std::uint64_t seed = 1;
  double valAccFloor = 0.0;  // > floor required; 0 disables the check
};

struct BackboneTrainReport {
  double initialLoss = 0.0;
  double finalTrainLoss = 0.0;
  double valTokenAccuracy = 0.0;
  std::uint64_t frozenHash = 0;
};

// Produces the guidance map G_k ([n_k, dModel]) for scale index k >= 1 from
// the previous scale's accumulation slab Phi_{k-1}(embed(S_{k-1})), [d,H,H].
using GuidanceFn = std::function<Tensor(int scaleIdx, const Tensor& prevSlab)>;

struct GenerationResult {
  TokenPyramid pyramid;
  Tensor image;  // decoded from the full pyramid
  // conditional (guided) logits per scale; stays on the autodiff tape when
  // guidance parameters require gradients, which is the soft-decode bridge
  // the adversarial trainer differentiates through
  LogitPyramid condLogits;
  int classLabel = 0;
};

// Frozen next-scale transformer. Scale 0 is the class (or null) start row;
// every later scale consumes the downsampled accumulation of the scales
// before it, so hidden states are pure functions of (S_{<k}, c, params).
class Backbone {
 public:
  Backbone(BackboneConfig cfg, TokenizerConfig tokCfg,
           std::uint64_t initSeed = 4321);

  const BackboneConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t paramHash() const { return params_.contentHash(); }

  void freeze();
  bool frozen() const { return frozen_; }
  // throws StateError when any parameter changed after freeze()
  void verifyFrozen() const;

  // Input rows for one scale: classLabel in [0, numClasses) or -1 for the
  // unconditional row at scale 0; prevAccum is f_{k-1} ([d,H,H]) for k >= 1.
  Tensor inputRows(int scaleIdx, const Tensor* prevAccum, int classLabel) const;

  // Runs the block stack over scales 0..upToScale and returns the logits
  // [n_k, V] of the last scale. guidance[j] (when defined) is added as
  // w * G_j to scale j's rows before the blocks; scale 0 never takes one.
  Tensor predictLogits(const std::vector<Tensor>& rows,
                       const std::vector<Tensor>& guidance, double w) const;

  // Teacher-forced logits for every scale of an encoded pyramid.
  LogitPyramid teacherForced(const TokenPyramid& pyr, int classLabel) const;

  const std::vector<int>& resolutions() const { return tokCfg_.resolutions; }
  int vocab() const { return tokCfg_.codebookSize; }

 private:
  BackboneConfig cfg_;
  TokenizerConfig tokCfg_;
  ParamStore params_;
  std::vector<TransformerBlock> blocks_;
  std::vector<Tensor> posGrids_;  // fixed sinusoidal, one per scale
  bool frozen_ = false;
  std::uint64_t frozenHash_ = 0;
};

// CFG-combined, temperature/top-k token sampling for one scale.
// condLogits/uncondLogits are [n, V]; rng drives the categorical draws.
std::vector<int> sampleTokens(const Tensor& condLogits,
                              const Tensor& uncondLogits,
                              const SamplerConfig& sampler, Rng& rng);

// Full guided generation: scale 0 is plain CFG sampling, later scales add
// w * guidance(prev slab) when a guidance function is attached.
// When slabNoise is given it is added to the scale-`noiseScale` feature slab
// before accumulation, perturbing everything downstream of that scale.
GenerationResult generate(const Tokenizer& tok, const Backbone& bb,
                          int classLabel, const SamplerConfig& sampler,
                          const GuidanceFn* guidance = nullptr, double w = 0.0,
                          const Tensor* slabNoise = nullptr,
                          int noiseScale = -1);

BackboneTrainReport pretrainBackbone(Backbone& bb, const Tokenizer& tok,
                                     const Corpus& train, const Corpus& val,
                                     const BackboneTrainConfig& cfg);

}  // namespace aidvar
