#pragma once

#include <cstdint>
#include <vector>

#include "aidvar/data.hpp"
#include "aidvar/nn.hpp"
#include "aidvar/tensor.hpp"
#include "aidvar/tokenizer.hpp"

namespace aidvar {

struct ExtractorConfig {
  int c1 = 8;
  int c2 = 12;
  int c3 = 16;
  int numClasses = kNumClasses;
  int imageSize = 32;
};

struct ExtractorTrainConfig {
  int epochs = 60;
  int batchSize = 16;
  double lr = 3e-3;
  std::uint64_t seed = 1;
};

struct ExtractorTrainReport {
  double finalTrainLoss = 0.0;
  double valAccuracy = 0.0;
  std::uint64_t frozenHash = 0;
};

// Small frozen conv classifier doubling as the feature backbone for the
// projected discriminator and as the metric feature extractor.
class Extractor {
 public:
  explicit Extractor(ExtractorConfig cfg, std::uint64_t initSeed = 99);

  const ExtractorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t paramHash() const { return params_.contentHash(); }
  void freeze();
  bool frozen() const { return frozen_; }
  void verifyFrozen() const;

  // two intermediate feature maps: [c2,16,16] and [c3,8,8] for 32x32 input
  std::vector<Tensor> featureLevels(const Tensor& image) const;
  // penultimate activations mean-pooled to a [c3] vector
  Tensor feat(const Tensor& image) const;
  Tensor classLogits(const Tensor& image) const;
  int featDim() const { return cfg_.c3; }

 private:
  ExtractorConfig cfg_;
  ParamStore params_;
  bool frozen_ = false;
  std::uint64_t frozenHash_ = 0;
};

ExtractorTrainReport pretrainExtractor(Extractor& ex, const Corpus& train,
                                       const Corpus& val,
                                       const ExtractorTrainConfig& cfg);

struct DiscriminatorConfig {
  int headChannels = 8;
  int snPowerIterations = 30;
  double lnEps = 1e-5;
};

// Projected discriminator: trainable heads (1x1 conv, a 9x9 residual block,
// a spectrally normalized 1x1 conv) per frozen feature level. The latent
// variant attaches one head stack directly to pre-decode accumulations.
class Discriminator {
 public:
  // RGB configuration over a frozen extractor (not owned).
  Discriminator(const Extractor* extractor, DiscriminatorConfig cfg,
                std::uint64_t initSeed = 55);
  // latent-space ablation: inputs are [latentDim, H, H] accumulations
  Discriminator(int latentDim, DiscriminatorConfig cfg,
                std::uint64_t initSeed = 55);

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t paramHash() const { return params_.contentHash(); }
  bool latentMode() const { return extractor_ == nullptr; }
  const Extractor* extractor() const { return extractor_; }

  // scalar real/fake score, averaged over head levels and positions
  Tensor score(const Tensor& input) const;

  // spectral norm of a head's final 1x1 conv (for tests)
  double measuredSpectralNorm(int level) const;

 private:
  Tensor headForward(int level, const Tensor& feature) const;
  void initHead(int level, int inChannels, Rng& rng);

  const Extractor* extractor_ = nullptr;
  int latentDim_ = 0;
  DiscriminatorConfig cfg_;
  ParamStore params_;
  int nLevels_ = 0;
};

// Differentiable directional finite-difference surrogate for the R1
// gradient penalty: E_v[((D(I + eps v) - D(I)) / eps)^2].
Tensor r1Surrogate(const Discriminator& d, const Tensor& realInput, Rng& rng,
                   double eps = 1e-3);

}  // namespace aidvar
