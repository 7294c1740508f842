#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aidvar/data.hpp"
#include "aidvar/nn.hpp"
#include "aidvar/tensor.hpp"

namespace aidvar {

struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TokenizerConfig {
  int imageSize = 32;
  int channels = 3;
  int latentDim = 16;           // d
  int codebookSize = 64;        // V
  std::vector<int> resolutions = {1, 2, 4, 8};
  int hiddenChannels = 20;
  // Test stub: encoder/decoder are the identity and Phi is plain nearest
  // upsampling; requires channels == latentDim and imageSize == finest
  // resolution, K == 1.
  bool identityStub = false;

  int scaleCount() const { return int(resolutions.size()); }
  int latentSize() const { return resolutions.back(); }  // H = p_K
};

struct TokenizerTrainConfig {
  int epochs = 12;
  int batchSize = 16;
  double lr = 2e-3;
  double commitmentBeta = 0.25;
  std::uint64_t seed = 1;
  double valMseThreshold = 0.02;  // per pixel channel
};

// Per-scale token maps plus the additively accumulated feature maps
// f_k = f_{k-1} + Phi_k(embed(S_k)).
struct TokenPyramid {
  std::vector<int> resolutions;
  std::vector<std::vector<int>> tokens;  // entries in [0, V)
  std::vector<Tensor> accumulated;       // f_k, each [d,H,H]
};

// Per-scale logits (z_k or guided z'_k), each [n_k, V].
using LogitPyramid = std::vector<Tensor>;

struct TokenizerTrainReport {
  double finalTrainLoss = 0.0;
  double valMse = 0.0;
  int deadCodesAfterReseed = 0;
  bool allCodesUsedOnVal = false;
};

class Tokenizer {
 public:
  explicit Tokenizer(TokenizerConfig cfg, std::uint64_t initSeed = 1234);

  const TokenizerConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t paramHash() const { return params_.contentHash(); }
  bool trained() const { return trained_; }
  void markTrained() { trained_ = true; }

  const Tensor& codebook() const { return codebook_; }
  double codebookMinDistance() const;

  // image pixels [C,H,W] -> encoder feature map [d,Hl,Hl]
  Tensor encodeFeatures(const Tensor& image) const;
  // residual multi-scale quantization; requires a trained tokenizer
  TokenPyramid encode(const Tensor& image) const;
  // f_k -> image [C,H,W]; differentiable through the decoder
  Tensor decodeFeatures(const Tensor& f) const;

  // hard path: codebook lookup of stored tokens, decode the accumulation
  Tensor decodeHard(const TokenPyramid& pyr, int upToScale) const;
  // soft path over explicit probability rows [n_k, V] per scale
  Tensor decodeSoftProbs(const std::vector<Tensor>& probs, int upToScale) const;
  // soft path per Eq-style softmax(logits)
  Tensor decodeSoftLogits(const LogitPyramid& logits, int upToScale) const;

  // Phi_k: [n_k, d] token embeddings -> [d,H,H] accumulation-frame slab
  Tensor phi(const Tensor& h, int scaleIdx) const;
  // Differentiable soft accumulation f_k for a prefix of probability maps.
  Tensor accumulateSoft(const std::vector<Tensor>& probs, int upToScale) const;

  int nearestCode(const double* vec) const;

 private:
  friend TokenizerTrainReport trainTokenizer(Tokenizer&, const Corpus&,
                                             const Corpus&,
                                             const TokenizerTrainConfig&);
  TokenizerConfig cfg_;
  ParamStore params_;
  Tensor codebook_;  // alias of params_ "codebook"
  bool trained_ = false;
};

TokenizerTrainReport trainTokenizer(Tokenizer& tok, const Corpus& train,
                                    const Corpus& val,
                                    const TokenizerTrainConfig& cfg);

// Plain-vector helpers used throughout the pipeline.
Tensor imageTensor(const ImageSample& s, int imageSize, int channels);

double imageL2(const Tensor& a, const Tensor& b);

}  // namespace aidvar
