#pragma once

#include <cstdint>
#include <vector>

#include "aidvar/backbone.hpp"
#include "aidvar/nn.hpp"
#include "aidvar/tokenizer.hpp"

namespace aidvar {

struct InjectorConfig {
  int embedDim = 16;   // internal width, kept narrow for the param budget
  int outDim = 64;     // backbone hidden width
  int nBlocks = 2;
  int nHeads = 8;
  double residualScale = 0.1;
  double lnEps = 1e-5;
  bool broadcast = false;  // ablation: one pooled vector for all positions

  int ffnHidden() const { return std::min(2 * embedDim, 512); }
};

// Trainable guidance module: previous-scale accumulation slab in, additive
// hidden-state correction out. The output projection starts at zero so a
// fresh injector is an exact no-op around the frozen backbone.
class Injector {
 public:
  Injector(InjectorConfig cfg, TokenizerConfig tokCfg,
           std::uint64_t initSeed = 777);

  const InjectorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::uint64_t paramHash() const { return params_.contentHash(); }

  // prevSlab: [d, H, H] accumulation-frame features of scale k-1.
  // Returns G_k, [p_k*p_k, embedDim]. scaleIdx must be >= 1.
  Tensor guide(int scaleIdx, const Tensor& prevSlab) const;

  // binds guide() (or the broadcast variant) for generate()
  GuidanceFn guidanceFn() const;

 private:
  Tensor guideSpatial(int scaleIdx, const Tensor& prevSlab) const;
  Tensor guideBroadcast(int scaleIdx, const Tensor& prevSlab) const;

  InjectorConfig cfg_;
  TokenizerConfig tokCfg_;
  ParamStore params_;
  std::vector<TransformerBlock> blocks_;
  std::vector<Tensor> posGrids_;
};

}  // namespace aidvar
