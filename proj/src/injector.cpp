#include "aidvar/injector.hpp"

namespace aidvar {
using namespace ops;

Injector::Injector(InjectorConfig cfg, TokenizerConfig tokCfg,
                   std::uint64_t initSeed)
    : cfg_(cfg), tokCfg_(std::move(tokCfg)) {
  Rng rng(initSeed);
  const int D = cfg_.embedDim;
  const int d = tokCfg_.latentDim;
  params_.create("in_proj", {d, D}, 0.02, rng);
  params_.createZeros("in_bias", {D});
  blocks_.resize(std::size_t(cfg_.nBlocks));
  for (int i = 0; i < cfg_.nBlocks; ++i)
    blocks_[std::size_t(i)].init(params_, "blk" + std::to_string(i), D,
                                 cfg_.nHeads, cfg_.ffnHidden(),
                                 cfg_.residualScale, cfg_.lnEps, rng);
  params_.createZeros("out_proj", {D, cfg_.outDim});
  params_.createZeros("out_bias", {cfg_.outDim});
  for (int p : tokCfg_.resolutions) posGrids_.push_back(sinusoidalGrid(p, D));
}

Tensor Injector::guide(int scaleIdx, const Tensor& prevSlab) const {
  if (scaleIdx < 1 || scaleIdx >= tokCfg_.scaleCount())
    throw ContractError("injector: scale index out of range");
  if (!prevSlab.defined() || prevSlab.ndim() != 3 ||
      prevSlab.dim(0) != tokCfg_.latentDim)
    throw ContractError("injector: bad input slab");
  return cfg_.broadcast ? guideBroadcast(scaleIdx, prevSlab)
                        : guideSpatial(scaleIdx, prevSlab);
}

Tensor Injector::guideSpatial(int scaleIdx, const Tensor& prevSlab) const {
  const int p = tokCfg_.resolutions[std::size_t(scaleIdx)];
  const int d = tokCfg_.latentDim;
  Tensor slab = prevSlab.dim(1) == p ? prevSlab
                                     : areaDownsample(prevSlab, p, p);
  Tensor x = transpose(reshape(slab, {d, p * p}));  // [n_k, d]
  Tensor h = addRow(matmul(x, params_.get("in_proj")),
                    params_.get("in_bias"));
  h = add(h, posGrids_[std::size_t(scaleIdx)]);
  Tensor noMask;
  for (const TransformerBlock& blk : blocks_) h = blk.forward(h, noMask);
  return addRow(matmul(h, params_.get("out_proj")), params_.get("out_bias"));
}

Tensor Injector::guideBroadcast(int scaleIdx, const Tensor& prevSlab) const {
  const int p = tokCfg_.resolutions[std::size_t(scaleIdx)];
  const int d = tokCfg_.latentDim;
  const int hw = prevSlab.dim(1) * prevSlab.dim(2);
  // spatial mean pool -> a single [1, d] token
  Tensor pooled = reshape(rowMean(reshape(prevSlab, {d, hw})), {1, d});
  Tensor h = addRow(matmul(pooled, params_.get("in_proj")),
                    params_.get("in_bias"));
  Tensor noMask;
  for (const TransformerBlock& blk : blocks_) h = blk.forward(h, noMask);
  Tensor g = addRow(matmul(h, params_.get("out_proj")),
                    params_.get("out_bias"));  // [1, D]
  Tensor ones({p * p, 1}, std::vector<double>(std::size_t(p) * p, 1.0));
  return matmul(ones, g);
}

GuidanceFn Injector::guidanceFn() const {
  return [this](int scaleIdx, const Tensor& prevSlab) {
    return guide(scaleIdx, prevSlab);
  };
}

}  // namespace aidvar
