#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aidvar/rng.hpp"
#include "aidvar/tensor.hpp"

namespace aidvar {

// Named trainable parameters. Checkpoints serialize/restore stores by name;
// loading writes values in place so module handles stay valid.
class ParamStore {
 public:
  Tensor& create(const std::string& name, std::vector<int> shape,
                 double initStd, Rng& rng);
  Tensor& createZeros(const std::string& name, std::vector<int> shape);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }

  std::size_t paramCount() const;
  std::uint64_t contentHash() const;
  void zeroGrads();
  void setRequiresGrad(bool rg);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

// AdamW with global-norm gradient clipping and a constant learning rate.
class AdamW {
 public:
  struct Config {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-5;
    double grad_clip = 0.5;  // global norm; <= 0 disables
  };

  AdamW(ParamStore& params, Config cfg);
  void step();

 private:
  ParamStore& params_;
  Config cfg_;
  long long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Pre-norm transformer encoder block over a [n, D] sequence.
// residual_scale and ln_eps cover both the backbone and the injector
// (the latter scales residual branches by 0.1 and uses the floored norm).
struct TransformerBlock {
  int dModel = 0;
  int nHeads = 0;
  int ffnHidden = 0;
  double residualScale = 1.0;
  double lnEps = 1e-5;

  Tensor wq, wk, wv, wo;          // [D,D]
  Tensor bq, bk, bv, bo;          // [D]
  Tensor w1, b1, w2, b2;          // FFN
  Tensor ln1g, ln1b, ln2g, ln2b;  // norms

  void init(ParamStore& ps, const std::string& prefix, int dModel, int nHeads,
            int ffnHidden, double residualScale, double lnEps, Rng& rng);
  // mask: additive [n,n] tensor (0 where allowed, large negative where not),
  // or an undefined tensor for full attention.
  Tensor forward(const Tensor& x, const Tensor& mask) const;
};

// Fixed sinusoidal positional encodings over a p x p grid, [p*p, D].
Tensor sinusoidalGrid(int p, int dModel);

// Additive attention mask allowing position i to attend to j iff
// scaleOf[j] <= scaleOf[i]; entries are 0 or -1e30.
Tensor blockCausalMask(const std::vector<int>& scaleOf);

}  // namespace aidvar
