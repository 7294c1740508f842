#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "aidvar/nn.hpp"
#include "aidvar/tensor.hpp"

namespace aidvar::testing {

// Central finite-difference check of tape gradients. `lossFn` must rebuild
// the graph from the current parameter values on every call (the oracle is
// independent of any cached tape state). Returns the max relative error
// where relative = |fd - ad| / max(1, |fd|, |ad|).
inline double gradCheck(const std::vector<Tensor>& params,
                        const std::function<double()>& lossFn,
                        const std::function<Tensor()>& lossGraphFn,
                        double step = 1e-5) {
  for (const Tensor& p : params) const_cast<Tensor&>(p).zeroGrad();
  Tensor loss = lossGraphFn();
  backward(loss);
  double maxRel = 0.0;
  for (const Tensor& p : params) {
    Tensor& t = const_cast<Tensor&>(p);
    auto gradCopy = t.grad();
    for (std::size_t i = 0; i < t.numel(); ++i) {
      double saved = t.values()[i];
      t.values()[i] = saved + step;
      double up = lossFn();
      t.values()[i] = saved - step;
      double dn = lossFn();
      t.values()[i] = saved;
      double fd = (up - dn) / (2.0 * step);
      double ad = gradCopy[i];
      double rel = std::fabs(fd - ad) /
                   std::max({1.0, std::fabs(fd), std::fabs(ad)});
      maxRel = std::max(maxRel, rel);
    }
  }
  return maxRel;
}

inline Tensor randomTensor(std::vector<int> shape, Rng& rng, double lo = -2.0,
                           double hi = 2.0, bool rg = true) {
  std::vector<double> v(shapeNumel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), rg);
}

}  // namespace aidvar::testing
