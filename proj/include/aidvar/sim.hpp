#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "aidvar/backbone.hpp"
#include "aidvar/discriminator.hpp"
#include "aidvar/injector.hpp"
#include "aidvar/tokenizer.hpp"

namespace aidvar {

// Monte Carlo model of error accumulation across the scale hierarchy.
// Each trial tracks a latent error vector: at every scale an isotropic
// sampling error of scale sigma_k is added, plus a propagated term whose
// norm is L_k times the accumulated error norm.
struct PropagationConfig {
  int scaleCount = 4;
  std::vector<double> sigma = {1.0};  // broadcast to every scale if size 1
  std::vector<double> lipschitz = {1.0};
  double gamma = 1.0;       // correction efficiency, used by simulateAid
  double dMin = 0.0;        // codebook gap for mis-token error injection
  std::vector<double> eta;  // per-scale mis-token probability (empty = none)
  std::vector<int> resolutions = {1, 2, 4, 8};
  int trials = 10000;
  std::uint64_t seed = 1;
  int dim = 8;                  // latent vector dimension
  bool randomDirection = false; // propagate along a random unit vector
                                // instead of the worst-case aligned one

  std::vector<double> sigmaAt() const { return broadcast(sigma); }
  std::vector<double> lipschitzAt() const { return broadcast(lipschitz); }
  std::vector<double> etaAt() const;
  void validate() const;

 private:
  std::vector<double> broadcast(const std::vector<double>& v) const;
};

struct ErrorTrace {
  int scaleCount = 0;
  int trials = 0;
  int dim = 0;
  bool corrected = false;  // produced by simulateAid with gamma > 0
  double gammaUsed = 0.0;
  // [scale][trial] squared norms of the per-scale increment and of the
  // accumulated error after that scale.
  std::vector<std::vector<double>> stepSq;
  std::vector<std::vector<double>> cumulativeSq;
  std::vector<double> meanStepSq;        // per scale
  std::vector<double> meanCumulativeSq;  // per scale
  std::vector<double> seCumulativeSq;    // per scale, standard error
  std::vector<double> crossTerm;         // per scale, E<accum_{k-1}, step_k>
  std::vector<double> decompositionResidual;  // per trial, exact-identity gap
};

// Uncorrected process: the propagated term has norm L_k * |accumulated| and
// (by default) points along the accumulated error — the saturating case.
ErrorTrace simulateVar(const PropagationConfig& cfg);

// Corrected process: gamma of the propagated term is cancelled; the residual
// of norm (1-gamma) L |accumulated| is drawn orthogonal to the accumulated
// error, matching the uncorrelated-residual regime of the dampened bound.
// gamma == 0 reduces bit-exactly to simulateVar.
ErrorTrace simulateAid(const PropagationConfig& cfg);

struct BoundCheck {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
  std::string detail;
};

struct BoundReport {
  std::vector<BoundCheck> checks;
  bool allPass = true;
  std::vector<std::string> failed;  // names of violated bounds
  // per-scale analytic envelopes used in the CSV output
  std::vector<double> lowerEnvelope;
  std::vector<double> upperEnvelope;
};

// Verifies, with 3-standard-error slack on Monte Carlo estimates:
//  - the exact per-trial decomposition identity (residual < 1e-9)
//  - the mis-token floor eta_k * dMin^2 on per-scale increments (when set)
//  - the geometric lower bound for uncorrected traces, or the dampened
//    upper bound plus the linear floor for corrected ones
//  - exact squared-norm gain (H/p_k)^2 of nearest-neighbor upsampling
BoundReport checkBounds(const ErrorTrace& trace, const PropagationConfig& cfg);

// scale,mean_delta_sq,mean_Delta_sq,bound_lower,bound_upper,pass
void writeSimCsv(std::ostream& os, const ErrorTrace& trace,
                 const BoundReport& report);

// Mis-token error floor, brute-forced against an explicit codebook: with
// probability eta the drawn code is replaced by a different one and the
// squared embedding gap is recorded. Returns the empirical mean and the
// analytic floor eta * dMin^2.
struct MistokenResult {
  double empirical = 0.0;
  double floor = 0.0;
  double dMin = 0.0;
};
MistokenResult mistokenFloor(const std::vector<std::vector<double>>& codebook,
                             double eta, int draws, std::uint64_t seed);

// Paired clean/perturbed generation through a trained model: a noise patch
// is added to the feature slab at injectScale and the per-scale feature
// distance between the two trajectories is recorded for each seed.
struct NoiseInjectionConfig {
  int injectScale = 2;
  double noiseLevel = 0.5;
  int seeds = 50;
  std::uint64_t baseSeed = 1;
  SamplerConfig sampler;
  double guidanceWeight = 0.0;  // used when an injector is attached
};

struct DivergenceResult {
  std::vector<std::vector<double>> curves;  // [seed][scale]
  std::vector<double> meanCurve;            // per scale
  double meanTerminal = 0.0;
  // fraction of seeds whose curve is non-decreasing from the injection
  // scale onward
  double fracMonotoneAfterInjection = 0.0;
};

DivergenceResult injectNoiseExperiment(const Tokenizer& tok,
                                       const Backbone& bb,
                                       const Injector* inj,
                                       const NoiseInjectionConfig& cfg);

// seed,scale,divergence rows followed by per-scale mean rows
void writeDivergenceCsv(std::ostream& os, const DivergenceResult& r);

}  // namespace aidvar
