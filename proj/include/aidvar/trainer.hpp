#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "aidvar/backbone.hpp"
#include "aidvar/discriminator.hpp"
#include "aidvar/injector.hpp"
#include "aidvar/tokenizer.hpp"

namespace aidvar {

struct TrainerConfig {
  double lambdaRec = 0.01;
  double wTrain = 0.01;
  double lrDisc = 1e-4;
  double lrInj = 1e-4;
  double weightDecay = 1e-5;
  double gradClip = 0.5;
  double r1Weight = 0.1;  // gamma/2 with the default gamma 0.2
  double r1Eps = 1e-3;
  int batchSize = 4;
  std::uint64_t seed = 1;
  SamplerConfig sampler;
  bool latentSpace = false;  // ablation: discriminate pre-decode features
};

struct TelemetryRow {
  int step = 0;
  double dLoss = 0.0;
  double injLoss = 0.0;
  double accReal = 0.0;
  double accFake = 0.0;
  double lAdv = 0.0;
  double lRec = 0.0;
};

// Hinge discriminator objective averaged over scales and batch, plus the
// directional R1 surrogate on the real inputs. reals/fakes: [K][B] inputs.
Tensor discLoss(const Discriminator& d,
                const std::vector<std::vector<Tensor>>& reals,
                const std::vector<std::vector<Tensor>>& fakes,
                double r1Weight, double r1Eps, Rng& rng);

// Injector objective: -E[D(soft fakes)] + lambdaRec * CE(z'_k, s_k) over
// teacher-forced guided logits. zPrime/gtTokens align per real sample.
Tensor injectorLoss(const Discriminator& d,
                    const std::vector<std::vector<Tensor>>& softFakes,
                    const std::vector<LogitPyramid>& zPrime,
                    const std::vector<const TokenPyramid*>& gtTokens,
                    double lambdaRec, double* lAdvOut, double* lRecOut);

// Teacher-forced pass with injection active: rows come from the real
// pyramid, guidance from the previous scale's slab.
LogitPyramid guidedTeacherForced(const Backbone& bb, const Tokenizer& tok,
                                 const Injector& inj, const TokenPyramid& pyr,
                                 int classLabel, double w);

// Three-phase dynamic-refresh loop over a frozen tokenizer/backbone/
// extractor; only discriminator heads and injector parameters move.
class AidTrainer {
 public:
  AidTrainer(const Tokenizer& tok, const Backbone& bb, Injector& inj,
             Discriminator& disc, const Corpus& real, TrainerConfig cfg);

  TelemetryRow refreshStep();
  const std::vector<TelemetryRow>& telemetry() const { return telemetry_; }
  int stepCount() const { return step_; }
  void verifyFrozenParts() const;

 private:
  std::vector<Tensor> realInputs(int sampleIndex);  // per-scale, detached

  const Tokenizer& tok_;
  const Backbone& bb_;
  Injector& inj_;
  Discriminator& disc_;
  const Corpus& real_;
  TrainerConfig cfg_;
  AdamW optDisc_;
  AdamW optInj_;
  Rng rng_;
  int step_ = 0;
  std::vector<TelemetryRow> telemetry_;
  std::vector<TokenPyramid> realPyramids_;
  std::vector<std::vector<Tensor>> realInputCache_;
  std::uint64_t tokHash_ = 0, bbHash_ = 0, exHash_ = 0;
  const Extractor* extractor_ = nullptr;
};

// AccReal >= 0.99 and AccFake <= 0.01 sustained for `window` steps.
bool collapseDetected(const std::vector<TelemetryRow>& rows, int window = 100);

void writeTelemetryCsv(std::ostream& out,
                       const std::vector<TelemetryRow>& rows);

}  // namespace aidvar
