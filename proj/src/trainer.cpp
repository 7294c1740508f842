#include "aidvar/trainer.hpp"

#include <cmath>
#include <ostream>

namespace aidvar {
using namespace ops;

namespace {
AdamW::Config optConfig(double lr, const TrainerConfig& cfg) {
  AdamW::Config oc;
  oc.lr = lr;
  oc.weight_decay = cfg.weightDecay;
  oc.grad_clip = cfg.gradClip;
  return oc;
}

std::vector<Tensor> oneHotProbs(const TokenPyramid& pyr, int V) {
  std::vector<Tensor> probs;
  for (const auto& toks : pyr.tokens) {
    std::vector<double> v(toks.size() * std::size_t(V), 0.0);
    for (std::size_t i = 0; i < toks.size(); ++i)
      v[i * std::size_t(V) + std::size_t(toks[i])] = 1.0;
    probs.emplace_back(std::vector<int>{int(toks.size()), V}, std::move(v));
  }
  return probs;
}

Tensor detached(const Tensor& t) {
  return Tensor(t.shape(), t.values(), false);
}

struct DiscEval {
  Tensor loss;
  double accReal = 0.0;
  double accFake = 0.0;
};

DiscEval evalDisc(const Discriminator& d,
                  const std::vector<std::vector<Tensor>>& reals,
                  const std::vector<std::vector<Tensor>>& fakes,
                  double r1Weight, double r1Eps, Rng& rng) {
  if (reals.size() != fakes.size())
    throw ContractError("discLoss: scale count mismatch");
  const int K = int(reals.size());
  Tensor loss = Tensor::scalar(0.0);
  int nReal = 0, nFake = 0, okReal = 0, okFake = 0;
  for (int k = 0; k < K; ++k) {
    Tensor hk = Tensor::scalar(0.0);
    for (const Tensor& r : reals[std::size_t(k)]) {
      Tensor s = d.score(r);
      okReal += s.item() > 0.0;
      ++nReal;
      hk = add(hk, relu(addConst(scale(s, -1.0), 1.0)));  // max(0, 1-D)
    }
    hk = scale(hk, 1.0 / double(reals[std::size_t(k)].size()));
    Tensor hf = Tensor::scalar(0.0);
    for (const Tensor& f : fakes[std::size_t(k)]) {
      Tensor s = d.score(f);
      okFake += s.item() < 0.0;
      ++nFake;
      hf = add(hf, relu(addConst(s, 1.0)));  // max(0, 1+D)
    }
    hf = scale(hf, 1.0 / double(fakes[std::size_t(k)].size()));
    loss = add(loss, add(hk, hf));
  }
  loss = scale(loss, 1.0 / double(K));
  if (r1Weight > 0.0) {
    // penalize the critic slope on the finest-scale reals
    Tensor r1 = Tensor::scalar(0.0);
    const auto& finest = reals[std::size_t(K - 1)];
    for (const Tensor& r : finest)
      r1 = add(r1, r1Surrogate(d, r, rng, r1Eps));
    loss = add(loss, scale(r1, r1Weight / double(finest.size())));
  }
  DiscEval ev;
  ev.loss = loss;
  ev.accReal = nReal ? double(okReal) / nReal : 0.0;
  ev.accFake = nFake ? double(okFake) / nFake : 0.0;
  return ev;
}
}  // namespace

Tensor discLoss(const Discriminator& d,
                const std::vector<std::vector<Tensor>>& reals,
                const std::vector<std::vector<Tensor>>& fakes,
                double r1Weight, double r1Eps, Rng& rng) {
  return evalDisc(d, reals, fakes, r1Weight, r1Eps, rng).loss;
}

Tensor injectorLoss(const Discriminator& d,
                    const std::vector<std::vector<Tensor>>& softFakes,
                    const std::vector<LogitPyramid>& zPrime,
                    const std::vector<const TokenPyramid*>& gtTokens,
                    double lambdaRec, double* lAdvOut, double* lRecOut) {
  if (lambdaRec > 0.0 && (zPrime.empty() || zPrime.size() != gtTokens.size()))
    throw ContractError("injectorLoss: ground-truth tokens required");
  Tensor adv = Tensor::scalar(0.0);
  int n = 0;
  for (const auto& perScale : softFakes)
    for (const Tensor& f : perScale) {
      adv = add(adv, d.score(f));
      ++n;
    }
  adv = scale(adv, n ? -1.0 / double(n) : 0.0);
  Tensor rec = Tensor::scalar(0.0);
  if (lambdaRec > 0.0) {
    int m = 0;
    for (std::size_t i = 0; i < zPrime.size(); ++i) {
      const TokenPyramid& gt = *gtTokens[i];
      for (std::size_t k = 0; k < zPrime[i].size(); ++k) {
        rec = add(rec, crossEntropy(zPrime[i][k], gt.tokens[k]));
        ++m;
      }
    }
    rec = scale(rec, m ? 1.0 / double(m) : 0.0);
  }
  if (lAdvOut) *lAdvOut = adv.item();
  if (lRecOut) *lRecOut = rec.item();
  return add(adv, scale(rec, lambdaRec));
}

LogitPyramid guidedTeacherForced(const Backbone& bb, const Tokenizer& tok,
                                 const Injector& inj, const TokenPyramid& pyr,
                                 int classLabel, double w) {
  const int K = int(pyr.tokens.size());
  std::vector<Tensor> rows, guidance;
  rows.push_back(bb.inputRows(0, nullptr, classLabel));
  guidance.emplace_back();
  std::vector<Tensor> slabs;  // Phi_k(embed(S_k)) without tokenizer tape
  for (int k = 0; k < K; ++k) {
    Tensor h = embedding(tok.codebook(), pyr.tokens[std::size_t(k)]);
    slabs.push_back(detached(tok.phi(h, k)));
  }
  LogitPyramid out;
  for (int k = 1; k < K; ++k) {
    rows.push_back(
        bb.inputRows(k, &pyr.accumulated[std::size_t(k - 1)], classLabel));
    guidance.push_back(inj.guide(k, slabs[std::size_t(k - 1)]));
  }
  // one stacked pass per target scale keeps injection per-scale faithful
  for (int k = 0; k < K; ++k) {
    std::vector<Tensor> r(rows.begin(), rows.begin() + k + 1);
    std::vector<Tensor> g(guidance.begin(), guidance.begin() + k + 1);
    out.push_back(bb.predictLogits(r, g, w));
  }
  return out;
}

AidTrainer::AidTrainer(const Tokenizer& tok, const Backbone& bb, Injector& inj,
                       Discriminator& disc, const Corpus& real,
                       TrainerConfig cfg)
    : tok_(tok),
      bb_(bb),
      inj_(inj),
      disc_(disc),
      real_(real),
      cfg_(cfg),
      optDisc_(disc.params(), optConfig(cfg.lrDisc, cfg)),
      optInj_(inj.params(), optConfig(cfg.lrInj, cfg)),
      rng_(cfg.seed) {
  if (!bb_.frozen()) throw StateError("trainer: backbone must be frozen");
  if (cfg_.latentSpace != disc_.latentMode())
    throw ContractError("trainer: discriminator mode mismatch");
  extractor_ = disc_.extractor();
  if (extractor_ != nullptr && !extractor_->frozen())
    throw StateError("trainer: extractor must be frozen");
  tokHash_ = tok_.paramHash();
  bbHash_ = bb_.paramHash();
  if (extractor_) exHash_ = extractor_->paramHash();
  const TokenizerConfig& tc = tok_.config();
  realPyramids_.reserve(real_.samples.size());
  for (const ImageSample& s : real_.samples)
    realPyramids_.push_back(
        tok_.encode(imageTensor(s, tc.imageSize, tc.channels)));
  realInputCache_.resize(real_.samples.size());
}

std::vector<Tensor> AidTrainer::realInputs(int sampleIndex) {
  auto& cache = realInputCache_[std::size_t(sampleIndex)];
  if (!cache.empty()) return cache;
  const TokenPyramid& pyr = realPyramids_[std::size_t(sampleIndex)];
  const int K = int(pyr.tokens.size());
  std::vector<Tensor> probs = oneHotProbs(pyr, tok_.config().codebookSize);
  for (int k = 1; k <= K; ++k) {
    Tensor x = cfg_.latentSpace ? tok_.accumulateSoft(probs, k)
                                : tok_.decodeSoftProbs(probs, k);
    cache.push_back(detached(x));
  }
  return cache;
}

TelemetryRow AidTrainer::refreshStep() {
  const int K = tok_.config().scaleCount();
  const int B = cfg_.batchSize;
  const int V = tok_.config().codebookSize;

  // phase 1: fakes from the current injector through the soft path
  GuidanceFn fn = inj_.guidanceFn();
  std::vector<std::vector<Tensor>> fakes(static_cast<std::size_t>(K));
  for (int i = 0; i < B; ++i) {
    int label = int(rng_.uniformInt(std::uint64_t(kNumClasses)));
    SamplerConfig sc = cfg_.sampler;
    sc.seed = Rng::substream(cfg_.seed, std::uint64_t(step_) * B + i + 1)
                  .nextU64();
    GenerationResult g =
        generate(tok_, bb_, label, sc, &fn, cfg_.wTrain);
    for (int k = 1; k <= K; ++k) {
      if (cfg_.latentSpace) {
        std::vector<Tensor> probs;
        for (int j = 0; j < k; ++j)
          probs.push_back(softmax(g.condLogits[std::size_t(j)]));
        fakes[std::size_t(k - 1)].push_back(tok_.accumulateSoft(probs, k));
      } else {
        fakes[std::size_t(k - 1)].push_back(
            tok_.decodeSoftLogits(g.condLogits, k));
      }
    }
  }

  std::vector<std::vector<Tensor>> reals(static_cast<std::size_t>(K));
  std::vector<int> realIdx;
  for (int i = 0; i < B; ++i) {
    int idx = int(rng_.uniformInt(std::uint64_t(real_.samples.size())));
    realIdx.push_back(idx);
    std::vector<Tensor> per = realInputs(idx);
    for (int k = 0; k < K; ++k) reals[std::size_t(k)].push_back(per[std::size_t(k)]);
  }

  // phase 2: discriminator update against detached fakes
  std::vector<std::vector<Tensor>> fakesDetached(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    for (const Tensor& f : fakes[std::size_t(k)])
      fakesDetached[std::size_t(k)].push_back(detached(f));
  disc_.params().zeroGrads();
  inj_.params().zeroGrads();
  DiscEval ev =
      evalDisc(disc_, reals, fakesDetached, cfg_.r1Weight, cfg_.r1Eps, rng_);
  if (!std::isfinite(ev.loss.item()))
    throw TrainingError("refresh step " + std::to_string(step_) +
                        ": discriminator loss is not finite");
  backward(ev.loss);
  optDisc_.step();

  // phase 3: injector update, discriminator held fixed
  disc_.params().zeroGrads();
  inj_.params().zeroGrads();
  std::vector<LogitPyramid> zPrime;
  std::vector<const TokenPyramid*> gt;
  for (int idx : realIdx) {
    zPrime.push_back(guidedTeacherForced(
        bb_, tok_, inj_, realPyramids_[std::size_t(idx)],
        real_.samples[std::size_t(idx)].classLabel, cfg_.wTrain));
    gt.push_back(&realPyramids_[std::size_t(idx)]);
  }
  double lAdv = 0.0, lRec = 0.0;
  Tensor il =
      injectorLoss(disc_, fakes, zPrime, gt, cfg_.lambdaRec, &lAdv, &lRec);
  if (!std::isfinite(il.item()))
    throw TrainingError("refresh step " + std::to_string(step_) +
                        ": injector loss is not finite");
  backward(il);
  optInj_.step();

  TelemetryRow row;
  row.step = step_;
  row.dLoss = ev.loss.item();
  row.injLoss = il.item();
  row.accReal = ev.accReal;
  row.accFake = ev.accFake;
  row.lAdv = lAdv;
  row.lRec = lRec;
  telemetry_.push_back(row);
  ++step_;
  (void)V;
  return row;
}

void AidTrainer::verifyFrozenParts() const {
  if (tok_.paramHash() != tokHash_)
    throw StateError("trainer: tokenizer parameters changed");
  if (bb_.paramHash() != bbHash_)
    throw StateError("trainer: backbone parameters changed");
  bb_.verifyFrozen();
  if (extractor_ != nullptr) {
    extractor_->verifyFrozen();
    if (extractor_->paramHash() != exHash_)
      throw StateError("trainer: extractor parameters changed");
  }
}

bool collapseDetected(const std::vector<TelemetryRow>& rows, int window) {
  int run = 0;
  for (const TelemetryRow& r : rows) {
    run = (r.accReal >= 0.99 && r.accFake <= 0.01) ? run + 1 : 0;
    if (run >= window) return true;
  }
  return false;
}

void writeTelemetryCsv(std::ostream& out,
                       const std::vector<TelemetryRow>& rows) {
  out << "step,d_loss,inj_loss,acc_real,acc_fake,l_adv,l_rec\n";
  for (const TelemetryRow& r : rows)
    out << r.step << ',' << r.dLoss << ',' << r.injLoss << ',' << r.accReal
        << ',' << r.accFake << ',' << r.lAdv << ',' << r.lRec << '\n';
}

}  // namespace aidvar
