#include "aidvar/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aidvar/data.hpp"

namespace aidvar {
using namespace ops;

std::vector<double> PropagationConfig::broadcast(
    const std::vector<double>& v) const {
  if (int(v.size()) == scaleCount) return v;
  if (v.size() == 1)
    return std::vector<double>(static_cast<std::size_t>(scaleCount), v[0]);
  throw ContractError("propagation config: per-scale list must have size 1 or "
                      "match the scale count");
}

std::vector<double> PropagationConfig::etaAt() const {
  if (eta.empty())
    return std::vector<double>(static_cast<std::size_t>(scaleCount), 0.0);
  return broadcast(eta);
}

void PropagationConfig::validate() const {
  if (scaleCount < 1) throw ContractError("propagation config: scaleCount < 1");
  if (trials < 1000) throw ContractError("propagation config: trials < 1000");
  if (dim < 2) throw ContractError("propagation config: dim < 2");
  if (gamma < 0.0 || gamma > 1.0)
    throw ContractError("propagation config: gamma must be in [0, 1]");
  for (double s : sigmaAt())
    if (!(s > 0.0)) throw ContractError("propagation config: sigma must be > 0");
  for (double l : lipschitzAt())
    if (l < 0.0) throw ContractError("propagation config: L must be >= 0");
  for (double e : etaAt())
    if (e < 0.0 || e > 1.0)
      throw ContractError("propagation config: eta must be in [0, 1]");
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Uniformly random unit vector.
std::vector<double> randomUnit(int dim, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    n = std::sqrt(dot(v, v));
  } while (n < 1e-12);
  for (double& x : v) x /= n;
  return v;
}

// Random unit vector orthogonal to `ref` (Gram-Schmidt on a random draw).
std::vector<double> randomOrthogonalUnit(const std::vector<double>& ref,
                                         Rng& rng) {
  double rn = dot(ref, ref);
  for (;;) {
    std::vector<double> v = randomUnit(int(ref.size()), rng);
    if (rn > 0.0) {
      double c = dot(v, ref) / rn;
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * ref[i];
    }
    double n = std::sqrt(dot(v, v));
    if (n > 1e-9) {
      for (double& x : v) x /= n;
      return v;
    }
  }
}

ErrorTrace simulate(const PropagationConfig& cfg, bool corrected) {
  cfg.validate();
  const int K = cfg.scaleCount;
  const int m = cfg.dim;
  const std::vector<double> sig = cfg.sigmaAt();
  const std::vector<double> lip = cfg.lipschitzAt();
  const std::vector<double> eta = cfg.etaAt();
  const double keep = corrected ? 1.0 - cfg.gamma : 1.0;

  ErrorTrace tr;
  tr.scaleCount = K;
  tr.trials = cfg.trials;
  tr.dim = m;
  tr.corrected = corrected;
  tr.gammaUsed = corrected ? cfg.gamma : 0.0;
  tr.stepSq.assign(static_cast<std::size_t>(K),
                   std::vector<double>(static_cast<std::size_t>(cfg.trials)));
  tr.cumulativeSq = tr.stepSq;
  tr.crossTerm.assign(static_cast<std::size_t>(K), 0.0);
  tr.decompositionResidual.assign(static_cast<std::size_t>(cfg.trials), 0.0);

  for (int t = 0; t < cfg.trials; ++t) {
    Rng rng = Rng::substream(cfg.seed, std::uint64_t(t) + 1);
    std::vector<double> accum(static_cast<std::size_t>(m), 0.0);
    std::vector<std::vector<double>> steps;
    steps.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      const double noiseSd = sig[std::size_t(k)] / std::sqrt(double(m));
      std::vector<double> step(static_cast<std::size_t>(m));
      for (double& x : step) x = rng.normal(0.0, noiseSd);

      const double accumNorm = std::sqrt(dot(accum, accum));
      const double propNorm = keep * lip[std::size_t(k)] * accumNorm;
      if (propNorm > 0.0) {
        std::vector<double> dir;
        if (corrected)
          dir = randomOrthogonalUnit(accum, rng);
        else if (cfg.randomDirection)
          dir = randomUnit(m, rng);
        else {
          dir = accum;
          for (double& x : dir) x /= accumNorm;
        }
        for (int i = 0; i < m; ++i)
          step[std::size_t(i)] += propNorm * dir[std::size_t(i)];
      }
      if (eta[std::size_t(k)] > 0.0 && rng.uniform() < eta[std::size_t(k)]) {
        std::vector<double> dir = randomUnit(m, rng);
        for (int i = 0; i < m; ++i)
          step[std::size_t(i)] += cfg.dMin * dir[std::size_t(i)];
      }

      tr.crossTerm[std::size_t(k)] += dot(accum, step) / double(cfg.trials);
      for (int i = 0; i < m; ++i) accum[std::size_t(i)] += step[std::size_t(i)];
      tr.stepSq[std::size_t(k)][std::size_t(t)] = dot(step, step);
      tr.cumulativeSq[std::size_t(k)][std::size_t(t)] = dot(accum, accum);
      steps.push_back(std::move(step));
    }
    // exact decomposition: |sum_j step_j|^2 == sum_j |step_j|^2
    //                                          + 2 sum_{i<j} <step_i, step_j>
    double rhs = 0.0;
    for (int j = 0; j < K; ++j) {
      rhs += dot(steps[std::size_t(j)], steps[std::size_t(j)]);
      for (int i = 0; i < j; ++i)
        rhs += 2.0 * dot(steps[std::size_t(i)], steps[std::size_t(j)]);
    }
    tr.decompositionResidual[std::size_t(t)] =
        std::fabs(tr.cumulativeSq[std::size_t(K - 1)][std::size_t(t)] - rhs);
  }

  tr.meanStepSq.assign(static_cast<std::size_t>(K), 0.0);
  tr.meanCumulativeSq.assign(static_cast<std::size_t>(K), 0.0);
  tr.seCumulativeSq.assign(static_cast<std::size_t>(K), 0.0);
  for (int k = 0; k < K; ++k) {
    const auto& ds = tr.stepSq[std::size_t(k)];
    const auto& cs = tr.cumulativeSq[std::size_t(k)];
    double md = std::accumulate(ds.begin(), ds.end(), 0.0) / double(cfg.trials);
    double mc = std::accumulate(cs.begin(), cs.end(), 0.0) / double(cfg.trials);
    double var = 0.0;
    for (double x : cs) var += (x - mc) * (x - mc);
    var /= double(std::max(1, cfg.trials - 1));
    tr.meanStepSq[std::size_t(k)] = md;
    tr.meanCumulativeSq[std::size_t(k)] = mc;
    tr.seCumulativeSq[std::size_t(k)] = std::sqrt(var / double(cfg.trials));
  }
  return tr;
}

double sampleSe(const std::vector<double>& xs) {
  const double n = double(xs.size());
  double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= std::max(1.0, n - 1.0);
  return std::sqrt(var / n);
}

}  // namespace

ErrorTrace simulateVar(const PropagationConfig& cfg) {
  return simulate(cfg, false);
}

ErrorTrace simulateAid(const PropagationConfig& cfg) {
  cfg.validate();
  // no correction at all: the process is exactly the uncorrected one
  if (cfg.gamma == 0.0) return simulate(cfg, false);
  return simulate(cfg, true);
}

BoundReport checkBounds(const ErrorTrace& trace,
                        const PropagationConfig& cfg) {
  cfg.validate();
  if (trace.scaleCount != cfg.scaleCount || trace.trials != cfg.trials)
    throw ContractError("checkBounds: trace does not match config");
  const int K = cfg.scaleCount;
  const std::vector<double> sig = cfg.sigmaAt();
  const std::vector<double> lip = cfg.lipschitzAt();
  const std::vector<double> eta = cfg.etaAt();

  BoundReport rep;
  auto addCheck = [&](const std::string& name, double value, double bound,
                      bool pass, const std::string& detail) {
    rep.checks.push_back({name, value, bound, pass, detail});
    if (!pass) {
      rep.allPass = false;
      rep.failed.push_back(name);
    }
  };

  // (a) exact decomposition identity per trial
  double worst = 0.0;
  for (double r : trace.decompositionResidual) worst = std::max(worst, r);
  addCheck("decomposition-identity", worst, 1e-9, worst < 1e-9,
           "max per-trial gap between |total|^2 and its expansion");

  // (b) mis-token floor on per-scale increments
  for (int k = 0; k < K; ++k) {
    if (eta[std::size_t(k)] <= 0.0) continue;
    double floor = eta[std::size_t(k)] * cfg.dMin * cfg.dMin;
    double v = trace.meanStepSq[std::size_t(k)];
    double se = sampleSe(trace.stepSq[std::size_t(k)]);
    addCheck("mistoken-floor-scale-" + std::to_string(k + 1), v,
             floor - 3.0 * se, v >= floor - 3.0 * se,
             "mean step energy vs eta * dMin^2");
  }

  // Analytic envelopes: lower uses the 1 + L^2 growth, upper uses the
  // realized growth of the simulated regime ((1+L)^2 for the aligned
  // uncorrected case, 1 + ((1-gamma) L)^2 for the corrected one).
  rep.lowerEnvelope.assign(static_cast<std::size_t>(K), 0.0);
  rep.upperEnvelope.assign(static_cast<std::size_t>(K), 0.0);
  double lo = 0.0, hi = 0.0, linear = 0.0;
  const double keep = trace.corrected ? 1.0 - trace.gammaUsed : 1.0;
  for (int k = 0; k < K; ++k) {
    const double addTerm = sig[std::size_t(k)] * sig[std::size_t(k)] +
                           eta[std::size_t(k)] * cfg.dMin * cfg.dMin;
    const double l = keep * lip[std::size_t(k)];
    lo = (1.0 + l * l) * lo + addTerm;
    hi = trace.corrected ? (1.0 + l * l) * hi + addTerm
                         : (1.0 + l) * (1.0 + l) * hi + addTerm;
    linear += addTerm;
    rep.lowerEnvelope[std::size_t(k)] = trace.corrected ? linear : lo;
    rep.upperEnvelope[std::size_t(k)] = hi;
  }
  const double meanK = trace.meanCumulativeSq[std::size_t(K - 1)];
  const double seK = trace.seCumulativeSq[std::size_t(K - 1)];
  if (trace.corrected) {
    addCheck("dampened-upper", meanK, hi + 3.0 * seK, meanK <= hi + 3.0 * seK,
             "mean terminal energy vs geometric bound at (1-gamma) L");
    addCheck("linear-floor", meanK, linear - 3.0 * seK,
             meanK >= linear - 3.0 * seK,
             "mean terminal energy vs sum of per-scale noise energies");
  } else {
    addCheck("geometric-lower", meanK, lo - 3.0 * seK,
             meanK >= lo - 3.0 * seK,
             "mean terminal energy vs compounding lower bound");
  }

  // (d) exact squared-norm gain of nearest-neighbor upsampling
  const int H = cfg.resolutions.empty() ? 0 : cfg.resolutions.back();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  for (std::size_t i = 0; i + 1 < cfg.resolutions.size(); ++i) {
    const int p = cfg.resolutions[i];
    if (p <= 0 || H % p != 0) continue;
    Tensor e({1, p, p});
    for (double& x : e.values()) x = rng.normal();
    double en = 0.0;
    for (double x : e.values()) en += x * x;
    Tensor up = nearestUpsample(e, H / p);
    double un = 0.0;
    for (double x : up.values()) un += x * x;
    const double expectGain = double(H) / p * (double(H) / p);
    const double gain = un / en;
    addCheck("upsample-gain-" + std::to_string(p) + "to" + std::to_string(H),
             gain, expectGain, std::fabs(gain - expectGain) <= 1e-9 * expectGain,
             "measured spectral factor " + std::to_string(gain / expectGain));
  }
  return rep;
}

void writeSimCsv(std::ostream& os, const ErrorTrace& trace,
                 const BoundReport& report) {
  os << "scale,mean_delta_sq,mean_Delta_sq,bound_lower,bound_upper,pass\n";
  for (int k = 0; k < trace.scaleCount; ++k) {
    os << (k + 1) << ',' << trace.meanStepSq[std::size_t(k)] << ','
       << trace.meanCumulativeSq[std::size_t(k)] << ','
       << report.lowerEnvelope[std::size_t(k)] << ','
       << report.upperEnvelope[std::size_t(k)] << ','
       << (report.allPass ? "pass" : "fail") << '\n';
  }
  for (const BoundCheck& c : report.checks)
    os << "# " << c.name << ',' << c.value << ',' << c.bound << ','
       << (c.pass ? "pass" : "fail") << '\n';
}

MistokenResult mistokenFloor(const std::vector<std::vector<double>>& codebook,
                             double eta, int draws, std::uint64_t seed) {
  if (codebook.size() < 2)
    throw ContractError("mistokenFloor: need at least two codes");
  const std::size_t V = codebook.size();
  const std::size_t d = codebook[0].size();
  for (const auto& row : codebook)
    if (row.size() != d)
      throw ContractError("mistokenFloor: ragged codebook");
  if (draws < 1) throw ContractError("mistokenFloor: draws < 1");

  MistokenResult res;
  double dmin2 = 1e300;
  for (std::size_t i = 0; i < V; ++i)
    for (std::size_t j = i + 1; j < V; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double g = codebook[i][c] - codebook[j][c];
        s += g * g;
      }
      dmin2 = std::min(dmin2, s);
    }
  res.dMin = std::sqrt(dmin2);
  res.floor = eta * dmin2;

  Rng rng(seed);
  double total = 0.0;
  for (int t = 0; t < draws; ++t) {
    std::size_t truth = std::size_t(rng.uniformInt(V));
    if (rng.uniform() >= eta) continue;  // token kept: zero error
    std::size_t wrong = std::size_t(rng.uniformInt(V - 1));
    if (wrong >= truth) ++wrong;
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double g = codebook[truth][c] - codebook[wrong][c];
      s += g * g;
    }
    total += s;
  }
  res.empirical = total / double(draws);
  return res;
}

DivergenceResult injectNoiseExperiment(const Tokenizer& tok,
                                       const Backbone& bb,
                                       const Injector* inj,
                                       const NoiseInjectionConfig& cfg) {
  const TokenizerConfig& tc = tok.config();
  const int K = tc.scaleCount();
  const int d = tc.latentDim;
  const int H = tc.latentSize();
  if (cfg.injectScale < 0 || cfg.injectScale >= K)
    throw ContractError("injectNoiseExperiment: inject scale out of range");
  if (cfg.seeds < 1)
    throw ContractError("injectNoiseExperiment: need at least one seed");

  GuidanceFn fn;
  const GuidanceFn* fnPtr = nullptr;
  if (inj != nullptr) {
    fn = inj->guidanceFn();
    fnPtr = &fn;
  }

  DivergenceResult res;
  res.meanCurve.assign(static_cast<std::size_t>(K), 0.0);
  int monotone = 0;
  for (int s = 0; s < cfg.seeds; ++s) {
    Rng rng = Rng::substream(cfg.baseSeed, std::uint64_t(s) + 1);
    const int label = int(rng.uniformInt(std::uint64_t(kNumClasses)));
    SamplerConfig sampler = cfg.sampler;
    sampler.seed = rng.nextU64();

    // Gaussian patch over a random half-size square of the feature map.
    Tensor noise = Tensor::zeros({d, H, H});
    const int side = std::max(1, H / 2);
    const int oy = int(rng.uniformInt(std::uint64_t(H - side + 1)));
    const int ox = int(rng.uniformInt(std::uint64_t(H - side + 1)));
    for (int c = 0; c < d; ++c)
      for (int y = oy; y < oy + side; ++y)
        for (int x = ox; x < ox + side; ++x)
          noise.values()[(std::size_t(c) * H + y) * H + x] =
              cfg.noiseLevel * rng.normal();

    GenerationResult clean =
        generate(tok, bb, label, sampler, fnPtr, cfg.guidanceWeight);
    GenerationResult noisy =
        generate(tok, bb, label, sampler, fnPtr, cfg.guidanceWeight, &noise,
                 cfg.injectScale);

    std::vector<double> curve(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
      // accumulated feature maps carry the injected slab, so their distance
      // is exactly the error vector the propagation theory tracks
      const Tensor& a = clean.pyramid.accumulated[std::size_t(k)];
      const Tensor& b = noisy.pyramid.accumulated[std::size_t(k)];
      double sum = 0.0;
      for (std::size_t i = 0; i < a.values().size(); ++i) {
        double g = a.values()[i] - b.values()[i];
        sum += g * g;
      }
      curve[std::size_t(k)] = std::sqrt(sum);
      res.meanCurve[std::size_t(k)] += curve[std::size_t(k)] / cfg.seeds;
    }
    bool mono = true;
    for (int k = cfg.injectScale + 1; k < K; ++k)
      if (curve[std::size_t(k)] < curve[std::size_t(k - 1)] - 1e-12)
        mono = false;
    monotone += mono;
    res.curves.push_back(std::move(curve));
  }
  res.meanTerminal = res.meanCurve.back();
  res.fracMonotoneAfterInjection = double(monotone) / double(cfg.seeds);
  return res;
}

void writeDivergenceCsv(std::ostream& os, const DivergenceResult& r) {
  os << "seed,scale,divergence\n";
  for (std::size_t s = 0; s < r.curves.size(); ++s)
    for (std::size_t k = 0; k < r.curves[s].size(); ++k)
      os << s << ',' << (k + 1) << ',' << r.curves[s][k] << '\n';
  for (std::size_t k = 0; k < r.meanCurve.size(); ++k)
    os << "mean," << (k + 1) << ',' << r.meanCurve[k] << '\n';
}

}  // namespace aidvar
