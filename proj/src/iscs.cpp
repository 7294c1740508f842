#include "aidvar/iscs.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace aidvar {

void jacobiEigen(const std::vector<double>& a, int n, std::vector<double>& w,
                 std::vector<double>& v) {
  std::vector<double> m = a;
  v.assign(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i) v[std::size_t(i) * n + i] = 1.0;
  auto at = [&](int i, int j) -> double& { return m[std::size_t(i) * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = at(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < n; ++i) {
          double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          double api = at(p, i), aqi = at(q, i);
          at(p, i) = c * api - s * aqi;
          at(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          double vip = v[std::size_t(i) * n + p];
          double viq = v[std::size_t(i) * n + q];
          v[std::size_t(i) * n + p] = c * vip - s * viq;
          v[std::size_t(i) * n + q] = s * vip + c * viq;
        }
      }
  }
  w.assign(std::size_t(n), 0.0);
  for (int i = 0; i < n; ++i) w[std::size_t(i)] = at(i, i);
}

GaussianSummary summarize(const std::vector<std::vector<double>>& vectors) {
  if (vectors.empty()) throw ContractError("summarize: empty sample set");
  const int d = int(vectors[0].size());
  GaussianSummary s;
  s.dim = d;
  s.count = (long long)vectors.size();
  s.mean.assign(std::size_t(d), 0.0);
  for (const auto& x : vectors) {
    if (int(x.size()) != d) throw ContractError("summarize: ragged vectors");
    for (int i = 0; i < d; ++i) s.mean[std::size_t(i)] += x[std::size_t(i)];
  }
  for (double& mi : s.mean) mi /= double(s.count);
  s.cov.assign(std::size_t(d) * d, 0.0);
  for (const auto& x : vectors)
    for (int i = 0; i < d; ++i) {
      double xi = x[std::size_t(i)] - s.mean[std::size_t(i)];
      for (int j = i; j < d; ++j)
        s.cov[std::size_t(i) * d + j] +=
            xi * (x[std::size_t(j)] - s.mean[std::size_t(j)]);
    }
  double denom = double(std::max(1LL, s.count - 1));
  for (int i = 0; i < d; ++i)
    for (int j = i; j < d; ++j) {
      double c = s.cov[std::size_t(i) * d + j] / denom;
      s.cov[std::size_t(i) * d + j] = c;
      s.cov[std::size_t(j) * d + i] = c;
    }
  return s;
}

namespace {
// B = sqrt(A) for symmetric PSD A (negative eigenvalues clipped to 0)
std::vector<double> matrixSqrt(const std::vector<double>& a, int n) {
  std::vector<double> w, v;
  jacobiEigen(a, n, w, v);
  std::vector<double> out(std::size_t(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    double s = std::sqrt(std::max(0.0, w[std::size_t(k)]));
    if (s == 0.0) continue;
    for (int i = 0; i < n; ++i) {
      double vik = v[std::size_t(i) * n + k] * s;
      for (int j = 0; j < n; ++j)
        out[std::size_t(i) * n + j] += vik * v[std::size_t(j) * n + k];
    }
  }
  return out;
}

std::vector<double> matMul(const std::vector<double>& a,
                           const std::vector<double>& b, int n) {
  std::vector<double> c(std::size_t(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      double aik = a[std::size_t(i) * n + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j)
        c[std::size_t(i) * n + j] += aik * b[std::size_t(k) * n + j];
    }
  return c;
}
}  // namespace

double frechetDistance(const GaussianSummary& a, const GaussianSummary& b,
                       double epsReg) {
  if (a.dim != b.dim) throw ContractError("frechetDistance: dim mismatch");
  const int n = a.dim;
  for (double x : a.mean)
    if (!std::isfinite(x)) throw ContractError("frechetDistance: non-finite");
  for (double x : b.mean)
    if (!std::isfinite(x)) throw ContractError("frechetDistance: non-finite");
  std::vector<double> sa = a.cov, sb = b.cov;
  for (int i = 0; i < n; ++i) {
    sa[std::size_t(i) * n + i] += epsReg;
    sb[std::size_t(i) * n + i] += epsReg;
  }
  double d2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double d = a.mean[std::size_t(i)] - b.mean[std::size_t(i)];
    d2 += d * d;
  }
  // Tr((Sa Sb)^{1/2}) through the symmetric form sqrt(Sa) Sb sqrt(Sa)
  std::vector<double> ra = matrixSqrt(sa, n);
  std::vector<double> inner = matMul(matMul(ra, sb, n), ra, n);
  // symmetrize against roundoff before the second square root
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double s = 0.5 * (inner[std::size_t(i) * n + j] +
                        inner[std::size_t(j) * n + i]);
      inner[std::size_t(i) * n + j] = s;
      inner[std::size_t(j) * n + i] = s;
    }
  std::vector<double> w, v;
  jacobiEigen(inner, n, w, v);
  double trRoot = 0.0;
  for (double x : w) trRoot += std::sqrt(std::max(0.0, x));
  double tr = 0.0;
  for (int i = 0; i < n; ++i)
    tr += sa[std::size_t(i) * n + i] + sb[std::size_t(i) * n + i];
  double fd = d2 + tr - 2.0 * trRoot;
  return std::max(0.0, fd);
}

std::vector<Tensor> perScaleImages(const Tokenizer& tok,
                                   const TokenPyramid& pyr) {
  const int V = tok.config().codebookSize;
  std::vector<Tensor> probs;
  for (const auto& toks : pyr.tokens) {
    std::vector<double> v(toks.size() * std::size_t(V), 0.0);
    for (std::size_t i = 0; i < toks.size(); ++i)
      v[i * std::size_t(V) + std::size_t(toks[i])] = 1.0;
    probs.emplace_back(std::vector<int>{int(toks.size()), V}, std::move(v));
  }
  std::vector<Tensor> out;
  for (int k = 1; k <= int(pyr.tokens.size()); ++k) {
    Tensor img = tok.decodeSoftProbs(probs, k);
    out.emplace_back(img.shape(), img.values(), false);
  }
  return out;
}

IscsReport computeIscs(const Tokenizer& tok, const Extractor& ex,
                       const std::vector<TokenPyramid>& real,
                       const std::vector<TokenPyramid>& gen,
                       const IscsConfig& cfg) {
  if (int(real.size()) < cfg.minSamples || int(gen.size()) < cfg.minSamples)
    throw ContractError(
        "computeIscs: need at least " + std::to_string(cfg.minSamples) +
        " samples per set, got " + std::to_string(real.size()) + " real / " +
        std::to_string(gen.size()) + " generated");
  const int K = tok.config().scaleCount();
  const int F = ex.featDim();

  auto jointSets = [&](const std::vector<TokenPyramid>& pyrs) {
    // per transition k (index 1..K-1): [feat(img_{k-1}) || feat(img_k)]
    std::vector<std::vector<std::vector<double>>> joints(
        static_cast<std::size_t>(K - 1));
    for (const TokenPyramid& pyr : pyrs) {
      std::vector<Tensor> imgs = perScaleImages(tok, pyr);
      std::vector<std::vector<double>> feats;
      for (const Tensor& img : imgs) {
        Tensor f = ex.feat(img);
        feats.push_back(f.values());
      }
      for (int k = 1; k < K; ++k) {
        std::vector<double> j;
        j.reserve(std::size_t(2 * F));
        j.insert(j.end(), feats[std::size_t(k - 1)].begin(),
                 feats[std::size_t(k - 1)].end());
        j.insert(j.end(), feats[std::size_t(k)].begin(),
                 feats[std::size_t(k)].end());
        joints[std::size_t(k - 1)].push_back(std::move(j));
      }
    }
    return joints;
  };
  auto jr = jointSets(real);
  auto jg = jointSets(gen);

  IscsReport rep;
  rep.extractorId = "extractor-" + std::to_string(ex.paramHash());
  rep.realCount = (long long)real.size();
  rep.genCount = (long long)gen.size();
  double alphaNorm = 0.0;
  for (int k = 2; k <= K; ++k) alphaNorm += std::pow(2.0, double(k));
  double agg = 0.0;
  for (int k = 2; k <= K; ++k) {
    GaussianSummary sr = summarize(jr[std::size_t(k - 2)]);
    GaussianSummary sg = summarize(jg[std::size_t(k - 2)]);
    double fd = frechetDistance(sr, sg, cfg.epsReg);
    double iscs = std::min(cfg.cap, 1.0 / std::max(fd, cfg.epsFloor));
    double alpha = std::pow(2.0, double(k)) / alphaNorm;
    rep.transitions.push_back(k);
    rep.fd.push_back(fd);
    rep.iscs.push_back(iscs);
    rep.alpha.push_back(alpha);
    agg += alpha * iscs;
  }
  rep.aggregate = agg;
  return rep;
}

double proxyFd(const Extractor& ex, const std::vector<Tensor>& realImages,
               const std::vector<Tensor>& genImages, double epsReg) {
  auto featsOf = [&](const std::vector<Tensor>& imgs) {
    std::vector<std::vector<double>> out;
    for (const Tensor& img : imgs) out.push_back(ex.feat(img).values());
    return out;
  };
  return frechetDistance(summarize(featsOf(realImages)),
                         summarize(featsOf(genImages)), epsReg);
}

void writeIscsCsv(std::ostream& out, const IscsReport& rep) {
  out << "k,fd,iscs_k,alpha_k\n";
  for (std::size_t i = 0; i < rep.transitions.size(); ++i)
    out << rep.transitions[i] << ',' << rep.fd[i] << ',' << rep.iscs[i] << ','
        << rep.alpha[i] << '\n';
  out << "aggregate," << rep.aggregate << ",," << '\n';
}

}  // namespace aidvar
