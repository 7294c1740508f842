#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "aidvar/discriminator.hpp"
#include "aidvar/tokenizer.hpp"

namespace aidvar {

struct GaussianSummary {
  int dim = 0;
  long long count = 0;
  std::vector<double> mean;  // [dim]
  std::vector<double> cov;   // [dim*dim], symmetrized
};

struct IscsConfig {
  int minSamples = 256;
  double epsReg = 1e-6;    // diagonal shrinkage added before FD
  double epsFloor = 1e-6;  // 1/FD floor
  double cap = 1e6;
};

struct IscsReport {
  std::vector<int> transitions;  // scale indices k (1-based), k >= 2
  std::vector<double> fd;
  std::vector<double> iscs;
  std::vector<double> alpha;
  double aggregate = 0.0;
  std::string extractorId;
  long long realCount = 0;
  long long genCount = 0;
};

// Symmetric Jacobi eigendecomposition: fills eigenvalues (ascending is not
// guaranteed) and row-major eigenvectors V with A = V diag(w) V^T.
void jacobiEigen(const std::vector<double>& a, int n, std::vector<double>& w,
                 std::vector<double>& v);

GaussianSummary summarize(const std::vector<std::vector<double>>& vectors);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); negative eigenvalues
// of the symmetrized product are clipped; epsReg is added to diagonals.
double frechetDistance(const GaussianSummary& a, const GaussianSummary& b,
                       double epsReg = 1e-6);

// Per-scale prefix decodes of a pyramid through the shared soft path.
std::vector<Tensor> perScaleImages(const Tokenizer& tok,
                                   const TokenPyramid& pyr);

IscsReport computeIscs(const Tokenizer& tok, const Extractor& ex,
                       const std::vector<TokenPyramid>& real,
                       const std::vector<TokenPyramid>& gen,
                       const IscsConfig& cfg);

// Frechet distance over final-image extractor features (the FID stand-in).
double proxyFd(const Extractor& ex, const std::vector<Tensor>& realImages,
               const std::vector<Tensor>& genImages, double epsReg = 1e-6);

void writeIscsCsv(std::ostream& out, const IscsReport& report);

}  // namespace aidvar
