#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aidvar/tokenizer.hpp"
#include "test_support.hpp"

using namespace aidvar;
using namespace aidvar::ops;
using aidvar::testing::gradCheck;
using aidvar::testing::randomTensor;

namespace {
TokenizerConfig stubConfig(int size, int V = 8) {
  TokenizerConfig cfg;
  cfg.identityStub = true;
  cfg.imageSize = size;
  cfg.channels = 3;
  cfg.latentDim = 3;
  cfg.codebookSize = V;
  cfg.resolutions = {size};
  return cfg;
}

std::vector<Tensor> oneHotProbs(const Tokenizer& tok,
                                const TokenPyramid& pyr) {
  std::vector<Tensor> probs;
  const int V = tok.config().codebookSize;
  for (const auto& toks : pyr.tokens) {
    std::vector<double> v(toks.size() * std::size_t(V), 0.0);
    for (std::size_t i = 0; i < toks.size(); ++i)
      v[i * std::size_t(V) + std::size_t(toks[i])] = 1.0;
    probs.emplace_back(std::vector<int>{int(toks.size()), V}, std::move(v));
  }
  return probs;
}
}  // namespace

TEST_CASE("identity-stub round trip: encode(decode(P)) == P") {
  Tokenizer tok(stubConfig(4), 77);
  tok.markTrained();
  Rng rng(5);
  TokenPyramid pyr;
  pyr.resolutions = {4};
  std::vector<int> toks(16);
  for (int& t : toks) t = int(rng.uniformInt(8));
  pyr.tokens.push_back(toks);
  Tensor img = tok.decodeHard(pyr, 1);
  TokenPyramid back = tok.encode(img);
  CHECK(back.tokens[0] == toks);
}

TEST_CASE("K=1 p=1 token equals brute-force nearest code") {
  Tokenizer tok(stubConfig(1, 16), 31);
  tok.markTrained();
  Tensor img({3, 1, 1}, {0.3, -0.7, 1.1});
  TokenPyramid pyr = tok.encode(img);
  // brute force over all V rows
  const Tensor& W = tok.codebook();
  int best = 0;
  double bestD = 1e300;
  for (int v = 0; v < 16; ++v) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      double d = img.values()[std::size_t(c)] - W.values()[std::size_t(v) * 3 + c];
      s += d * d;
    }
    if (s < bestD) {
      bestD = s;
      best = v;
    }
  }
  CHECK(pyr.tokens[0][0] == best);
}

TEST_CASE("tokens stay in range and accumulation identity holds bit-exactly") {
  TokenizerConfig cfg;  // real (non-stub) tokenizer, untrained params
  Tokenizer tok(cfg, 3);
  tok.markTrained();
  Rng rng(17);
  Tensor img = randomTensor({3, 32, 32}, rng, 0.0, 1.0, false);
  TokenPyramid pyr = tok.encode(img);
  const int V = cfg.codebookSize;
  for (const auto& toks : pyr.tokens)
    for (int t : toks) {
      CHECK(t >= 0);
      CHECK(t < V);
    }
  // f_K from stored per-scale embeddings == incrementally accumulated f_K
  Tensor f = Tensor::zeros({cfg.latentDim, 8, 8});
  for (int k = 0; k < cfg.scaleCount(); ++k) {
    Tensor h = embedding(tok.codebook(), pyr.tokens[std::size_t(k)]);
    f = add(f, tok.phi(h, k));
    CHECK(f.values() == pyr.accumulated[std::size_t(k)].values());
  }
}

TEST_CASE("untrained tokenizer refuses to encode") {
  Tokenizer tok(TokenizerConfig{}, 3);
  Rng rng(2);
  Tensor img = randomTensor({3, 32, 32}, rng, 0.0, 1.0, false);
  CHECK_THROWS_AS(tok.encode(img), StateError);
}

TEST_CASE("soft decode on exact one-hot equals hard decode") {
  Tokenizer tok(TokenizerConfig{}, 11);
  tok.markTrained();
  Rng rng(23);
  Tensor img = randomTensor({3, 32, 32}, rng, 0.0, 1.0, false);
  TokenPyramid pyr = tok.encode(img);
  Tensor hard = tok.decodeHard(pyr, 4);
  Tensor soft = tok.decodeSoftProbs(oneHotProbs(tok, pyr), 4);
  CHECK(imageL2(hard, soft) < 1e-9);

  // sharp logits converge: c=50 within 1e-9, monotone in sharpness
  double prev = 1e300;
  for (double sharp : {1.0, 5.0, 20.0, 50.0}) {
    LogitPyramid logits;
    for (const auto& toks : pyr.tokens) {
      const int V = tok.config().codebookSize;
      std::vector<double> v(toks.size() * std::size_t(V), 0.0);
      for (std::size_t i = 0; i < toks.size(); ++i)
        v[i * std::size_t(V) + std::size_t(toks[i])] = sharp;
      logits.emplace_back(std::vector<int>{int(toks.size()), V}, std::move(v));
    }
    double l2 = imageL2(hard, tok.decodeSoftLogits(logits, 4));
    CHECK(l2 < prev);
    prev = l2;
    if (sharp == 50.0) CHECK(l2 < 1e-9);
  }
}

TEST_CASE("uniform probabilities give the codebook column mean") {
  Tokenizer tok(stubConfig(2, 8), 3);
  const int V = 8;
  Tensor probs({4, V}, std::vector<double>(4 * V, 1.0 / V));
  Tensor f = tok.accumulateSoft({probs}, 1);  // [3,2,2], stub Phi = identity
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (int v = 0; v < V; ++v) mean += tok.codebook().values()[std::size_t(v) * 3 + c];
    mean /= V;
    for (int i = 0; i < 4; ++i)
      CHECK(f.values()[std::size_t(c) * 4 + i] == doctest::Approx(mean));
  }
}

TEST_CASE("soft path is differentiable: pixel loss grad wrt logits") {
  TokenizerConfig cfg;
  cfg.resolutions = {1, 2};  // small for the finite-difference sweep
  Tokenizer tok(cfg, 7);
  Rng rng(71);
  LogitPyramid logits;
  logits.push_back(randomTensor({1, cfg.codebookSize}, rng, -1, 1, true));
  logits.push_back(randomTensor({4, cfg.codebookSize}, rng, -1, 1, true));
  auto graph = [&] {
    Tensor img = tok.decodeSoftLogits(logits, 2);
    return meanAll(mul(img, img));
  };
  logits[0].zeroGrad();
  logits[1].zeroGrad();
  backward(graph());
  double norm = 0.0;
  for (double g : logits[0].grad()) norm += g * g;
  for (double g : logits[1].grad()) norm += g * g;
  CHECK(norm > 0.0);
  double err = gradCheck({logits[0], logits[1]},
                         [&] { return graph().item(); }, graph);
  CHECK(err < 1e-4);
}

TEST_CASE("hard path provides no gradient by construction") {
  Tokenizer tok(TokenizerConfig{}, 5);
  tok.markTrained();
  Rng rng(3);
  Tensor img = randomTensor({3, 32, 32}, rng, 0.0, 1.0, false);
  TokenPyramid pyr = tok.encode(img);
  // accumulated features are detached: no tape participation
  for (const Tensor& f : pyr.accumulated) {
    CHECK_FALSE(f.requiresGrad());
    CHECK(f.node()->parents.empty());
  }
}

TEST_CASE("mis-tokenization squared error is at least d_min^2 (small V)") {
  Tokenizer tok(stubConfig(1, 4), 13);
  double dmin = tok.codebookMinDistance();
  CHECK(dmin > 0.0);
  const Tensor& W = tok.codebook();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (int c = 0; c < 3; ++c) {
        double d = W.values()[std::size_t(i) * 3 + c] -
                   W.values()[std::size_t(j) * 3 + c];
        s += d * d;
      }
      CHECK(s >= dmin * dmin - 1e-12);
    }
}

TEST_CASE("tokenizer training: determinism and codebook separation") {
  Corpus train = generateCorpus(42, 48);
  Corpus val = generateCorpus(43, 16);
  TokenizerTrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.batchSize = 12;
  Tokenizer a(TokenizerConfig{}, 99);
  auto ra = trainTokenizer(a, train, val, tcfg);
  Tokenizer b(TokenizerConfig{}, 99);
  auto rb = trainTokenizer(b, train, val, tcfg);
  CHECK(ra.finalTrainLoss == rb.finalTrainLoss);  // bit-identical
  CHECK(a.paramHash() == b.paramHash());
  CHECK(a.codebookMinDistance() > 0.0);
  CHECK(std::isfinite(ra.valMse));
}
