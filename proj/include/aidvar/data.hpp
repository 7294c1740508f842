#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aidvar/serialize.hpp"

namespace aidvar {

inline constexpr int kNumClasses = 8;
inline constexpr const char* kClassNames[kNumClasses] = {
    "circle", "square", "triangle", "stripes",
    "checker", "ring",   "cross",   "gradient"};

struct ImageSample {
  std::vector<double> pixels;  // [C,H,W] row-major, values in [0,1]
  int classLabel = 0;
};

struct Corpus {
  std::string split;
  std::vector<ImageSample> samples;
  std::uint64_t seed = 0;
  std::string versionTag;
  int imageSize = 32;
  int channels = 3;
};

// Renders `count` parameterized shape images. Per-sample RNG streams are
// derived from (seed, index) so any evaluation order yields identical bytes.
// classMix: empty = uniform round-robin (per-class counts differ by <= 1).
Corpus generateCorpus(std::uint64_t seed, int count,
                      const std::vector<int>& classMix = {},
                      int imageSize = 32);

inline constexpr std::uint32_t kCorpusVersion = 1;
inline constexpr const char* kGeneratorVersionTag = "shapes-v1";

void saveCorpus(const Corpus& c, const std::string& path);
Corpus loadCorpus(const std::string& path);

}  // namespace aidvar
