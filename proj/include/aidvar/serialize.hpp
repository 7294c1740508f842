#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aidvar/nn.hpp"
#include "aidvar/tensor.hpp"

namespace aidvar {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Bad magic, truncation, or a payload that fails its content hash.
struct CorruptionError : FormatError {
  using FormatError::FormatError;
};
// File version newer/older than this reader supports.
struct VersionError : FormatError {
  using FormatError::FormatError;
};
// Component tag does not match what the loading module expects.
struct TagMismatchError : FormatError {
  using FormatError::FormatError;
};

// ---- checkpoint container ----
// Layout (little-endian): magic "AIDVCKPT", u32 version, tag string,
// named tensor table (name, dims, raw doubles), u64 FNV-1a content hash
// over everything between the version field and the hash.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void saveCheckpoint(const std::string& path, const std::string& componentTag,
                    const ParamStore& params);
// expectedTag empty = accept any tag. Loads by name into `params`, whose
// tensors must already exist with matching shapes.
void loadCheckpoint(const std::string& path, const std::string& expectedTag,
                    ParamStore& params);
std::string checkpointTag(const std::string& path);

// ---- pyramid container ----
// On-disk form of generated token pyramids plus (optionally) their decoded
// per-scale images, tagged with the producing tokenizer's hash.
struct PyramidRecord {
  int conditionLabel = -1;
  std::uint64_t seed = 0;
  std::vector<std::vector<int>> tokens;       // per scale, p_k*p_k entries
  std::vector<std::vector<double>> images;    // per scale, C*H*W; may be empty
};

struct PyramidFile {
  std::uint64_t tokenizerHash = 0;
  std::vector<int> resolutions;
  int imageSize = 0;
  int channels = 0;
  bool hasImages = false;
  std::vector<PyramidRecord> records;
};

inline constexpr std::uint32_t kPyramidVersion = 1;

void savePyramids(const std::string& path, const PyramidFile& f);
PyramidFile loadPyramids(const std::string& path);

}  // namespace aidvar
