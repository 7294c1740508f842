#include "aidvar/serialize.hpp"

#include <cstring>
#include <fstream>

#include "aidvar/rng.hpp"

namespace aidvar {

namespace {

constexpr char kCkptMagic[8] = {'A', 'I', 'D', 'V', 'C', 'K', 'P', 'T'};
constexpr char kPyrMagic[8] = {'A', 'I', 'D', 'V', 'P', 'Y', 'R', 'M'};

// Append-to-buffer writers; the whole payload is hashed before hitting disk.
void putBytes(std::vector<char>& buf, const void* p, std::size_t n) {
  const char* c = static_cast<const char*>(p);
  buf.insert(buf.end(), c, c + n);
}
void putU32(std::vector<char>& buf, std::uint32_t v) { putBytes(buf, &v, 4); }
void putU64(std::vector<char>& buf, std::uint64_t v) { putBytes(buf, &v, 8); }
void putI32(std::vector<char>& buf, std::int32_t v) { putBytes(buf, &v, 4); }
void putString(std::vector<char>& buf, const std::string& s) {
  putU32(buf, std::uint32_t(s.size()));
  putBytes(buf, s.data(), s.size());
}

struct Reader {
  const std::vector<char>& buf;
  std::size_t pos = 0;
  std::string what;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw CorruptionError(what + ": truncated at byte " +
                            std::to_string(pos));
  }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::int32_t i32() {
    std::int32_t v;
    bytes(&v, 4);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    if (n > (1u << 20)) throw CorruptionError(what + ": implausible string");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

std::vector<char> readFile(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(std::string(what) + ": cannot open " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return buf;
}

void writeFile(const std::string& path, const std::vector<char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open for write: " + path);
  out.write(buf.data(), std::streamsize(buf.size()));
  if (!out) throw FormatError("write failed: " + path);
}

}  // namespace

void saveCheckpoint(const std::string& path, const std::string& componentTag,
                    const ParamStore& params) {
  std::vector<char> body;
  putU32(body, kCheckpointVersion);
  putString(body, componentTag);
  putU32(body, std::uint32_t(params.items().size()));
  for (const auto& [name, t] : params.items()) {
    putString(body, name);
    putU32(body, std::uint32_t(t.shape().size()));
    for (int d : t.shape()) putU32(body, std::uint32_t(d));
    putBytes(body, t.values().data(), t.numel() * sizeof(double));
  }
  std::uint64_t hash = fnv1a64(body.data(), body.size());
  std::vector<char> buf;
  putBytes(buf, kCkptMagic, 8);
  buf.insert(buf.end(), body.begin(), body.end());
  putU64(buf, hash);
  writeFile(path, buf);
}

namespace {
Reader openCheckpoint(const std::vector<char>& buf) {
  Reader r{buf, 0, "checkpoint"};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw CorruptionError("checkpoint: bad magic bytes");
  if (buf.size() < 16) throw CorruptionError("checkpoint: truncated");
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  std::uint64_t actual = fnv1a64(buf.data() + 8, buf.size() - 16);
  if (stored != actual)
    throw CorruptionError("checkpoint: content hash mismatch");
  std::uint32_t ver = r.u32();
  if (ver != kCheckpointVersion)
    throw VersionError("checkpoint: unsupported version " +
                       std::to_string(ver));
  return r;
}
}  // namespace

std::string checkpointTag(const std::string& path) {
  auto buf = readFile(path, "checkpoint");
  Reader r = openCheckpoint(buf);
  return r.str();
}

void loadCheckpoint(const std::string& path, const std::string& expectedTag,
                    ParamStore& params) {
  auto buf = readFile(path, "checkpoint");
  Reader r = openCheckpoint(buf);
  std::string tag = r.str();
  if (!expectedTag.empty() && tag != expectedTag)
    throw TagMismatchError("checkpoint: component tag '" + tag +
                           "' where '" + expectedTag + "' expected");
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    std::uint32_t ndim = r.u32();
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = int(r.u32());
      numel *= std::size_t(shape[d]);
    }
    Tensor& t = params.get(name);
    if (t.shape() != shape)
      throw FormatError("checkpoint: shape mismatch for " + name +
                        ": file " + shapeStr(shape) + " vs model " +
                        shapeStr(t.shape()));
    r.bytes(t.values().data(), numel * sizeof(double));
  }
}

void savePyramids(const std::string& path, const PyramidFile& f) {
  std::vector<char> body;
  putU32(body, kPyramidVersion);
  putU64(body, f.tokenizerHash);
  putU32(body, std::uint32_t(f.resolutions.size()));
  for (int p : f.resolutions) putU32(body, std::uint32_t(p));
  putU32(body, std::uint32_t(f.imageSize));
  putU32(body, std::uint32_t(f.channels));
  putU32(body, f.hasImages ? 1u : 0u);
  putU32(body, std::uint32_t(f.records.size()));
  for (const PyramidRecord& rec : f.records) {
    putI32(body, rec.conditionLabel);
    putU64(body, rec.seed);
    for (std::size_t k = 0; k < f.resolutions.size(); ++k) {
      const auto& toks = rec.tokens[k];
      for (int t : toks) {
        std::uint16_t v = std::uint16_t(t);
        putBytes(body, &v, 2);
      }
    }
    if (f.hasImages)
      for (const auto& img : rec.images)
        putBytes(body, img.data(), img.size() * sizeof(double));
  }
  std::uint64_t hash = fnv1a64(body.data(), body.size());
  std::vector<char> buf;
  putBytes(buf, kPyrMagic, 8);
  buf.insert(buf.end(), body.begin(), body.end());
  putU64(buf, hash);
  writeFile(path, buf);
}

PyramidFile loadPyramids(const std::string& path) {
  auto buf = readFile(path, "pyramids");
  Reader r{buf, 0, "pyramids"};
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kPyrMagic, 8) != 0)
    throw CorruptionError("pyramids: bad magic bytes");
  if (buf.size() < 16) throw CorruptionError("pyramids: truncated");
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (stored != fnv1a64(buf.data() + 8, buf.size() - 16))
    throw CorruptionError("pyramids: content hash mismatch");
  std::uint32_t ver = r.u32();
  if (ver != kPyramidVersion)
    throw VersionError("pyramids: unsupported version " + std::to_string(ver));
  PyramidFile f;
  f.tokenizerHash = r.u64();
  std::uint32_t K = r.u32();
  if (K == 0 || K > 64) throw CorruptionError("pyramids: bad scale count");
  f.resolutions.resize(K);
  for (std::uint32_t k = 0; k < K; ++k) f.resolutions[k] = int(r.u32());
  f.imageSize = int(r.u32());
  f.channels = int(r.u32());
  f.hasImages = r.u32() != 0;
  std::uint32_t count = r.u32();
  f.records.resize(count);
  const std::size_t imgLen =
      std::size_t(f.channels) * f.imageSize * f.imageSize;
  for (std::uint32_t i = 0; i < count; ++i) {
    PyramidRecord& rec = f.records[i];
    rec.conditionLabel = r.i32();
    rec.seed = r.u64();
    rec.tokens.resize(K);
    for (std::uint32_t k = 0; k < K; ++k) {
      int n = f.resolutions[k] * f.resolutions[k];
      rec.tokens[k].resize(std::size_t(n));
      for (int j = 0; j < n; ++j) {
        std::uint16_t v;
        r.bytes(&v, 2);
        rec.tokens[k][std::size_t(j)] = int(v);
      }
    }
    if (f.hasImages) {
      rec.images.resize(K);
      for (std::uint32_t k = 0; k < K; ++k) {
        rec.images[k].resize(imgLen);
        r.bytes(rec.images[k].data(), imgLen * sizeof(double));
      }
    }
  }
  return f;
}

}  // namespace aidvar
