#include "aidvar/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "aidvar/rng.hpp"

namespace aidvar {

namespace {

constexpr char kDataMagic[8] = {'A', 'I', 'D', 'V', 'D', 'A', 'T', 'A'};

struct Palette {
  double bg[3];
  double fg[3];
};

Palette randomPalette(Rng& rng) {
  Palette p;
  for (int c = 0; c < 3; ++c) p.bg[c] = rng.uniform(0.15, 0.85);
  // Foreground pushed away from background so coarse scales carry layout.
  for (int c = 0; c < 3; ++c) {
    double delta = rng.uniform(0.3, 0.6) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    p.fg[c] = std::clamp(p.bg[c] + delta, 0.05, 0.95);
  }
  return p;
}

// Signed-distance-style coverage in [0,1] for smooth (anti-aliased) edges.
double edge(double d, double soft) { return std::clamp(0.5 - d / soft, 0.0, 1.0); }

ImageSample renderSample(int label, int H, Rng& rng) {
  ImageSample s;
  s.classLabel = label;
  s.pixels.assign(std::size_t(3) * H * H, 0.0);
  Palette pal = randomPalette(rng);
  double cx = rng.uniform(0.3, 0.7) * H;
  double cy = rng.uniform(0.3, 0.7) * H;
  double r = rng.uniform(0.18, 0.38) * H;
  double angle = rng.uniform(0.0, 6.2831853);
  double period = rng.uniform(4.0, 9.0);
  double texAmp = rng.uniform(0.03, 0.08);
  double texFx = rng.uniform(0.6, 1.4);
  double texFy = rng.uniform(0.6, 1.4);
  double texPhase = rng.uniform(0.0, 6.2831853);
  const double soft = 1.2;  // AA softness in pixels

  auto coverage = [&](double x, double y) -> double {
    double dx = x - cx, dy = y - cy;
    double rx = dx * std::cos(angle) + dy * std::sin(angle);
    double ry = -dx * std::sin(angle) + dy * std::cos(angle);
    switch (label) {
      case 0:  // circle
        return edge(std::sqrt(dx * dx + dy * dy) - r, soft);
      case 1:  // square
        return edge(std::max(std::fabs(rx), std::fabs(ry)) - r, soft);
      case 2: {  // triangle (equilateral-ish, half-plane intersection)
        double d1 = ry - r * 0.8;
        double d2 = -0.866 * rx - 0.5 * ry - r * 0.8;
        double d3 = 0.866 * rx - 0.5 * ry - r * 0.8;
        return edge(std::max({d1, d2, d3}), soft);
      }
      case 3:  // stripes
        return 0.5 + 0.5 * std::sin(6.2831853 * rx / period);
      case 4:  // checker
        return ((int(std::floor(rx / period * 2.0)) +
                 int(std::floor(ry / period * 2.0))) & 1)
                   ? 1.0
                   : 0.0;
      case 5: {  // ring
        double d = std::fabs(std::sqrt(dx * dx + dy * dy) - r) - r * 0.28;
        return edge(d, soft);
      }
      case 6: {  // cross
        double arm = r * 0.35;
        double dxa = std::max(std::fabs(rx) - arm, std::fabs(ry) - r);
        double dya = std::max(std::fabs(ry) - arm, std::fabs(rx) - r);
        return edge(std::min(dxa, dya), soft);
      }
      default: {  // gradient
        double t = (rx / (2.0 * r)) + 0.5;
        return std::clamp(t, 0.0, 1.0);
      }
    }
  };

  for (int y = 0; y < H; ++y)
    for (int x = 0; x < H; ++x) {
      // 2x2 supersampling.
      double cov = 0.0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx)
          cov += coverage(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy);
      cov *= 0.25;
      // Fine texture so the last pyramid scale has work to do.
      double tex = texAmp * std::sin(texFx * 2.9 * x + texPhase) *
                   std::cos(texFy * 3.1 * y);
      for (int c = 0; c < 3; ++c) {
        double v = pal.bg[c] * (1.0 - cov) + pal.fg[c] * cov + tex;
        s.pixels[(std::size_t(c) * H + y) * H + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  return s;
}

}  // namespace

Corpus generateCorpus(std::uint64_t seed, int count,
                      const std::vector<int>& classMix, int imageSize) {
  if (count <= 0) throw ContractError("generateCorpus: count must be > 0");
  Corpus c;
  c.seed = seed;
  c.versionTag = kGeneratorVersionTag;
  c.imageSize = imageSize;
  c.samples.reserve(std::size_t(count));
  for (int i = 0; i < count; ++i) {
    int label;
    if (!classMix.empty())
      label = classMix[std::size_t(i) % classMix.size()];
    else
      label = i % kNumClasses;  // round-robin keeps counts within 1
    Rng rng = Rng::substream(seed, std::uint64_t(i));
    c.samples.push_back(renderSample(label, imageSize, rng));
  }
  return c;
}

void saveCorpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("corpus: cannot open for write: " + path);
  out.write(kDataMagic, 8);
  auto putU32 = [&](std::uint32_t v) { out.write((const char*)&v, 4); };
  auto putU64 = [&](std::uint64_t v) { out.write((const char*)&v, 8); };
  putU32(kCorpusVersion);
  putU32(std::uint32_t(c.versionTag.size()));
  out.write(c.versionTag.data(), std::streamsize(c.versionTag.size()));
  putU32(std::uint32_t(c.split.size()));
  out.write(c.split.data(), std::streamsize(c.split.size()));
  putU64(c.seed);
  putU32(std::uint32_t(c.imageSize));
  putU32(std::uint32_t(c.channels));
  putU32(std::uint32_t(c.samples.size()));
  for (const ImageSample& s : c.samples) {
    unsigned char lb = (unsigned char)s.classLabel;
    out.write((const char*)&lb, 1);
    out.write((const char*)s.pixels.data(),
              std::streamsize(s.pixels.size() * sizeof(double)));
  }
  if (!out) throw FormatError("corpus: write failed: " + path);
  std::ofstream man(path + ".manifest.txt", std::ios::trunc);
  man << "format = aidvar-corpus\n"
      << "version = " << kCorpusVersion << "\n"
      << "generator = " << c.versionTag << "\n"
      << "split = " << c.split << "\n"
      << "seed = " << c.seed << "\n"
      << "image_size = " << c.imageSize << "\n"
      << "channels = " << c.channels << "\n"
      << "count = " << c.samples.size() << "\n";
}

Corpus loadCorpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("corpus: cannot open " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kDataMagic, 8) != 0)
    throw CorruptionError("corpus: bad magic bytes");
  auto getU32 = [&]() {
    std::uint32_t v;
    if (!in.read((char*)&v, 4)) throw CorruptionError("corpus: truncated");
    return v;
  };
  auto getU64 = [&]() {
    std::uint64_t v;
    if (!in.read((char*)&v, 8)) throw CorruptionError("corpus: truncated");
    return v;
  };
  std::uint32_t ver = getU32();
  if (ver != kCorpusVersion)
    throw VersionError("corpus: unsupported version " + std::to_string(ver));
  Corpus c;
  std::uint32_t tagLen = getU32();
  c.versionTag.resize(tagLen);
  if (!in.read(c.versionTag.data(), tagLen))
    throw CorruptionError("corpus: truncated");
  std::uint32_t splitLen = getU32();
  c.split.resize(splitLen);
  if (splitLen && !in.read(c.split.data(), splitLen))
    throw CorruptionError("corpus: truncated");
  c.seed = getU64();
  c.imageSize = int(getU32());
  c.channels = int(getU32());
  std::uint32_t count = getU32();
  const std::size_t n = std::size_t(c.channels) * c.imageSize * c.imageSize;
  c.samples.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    unsigned char lb;
    if (!in.read((char*)&lb, 1)) throw CorruptionError("corpus: truncated");
    c.samples[i].classLabel = lb;
    c.samples[i].pixels.resize(n);
    if (!in.read((char*)c.samples[i].pixels.data(),
                 std::streamsize(n * sizeof(double))))
      throw CorruptionError("corpus: truncated pixel block");
  }
  return c;
}

}  // namespace aidvar
