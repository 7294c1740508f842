#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "aidvar/rng.hpp"
#include "aidvar/serialize.hpp"

using namespace aidvar;

namespace {
std::string tmpPath(const char* name) {
  return std::string("/tmp/aidvar_fmt_") + name;
}

ParamStore randomStore(std::uint64_t seed) {
  ParamStore ps;
  Rng rng(seed);
  ps.create("a.w", {4, 3}, 1.0, rng);
  ps.create("b.w", {2, 2, 3, 3}, 1.0, rng);
  ps.createZeros("b.b", {2});
  return ps;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}
void spit(const std::string& path, const std::vector<char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(buf.data(), std::streamsize(buf.size()));
}
}  // namespace

TEST_CASE("checkpoint round trip is value-exact") {
  ParamStore ps = randomStore(1);
  std::string path = tmpPath("ckpt.bin");
  saveCheckpoint(path, "injector", ps);
  CHECK(checkpointTag(path) == "injector");

  ParamStore fresh = randomStore(2);
  CHECK(fresh.get("a.w").values() != ps.get("a.w").values());
  loadCheckpoint(path, "injector", fresh);
  CHECK(fresh.get("a.w").values() == ps.get("a.w").values());
  CHECK(fresh.get("b.w").values() == ps.get("b.w").values());
  CHECK(fresh.contentHash() == ps.contentHash());
  std::remove(path.c_str());
}

TEST_CASE("flipping one payload byte is detected") {
  ParamStore ps = randomStore(3);
  std::string path = tmpPath("ckpt_flip.bin");
  saveCheckpoint(path, "backbone", ps);
  auto buf = slurp(path);
  buf[buf.size() / 2] ^= 0x40;
  spit(path, buf);
  ParamStore fresh = randomStore(3);
  CHECK_THROWS_AS(loadCheckpoint(path, "backbone", fresh), CorruptionError);
  std::remove(path.c_str());
}

TEST_CASE("component tag mismatch is rejected") {
  ParamStore ps = randomStore(4);
  std::string path = tmpPath("ckpt_tag.bin");
  saveCheckpoint(path, "injector", ps);
  ParamStore fresh = randomStore(4);
  CHECK_THROWS_AS(loadCheckpoint(path, "backbone", fresh), TagMismatchError);
  std::remove(path.c_str());
}

TEST_CASE("newer version is refused, never reinterpreted") {
  ParamStore ps = randomStore(5);
  std::string path = tmpPath("ckpt_ver.bin");
  saveCheckpoint(path, "tokenizer", ps);
  auto buf = slurp(path);
  // bump version field (bytes 8..11) and re-hash so only the version differs
  std::uint32_t v = kCheckpointVersion + 1;
  std::memcpy(buf.data() + 8, &v, 4);
  std::uint64_t h = fnv1a64(buf.data() + 8, buf.size() - 16);
  std::memcpy(buf.data() + buf.size() - 8, &h, 8);
  spit(path, buf);
  ParamStore fresh = randomStore(5);
  CHECK_THROWS_AS(loadCheckpoint(path, "tokenizer", fresh), VersionError);
  std::remove(path.c_str());
}

TEST_CASE("pyramid container round trip and corruption checks") {
  PyramidFile f;
  f.tokenizerHash = 0xdeadbeefcafe1234ULL;
  f.resolutions = {1, 2, 4};
  f.imageSize = 8;
  f.channels = 3;
  f.hasImages = true;
  Rng rng(9);
  for (int s = 0; s < 3; ++s) {
    PyramidRecord rec;
    rec.conditionLabel = s % 2;
    rec.seed = 100 + std::uint64_t(s);
    for (int p : f.resolutions) {
      std::vector<int> toks(std::size_t(p) * p);
      for (int& t : toks) t = int(rng.uniformInt(64));
      rec.tokens.push_back(std::move(toks));
      std::vector<double> img(std::size_t(3) * 8 * 8);
      for (double& x : img) x = rng.uniform();
      rec.images.push_back(std::move(img));
    }
    f.records.push_back(std::move(rec));
  }
  std::string path = tmpPath("pyr.bin");
  savePyramids(path, f);
  PyramidFile r = loadPyramids(path);
  CHECK(r.tokenizerHash == f.tokenizerHash);
  CHECK(r.resolutions == f.resolutions);
  REQUIRE(r.records.size() == f.records.size());
  for (std::size_t i = 0; i < f.records.size(); ++i) {
    CHECK(r.records[i].tokens == f.records[i].tokens);
    CHECK(r.records[i].images == f.records[i].images);
    CHECK(r.records[i].seed == f.records[i].seed);
  }

  auto buf = slurp(path);
  buf[20] ^= 0x01;
  spit(path, buf);
  CHECK_THROWS_AS(loadPyramids(path), CorruptionError);
  std::remove(path.c_str());
}
