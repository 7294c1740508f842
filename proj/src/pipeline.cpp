#include "aidvar/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>

#include "aidvar/serialize.hpp"

namespace fs = std::filesystem;

namespace aidvar {
namespace {

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

void writeTextFile(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StateError("pipeline: cannot write " + path.string());
  out << text;
}

// Writes through a temp file; an existing target must be byte-identical
// (artifacts are immutable once produced).
void commitArtifact(const fs::path& target,
                    const std::function<void(const std::string&)>& writer) {
  fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  writer(tmp.string());
  if (fs::exists(target)) {
    if (fileHash(target.string()) != fileHash(tmp.string())) {
      fs::remove(tmp);
      throw StateError("pipeline: artifact already exists with different "
                       "content: " + target.string());
    }
    fs::remove(tmp);
    return;
  }
  fs::rename(tmp, target);
}

struct RunContext {
  RunConfig cfg;
  std::string command;
  fs::path runDir;
  std::vector<std::pair<std::string, std::uint64_t>> inputs;
  std::vector<std::pair<std::string, std::uint64_t>> outputs;

  fs::path artifactsDir() const { return fs::path(cfg.runsDir) / "artifacts"; }

  void noteInput(const fs::path& p) {
    inputs.emplace_back(p.string(), fileHash(p.string()));
  }
  void noteOutput(const fs::path& p) {
    outputs.emplace_back(p.string(), fileHash(p.string()));
  }
  // write into the run dir and fingerprint it
  void emit(const std::string& name, const std::string& text) {
    writeTextFile(runDir / name, text);
    noteOutput(runDir / name);
  }
};

// ---- deterministic artifact naming ----------------------------------------

fs::path corpusPath(const RunConfig& cfg, const std::string& split) {
  return fs::path(cfg.dataDir) /
         (split + "-" + hex(configHash(cfg, {"data"})) + ".bin");
}

fs::path tokenizerPath(const RunConfig& cfg) {
  return fs::path(cfg.runsDir) / "artifacts" /
         ("tokenizer-" + hex(configHash(cfg, {"data", "tokenizer"})) + ".ckpt");
}

fs::path backbonePath(const RunConfig& cfg) {
  return fs::path(cfg.runsDir) / "artifacts" /
         ("backbone-" +
          hex(configHash(cfg, {"data", "tokenizer", "backbone"})) + ".ckpt");
}

fs::path extractorPath(const RunConfig& cfg) {
  return fs::path(cfg.runsDir) / "artifacts" /
         ("extractor-" + hex(configHash(cfg, {"data", "extractor"})) + ".ckpt");
}

std::uint64_t aidHash(const RunConfig& cfg) {
  return configHash(cfg, {"data", "tokenizer", "backbone", "extractor",
                          "injector", "trainer", "sampler"});
}

fs::path injectorPath(const RunConfig& cfg) {
  return fs::path(cfg.runsDir) / "artifacts" /
         ("injector-" + hex(aidHash(cfg)) + ".ckpt");
}

fs::path discriminatorPath(const RunConfig& cfg) {
  return fs::path(cfg.runsDir) / "artifacts" /
         ("discriminator-" + hex(aidHash(cfg)) + ".ckpt");
}

fs::path pyramidsPath(const RunConfig& cfg, bool guided) {
  std::uint64_t h = configHash(
      cfg, {"data", "tokenizer", "backbone", "extractor", "injector",
            "trainer", "sampler", "generate"});
  return fs::path(cfg.runsDir) / "artifacts" /
         (std::string("pyramids-") + (guided ? "guided-" : "baseline-") +
          hex(h) + ".bin");
}

// ---- prerequisite loading --------------------------------------------------

void require(const fs::path& p, const std::string& what,
             const std::string& producer) {
  if (!fs::exists(p))
    throw DependencyError("missing " + what + ": " + p.string() +
                          " (produce it with `" + producer + "`)");
}

Corpus loadSplit(RunContext& rc, const std::string& split) {
  fs::path p = corpusPath(rc.cfg, split);
  require(p, split + " corpus", "data gen");
  rc.noteInput(p);
  return loadCorpus(p.string());
}

Tokenizer loadTokenizer(RunContext& rc) {
  fs::path p = tokenizerPath(rc.cfg);
  require(p, "tokenizer checkpoint", "tokenizer train");
  rc.noteInput(p);
  Tokenizer tok(rc.cfg.tokenizer, rc.cfg.tokenizerInitSeed);
  loadCheckpoint(p.string(), "tokenizer", tok.params());
  tok.markTrained();
  return tok;
}

Backbone loadBackbone(RunContext& rc) {
  fs::path p = backbonePath(rc.cfg);
  require(p, "backbone checkpoint", "var pretrain");
  rc.noteInput(p);
  Backbone bb(rc.cfg.backbone, rc.cfg.tokenizer, rc.cfg.backboneInitSeed);
  loadCheckpoint(p.string(), "backbone", bb.params());
  bb.freeze();
  return bb;
}

// Trains and caches the frozen feature extractor on first use.
Extractor loadOrTrainExtractor(RunContext& rc) {
  Extractor ex(ExtractorConfig{}, rc.cfg.extractorInitSeed);
  fs::path p = extractorPath(rc.cfg);
  if (fs::exists(p)) {
    rc.noteInput(p);
    loadCheckpoint(p.string(), "extractor", ex.params());
    ex.freeze();
    return ex;
  }
  Corpus train = loadSplit(rc, "train");
  Corpus val = loadSplit(rc, "val");
  pretrainExtractor(ex, train, val, rc.cfg.extractorTrain);
  commitArtifact(p, [&](const std::string& tmp) {
    saveCheckpoint(tmp, "extractor", ex.params());
  });
  rc.noteOutput(p);
  return ex;
}

Injector makeInjector(const RunConfig& cfg) {
  InjectorConfig ic = cfg.injector;
  ic.outDim = cfg.backbone.dModel;  // guidance feeds the backbone stack
  return Injector(ic, cfg.tokenizer, cfg.injectorInitSeed);
}

std::vector<Tensor> corpusImages(const Corpus& c, int limit = 0) {
  std::vector<Tensor> out;
  std::size_t n = c.samples.size();
  if (limit > 0) n = std::min(n, std::size_t(limit));
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(imageTensor(c.samples[i], c.imageSize, c.channels));
  return out;
}

// ---- pyramid container conversion -------------------------------------------

PyramidFile toPyramidFile(const Tokenizer& tok,
                          const std::vector<GenerationResult>& gens,
                          const std::vector<std::uint64_t>& seeds) {
  PyramidFile f;
  f.tokenizerHash = tok.paramHash();
  f.resolutions = tok.config().resolutions;
  f.imageSize = tok.config().imageSize;
  f.channels = tok.config().channels;
  for (std::size_t i = 0; i < gens.size(); ++i) {
    PyramidRecord r;
    r.conditionLabel = gens[i].classLabel;
    r.seed = seeds[i];
    r.tokens = gens[i].pyramid.tokens;
    f.records.push_back(std::move(r));
  }
  return f;
}

std::vector<TokenPyramid> toTokenPyramids(const PyramidFile& f) {
  std::vector<TokenPyramid> out;
  for (const PyramidRecord& r : f.records) {
    TokenPyramid p;
    p.resolutions = f.resolutions;
    p.tokens = r.tokens;
    out.push_back(std::move(p));
  }
  return out;
}

// ---- generation helpers ------------------------------------------------------

std::vector<GenerationResult> generateBatch(const RunConfig& cfg,
                                            const Tokenizer& tok,
                                            const Backbone& bb,
                                            const Injector* inj, double w,
                                            int count,
                                            std::vector<std::uint64_t>* seeds) {
  GuidanceFn fn;
  const GuidanceFn* fnPtr = nullptr;
  if (inj != nullptr) {
    fn = inj->guidanceFn();
    fnPtr = &fn;
  }
  std::vector<GenerationResult> out;
  for (int i = 0; i < count; ++i) {
    SamplerConfig s = cfg.sampler;
    s.seed = Rng::substream(cfg.sampler.seed, std::uint64_t(i) + 1).nextU64();
    if (seeds != nullptr) seeds->push_back(s.seed);
    int label = cfg.generateLabel >= 0 ? cfg.generateLabel : i % kNumClasses;
    out.push_back(generate(tok, bb, label, s, fnPtr, w));
  }
  return out;
}

double proxyFdAgainstCorpus(const Tokenizer& tok, const Extractor& ex,
                            const Corpus& real,
                            const std::vector<GenerationResult>& gens) {
  std::vector<Tensor> realImgs = corpusImages(real);
  std::vector<Tensor> genImgs;
  for (const GenerationResult& g : gens)
    genImgs.push_back(
        tok.decodeHard(g.pyramid, int(g.pyramid.tokens.size())));
  return proxyFd(ex, realImgs, genImgs);
}

// ---- subcommands -------------------------------------------------------------

void cmdDataGen(RunContext& rc) {
  const RunConfig& cfg = rc.cfg;
  Corpus train = generateCorpus(cfg.dataTrainSeed, cfg.dataTrainCount);
  train.split = "train";
  Corpus val = generateCorpus(cfg.dataValSeed, cfg.dataValCount);
  val.split = "val";
  fs::path tp = corpusPath(cfg, "train"), vp = corpusPath(cfg, "val");
  commitArtifact(tp, [&](const std::string& p) { saveCorpus(train, p); });
  commitArtifact(vp, [&](const std::string& p) { saveCorpus(val, p); });
  rc.noteOutput(tp);
  rc.noteOutput(vp);
  rc.emit("data.csv", "split,count,seed\ntrain," +
                          std::to_string(cfg.dataTrainCount) + ',' +
                          std::to_string(cfg.dataTrainSeed) + "\nval," +
                          std::to_string(cfg.dataValCount) + ',' +
                          std::to_string(cfg.dataValSeed) + '\n');
}

void cmdTokenizerTrain(RunContext& rc) {
  Corpus train = loadSplit(rc, "train");
  Corpus val = loadSplit(rc, "val");
  Tokenizer tok(rc.cfg.tokenizer, rc.cfg.tokenizerInitSeed);
  TokenizerTrainReport rep =
      trainTokenizer(tok, train, val, rc.cfg.tokenizerTrain);
  fs::path p = tokenizerPath(rc.cfg);
  commitArtifact(p, [&](const std::string& t) {
    saveCheckpoint(t, "tokenizer", tok.params());
  });
  rc.noteOutput(p);
  std::ostringstream os;
  os << "final_train_loss,val_mse,dead_codes,all_codes_used\n"
     << rep.finalTrainLoss << ',' << rep.valMse << ','
     << rep.deadCodesAfterReseed << ',' << (rep.allCodesUsedOnVal ? 1 : 0)
     << '\n';
  rc.emit("tokenizer_report.csv", os.str());
}

void cmdVarPretrain(RunContext& rc) {
  Corpus train = loadSplit(rc, "train");
  Corpus val = loadSplit(rc, "val");
  Tokenizer tok = loadTokenizer(rc);
  Backbone bb(rc.cfg.backbone, rc.cfg.tokenizer, rc.cfg.backboneInitSeed);
  BackboneTrainReport rep =
      pretrainBackbone(bb, tok, train, val, rc.cfg.backboneTrain);
  fs::path p = backbonePath(rc.cfg);
  commitArtifact(p, [&](const std::string& t) {
    saveCheckpoint(t, "backbone", bb.params());
  });
  rc.noteOutput(p);
  std::ostringstream os;
  os << "initial_loss,final_train_loss,val_token_accuracy\n"
     << rep.initialLoss << ',' << rep.finalTrainLoss << ','
     << rep.valTokenAccuracy << '\n';
  rc.emit("backbone_report.csv", os.str());
}

void cmdAidTrain(RunContext& rc) {
  RunConfig& cfg = rc.cfg;
  Corpus train = loadSplit(rc, "train");
  Tokenizer tok = loadTokenizer(rc);
  Backbone bb = loadBackbone(rc);
  Extractor ex = loadOrTrainExtractor(rc);
  Injector inj = makeInjector(cfg);
  DiscriminatorConfig dc;
  Discriminator disc =
      cfg.trainer.latentSpace
          ? Discriminator(cfg.tokenizer.latentDim, dc, cfg.discInitSeed)
          : Discriminator(&ex, dc, cfg.discInitSeed);
  TrainerConfig tc = cfg.trainer;
  tc.sampler = cfg.sampler;
  AidTrainer trainer(tok, bb, inj, disc, train, tc);
  for (int s = 0; s < cfg.trainerSteps; ++s) trainer.refreshStep();
  trainer.verifyFrozenParts();

  fs::path ip = injectorPath(cfg), dp = discriminatorPath(cfg);
  commitArtifact(ip, [&](const std::string& t) {
    saveCheckpoint(t, "injector", inj.params());
  });
  commitArtifact(dp, [&](const std::string& t) {
    saveCheckpoint(t, "discriminator", disc.params());
  });
  rc.noteOutput(ip);
  rc.noteOutput(dp);
  std::ostringstream os;
  writeTelemetryCsv(os, trainer.telemetry());
  rc.emit("telemetry.csv", os.str());
  rc.emit("collapse.txt", collapseDetected(trainer.telemetry())
                              ? "collapse detected\n"
                              : "no collapse\n");
}

void cmdVarGenerate(RunContext& rc) {
  RunConfig& cfg = rc.cfg;
  Tokenizer tok = loadTokenizer(rc);
  Backbone bb = loadBackbone(rc);
  bool wantInjector;
  if (cfg.generateUseInjector == "auto")
    wantInjector = fs::exists(injectorPath(cfg));
  else if (cfg.generateUseInjector == "true")
    wantInjector = true;
  else if (cfg.generateUseInjector == "false")
    wantInjector = false;
  else
    throw ConfigError("config: generate.use_injector must be auto|true|false");

  std::optional<Injector> inj;
  double w = 0.0;
  if (wantInjector) {
    fs::path ip = injectorPath(cfg);
    require(ip, "injector checkpoint", "aid train");
    rc.noteInput(ip);
    inj.emplace(makeInjector(cfg));
    loadCheckpoint(ip.string(), "injector", inj->params());
    w = cfg.generateGuidanceWeight;
  }
  std::vector<std::uint64_t> seeds;
  std::vector<GenerationResult> gens = generateBatch(
      cfg, tok, bb, inj ? &*inj : nullptr, w, cfg.generateCount, &seeds);
  PyramidFile f = toPyramidFile(tok, gens, seeds);
  fs::path ap = pyramidsPath(cfg, wantInjector);
  commitArtifact(ap, [&](const std::string& t) { savePyramids(t, f); });
  rc.noteOutput(ap);
  savePyramids((rc.runDir / "samples.bin").string(), f);
  rc.noteOutput(rc.runDir / "samples.bin");
  rc.emit("generate.csv", std::string("mode,count\n") +
                              (wantInjector ? "guided," : "baseline,") +
                              std::to_string(cfg.generateCount) + '\n');
}

void cmdIscsCompute(RunContext& rc) {
  RunConfig& cfg = rc.cfg;
  Tokenizer tok = loadTokenizer(rc);
  Extractor ex = loadOrTrainExtractor(rc);
  fs::path gp;
  if (cfg.metricSource == "guided")
    gp = pyramidsPath(cfg, true);
  else if (cfg.metricSource == "baseline")
    gp = pyramidsPath(cfg, false);
  else if (cfg.metricSource == "auto")
    gp = fs::exists(pyramidsPath(cfg, true)) ? pyramidsPath(cfg, true)
                                             : pyramidsPath(cfg, false);
  else
    throw ConfigError("config: metric.source must be auto|guided|baseline");
  require(gp, "generated pyramids", "var generate");
  rc.noteInput(gp);
  PyramidFile f = loadPyramids(gp.string());
  if (f.tokenizerHash != tok.paramHash())
    throw StateError("iscs: pyramids were produced by a different tokenizer");

  Corpus train = loadSplit(rc, "train");
  std::vector<TokenPyramid> real;
  for (const ImageSample& s : train.samples)
    real.push_back(tok.encode(
        imageTensor(s, cfg.tokenizer.imageSize, cfg.tokenizer.channels)));
  std::vector<TokenPyramid> gen = toTokenPyramids(f);
  IscsReport rep = computeIscs(tok, ex, real, gen, cfg.metric);

  std::vector<Tensor> genImgs;
  for (const TokenPyramid& p : gen)
    genImgs.push_back(tok.decodeHard(p, int(p.tokens.size())));
  double pfd = proxyFd(ex, corpusImages(train), genImgs);

  std::ostringstream os;
  writeIscsCsv(os, rep);
  os << "proxy_fd," << pfd << ",,\n";
  rc.emit("iscs.csv", os.str());
}

void cmdSimRun(RunContext& rc) {
  ErrorTrace tr = rc.cfg.simCorrected ? simulateAid(rc.cfg.sim)
                                      : simulateVar(rc.cfg.sim);
  BoundReport rep = checkBounds(tr, rc.cfg.sim);
  std::ostringstream os;
  writeSimCsv(os, tr, rep);
  rc.emit("sim.csv", os.str());
}

void cmdSimInject(RunContext& rc) {
  RunConfig& cfg = rc.cfg;
  Tokenizer tok = loadTokenizer(rc);
  Backbone bb = loadBackbone(rc);
  NoiseInjectionConfig nc = cfg.inject;
  nc.sampler = cfg.sampler;

  DivergenceResult base = injectNoiseExperiment(tok, bb, nullptr, nc);
  std::ostringstream os;
  writeDivergenceCsv(os, base);
  rc.emit("divergence_baseline.csv", os.str());

  bool haveInjector = fs::exists(injectorPath(cfg));
  std::ostringstream sum;
  sum << "variant,mean_terminal,frac_monotone\nbaseline," << base.meanTerminal
      << ',' << base.fracMonotoneAfterInjection << '\n';
  if (haveInjector) {
    rc.noteInput(injectorPath(cfg));
    Injector inj = makeInjector(cfg);
    loadCheckpoint(injectorPath(cfg).string(), "injector", inj.params());
    NoiseInjectionConfig gc = nc;
    if (gc.guidanceWeight == 0.0) gc.guidanceWeight = cfg.trainer.wTrain;
    DivergenceResult guided = injectNoiseExperiment(tok, bb, &inj, gc);
    std::ostringstream gs;
    writeDivergenceCsv(gs, guided);
    rc.emit("divergence_guided.csv", gs.str());
    sum << "guided," << guided.meanTerminal << ','
        << guided.fracMonotoneAfterInjection << '\n';
  }
  rc.emit("divergence_summary.csv", sum.str());
}

void cmdAblateSweep(RunContext& rc) {
  RunConfig& cfg = rc.cfg;
  Corpus val = loadSplit(rc, "val");
  Tokenizer tok = loadTokenizer(rc);
  Backbone bb = loadBackbone(rc);
  Extractor ex = loadOrTrainExtractor(rc);
  std::ostringstream os;
  os << "param,value,proxy_fd\n";

  if (cfg.ablateParam == "w") {
    fs::path ip = injectorPath(cfg);
    require(ip, "injector checkpoint", "aid train");
    rc.noteInput(ip);
    Injector inj = makeInjector(cfg);
    loadCheckpoint(ip.string(), "injector", inj.params());
    for (double w : cfg.ablateValues) {
      std::vector<GenerationResult> gens = generateBatch(
          cfg, tok, bb, w == 0.0 ? nullptr : &inj, w, cfg.ablateGenCount,
          nullptr);
      os << "w," << w << ',' << proxyFdAgainstCorpus(tok, ex, val, gens)
         << '\n';
    }
  } else if (cfg.ablateParam == "guidance" ||
             cfg.ablateParam == "disc_input") {
    // 0/1 values select the module variant; each variant trains its own
    // injector with the configured budget, then is scored by proxy FD
    Corpus train = loadSplit(rc, "train");
    for (double v : cfg.ablateValues) {
      if (v != 0.0 && v != 1.0)
        throw ConfigError("config: ablate.values for '" + cfg.ablateParam +
                          "' must be 0 or 1");
      RunConfig vc = cfg;
      if (cfg.ablateParam == "guidance")
        vc.injector.broadcast = v == 1.0;
      else
        vc.trainer.latentSpace = v == 1.0;
      Injector inj = makeInjector(vc);
      DiscriminatorConfig dc;
      Discriminator disc =
          vc.trainer.latentSpace
              ? Discriminator(vc.tokenizer.latentDim, dc, vc.discInitSeed)
              : Discriminator(&ex, dc, vc.discInitSeed);
      TrainerConfig tc = vc.trainer;
      tc.sampler = vc.sampler;
      AidTrainer trainer(tok, bb, inj, disc, train, tc);
      for (int s = 0; s < vc.trainerSteps; ++s) trainer.refreshStep();
      std::vector<GenerationResult> gens =
          generateBatch(vc, tok, bb, &inj, vc.generateGuidanceWeight,
                        vc.ablateGenCount, nullptr);
      os << cfg.ablateParam << ',' << v << ','
         << proxyFdAgainstCorpus(tok, ex, val, gens) << '\n';
    }
  } else {
    throw ConfigError("config: ablate.param must be w|guidance|disc_input");
  }
  rc.emit("sweep.csv", os.str());
}

// tiny polyline plot of telemetry accuracies (Fig.-style training curves)
std::string accuracySvg(const std::vector<std::vector<double>>& series,
                        const std::vector<std::string>& colors) {
  const double W = 640, H = 240, pad = 20;
  std::size_t n = 0;
  for (const auto& s : series) n = std::max(n, s.size());
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
     << "' height='" << H << "'>\n<rect width='100%' height='100%' "
     << "fill='white'/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    os << "<polyline fill='none' stroke='" << colors[s]
       << "' stroke-width='1.5' points='";
    for (std::size_t i = 0; i < series[s].size(); ++i) {
      double x = pad + (W - 2 * pad) * double(i) /
                           double(std::max<std::size_t>(1, n - 1));
      double y = H - pad - (H - 2 * pad) * std::clamp(series[s][i], 0.0, 1.0);
      os << x << ',' << y << ' ';
    }
    os << "'/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void cmdReport(RunContext& rc) {
  if (rc.cfg.reportRun.empty())
    throw ConfigError("config: report.run must point at a run directory");
  fs::path tel = fs::path(rc.cfg.reportRun) / "telemetry.csv";
  require(tel, "telemetry", "aid train");
  rc.noteInput(tel);

  std::ifstream in(tel);
  std::string line;
  std::getline(in, line);  // header
  std::vector<TelemetryRow> rows;
  while (std::getline(in, line)) {
    TelemetryRow r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf", &r.step,
                    &r.dLoss, &r.injLoss, &r.accReal, &r.accFake, &r.lAdv,
                    &r.lRec) == 7)
      rows.push_back(r);
  }
  if (rows.empty()) throw StateError("report: telemetry has no rows");

  int tail = std::min<int>(50, int(rows.size()));
  double dLossTail = 0, accRealTail = 0, accFakeTail = 0;
  for (int i = int(rows.size()) - tail; i < int(rows.size()); ++i) {
    dLossTail += rows[std::size_t(i)].dLoss / tail;
    accRealTail += rows[std::size_t(i)].accReal / tail;
    accFakeTail += rows[std::size_t(i)].accFake / tail;
  }
  std::ostringstream os;
  os << "steps,final_d_loss,tail_d_loss,tail_acc_real,tail_acc_fake,"
     << "collapse\n"
     << rows.size() << ',' << rows.back().dLoss << ',' << dLossTail << ','
     << accRealTail << ',' << accFakeTail << ','
     << (collapseDetected(rows) ? "yes" : "no") << '\n';
  rc.emit("summary.csv", os.str());

  std::vector<double> ar, af;
  for (const TelemetryRow& r : rows) {
    ar.push_back(r.accReal);
    af.push_back(r.accFake);
  }
  rc.emit("accuracy.svg", accuracySvg({ar, af}, {"#1f77b4", "#d62728"}));
}

}  // namespace

std::uint64_t fileHash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("pipeline: cannot read " + path);
  std::uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!in) break;
  }
  return h;
}

std::string runPipeline(RunConfig cfg, const std::string& command) {
  if (const char* rd = std::getenv("RUNS_DIR"); rd != nullptr && *rd)
    cfg.runsDir = rd;
  if (const char* dd = std::getenv("DATA_DIR"); dd != nullptr && *dd)
    cfg.dataDir = dd;

  static const std::vector<std::string> kCommands = {
      "data-gen",      "tokenizer-train", "var-pretrain", "aid-train",
      "var-generate",  "iscs-compute",    "sim-run",      "sim-inject",
      "ablate-sweep",  "report"};
  if (std::find(kCommands.begin(), kCommands.end(), command) ==
      kCommands.end())
    throw ConfigError("pipeline: unknown command '" + command + "'");

  RunContext rc;
  rc.cfg = cfg;
  rc.command = command;

  // append-only run directory: first free sequence number for this
  // command + config combination
  fs::create_directories(fs::path(cfg.runsDir));
  std::string base = command + "-" + hex(configHash(cfg));
  for (int n = 1;; ++n) {
    fs::path cand = fs::path(cfg.runsDir) / (base + "-" + std::to_string(n));
    if (!fs::exists(cand)) {
      fs::create_directories(cand);
      rc.runDir = cand;
      break;
    }
  }
  writeTextFile(rc.runDir / "config.txt", configText(cfg));

  if (command == "data-gen") cmdDataGen(rc);
  else if (command == "tokenizer-train") cmdTokenizerTrain(rc);
  else if (command == "var-pretrain") cmdVarPretrain(rc);
  else if (command == "aid-train") cmdAidTrain(rc);
  else if (command == "var-generate") cmdVarGenerate(rc);
  else if (command == "iscs-compute") cmdIscsCompute(rc);
  else if (command == "sim-run") cmdSimRun(rc);
  else if (command == "sim-inject") cmdSimInject(rc);
  else if (command == "ablate-sweep") cmdAblateSweep(rc);
  else cmdReport(rc);

  std::ostringstream mf;
  mf << "run_id = " << rc.runDir.filename().string() << '\n'
     << "command = " << command << '\n'
     << "config_hash = " << hex(configHash(cfg)) << '\n'
     << "timestamp_utc = "
     << std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count()
     << '\n';
  for (const auto& [p, h] : rc.inputs)
    mf << "input " << p << " = " << hex(h) << '\n';
  for (const auto& [p, h] : rc.outputs)
    mf << "output " << p << " = " << hex(h) << '\n';
  writeTextFile(rc.runDir / "manifest.txt", mf.str());
  return rc.runDir.string();
}

}  // namespace aidvar
