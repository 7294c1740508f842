#include "aidvar/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace aidvar {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long toInt(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" +
                      v + "'");
  }
}

std::uint64_t toU64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key +
                      "' expects a non-negative integer, got '" + v + "'");
  }
}

double toDouble(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(out))
      throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" +
                      v + "'");
  }
}

bool toBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" +
                    v + "'");
}

template <typename T, typename F>
std::vector<T> toList(const std::string& key, const std::string& v, F item) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string piece;
  while (std::getline(ss, piece, ',')) out.push_back(item(key, trim(piece)));
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out += (i ? "," : "") + fmt(v[i]);
  return out;
}

std::string fmt(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key,
                     const std::string& value)>
      set;
  std::function<std::string(const RunConfig&)> get;
};

// ordered: echo layout follows insertion
using FieldMap = std::vector<std::pair<std::string, Field>>;

#define F_INT(field)                                                       \
  Field{[](RunConfig& c, const std::string& k, const std::string& v) {     \
          c.field = int(toInt(k, v));                                      \
        },                                                                 \
        [](const RunConfig& c) { return std::to_string(c.field); }}
#define F_U64(field)                                                       \
  Field{[](RunConfig& c, const std::string& k, const std::string& v) {     \
          c.field = toU64(k, v);                                           \
        },                                                                 \
        [](const RunConfig& c) { return std::to_string(c.field); }}
#define F_DBL(field)                                                       \
  Field{[](RunConfig& c, const std::string& k, const std::string& v) {     \
          c.field = toDouble(k, v);                                        \
        },                                                                 \
        [](const RunConfig& c) { return fmt(c.field); }}
#define F_BOOL(field)                                                      \
  Field{[](RunConfig& c, const std::string& k, const std::string& v) {     \
          c.field = toBool(k, v);                                          \
        },                                                                 \
        [](const RunConfig& c) {                                           \
          return std::string(c.field ? "true" : "false");                  \
        }}
#define F_STR(field)                                                       \
  Field{[](RunConfig& c, const std::string&, const std::string& v) {       \
          c.field = v;                                                     \
        },                                                                 \
        [](const RunConfig& c) { return c.field; }}
#define F_DLIST(field)                                                     \
  Field{[](RunConfig& c, const std::string& k, const std::string& v) {     \
          c.field = toList<double>(k, v, toDouble);                        \
        },                                                                 \
        [](const RunConfig& c) { return fmt(c.field); }}
#define F_ILIST(field)                                                     \
  Field{[](RunConfig& c, const std::string& k, const std::string& v) {     \
          c.field = toList<int>(                                           \
              k, v, [](const std::string& kk, const std::string& vv) {     \
                return int(toInt(kk, vv));                                 \
              });                                                          \
        },                                                                 \
        [](const RunConfig& c) { return fmt(c.field); }}

const FieldMap& fields() {
  static const FieldMap table = {
      {"run.seed", F_U64(seed)},
      {"run.runs_dir", F_STR(runsDir)},
      {"run.data_dir", F_STR(dataDir)},

      {"data.train_count", F_INT(dataTrainCount)},
      {"data.val_count", F_INT(dataValCount)},
      {"data.train_seed", F_U64(dataTrainSeed)},
      {"data.val_seed", F_U64(dataValSeed)},

      {"tokenizer.latent_dim", F_INT(tokenizer.latentDim)},
      {"tokenizer.codebook_size", F_INT(tokenizer.codebookSize)},
      {"tokenizer.resolutions", F_ILIST(tokenizer.resolutions)},
      {"tokenizer.hidden_channels", F_INT(tokenizer.hiddenChannels)},
      {"tokenizer.init_seed", F_U64(tokenizerInitSeed)},
      {"tokenizer.epochs", F_INT(tokenizerTrain.epochs)},
      {"tokenizer.batch_size", F_INT(tokenizerTrain.batchSize)},
      {"tokenizer.lr", F_DBL(tokenizerTrain.lr)},
      {"tokenizer.commitment_beta", F_DBL(tokenizerTrain.commitmentBeta)},
      {"tokenizer.seed", F_U64(tokenizerTrain.seed)},
      {"tokenizer.val_mse_threshold", F_DBL(tokenizerTrain.valMseThreshold)},

      {"backbone.d_model", F_INT(backbone.dModel)},
      {"backbone.blocks", F_INT(backbone.nBlocks)},
      {"backbone.heads", F_INT(backbone.nHeads)},
      {"backbone.ffn_hidden", F_INT(backbone.ffnHidden)},
      {"backbone.init_seed", F_U64(backboneInitSeed)},
      {"backbone.epochs", F_INT(backboneTrain.epochs)},
      {"backbone.batch_size", F_INT(backboneTrain.batchSize)},
      {"backbone.lr", F_DBL(backboneTrain.lr)},
      {"backbone.cond_dropout", F_DBL(backboneTrain.condDropout)},
      {"backbone.seed", F_U64(backboneTrain.seed)},
      {"backbone.val_acc_floor", F_DBL(backboneTrain.valAccFloor)},

      {"extractor.epochs", F_INT(extractorTrain.epochs)},
      {"extractor.batch_size", F_INT(extractorTrain.batchSize)},
      {"extractor.lr", F_DBL(extractorTrain.lr)},
      {"extractor.seed", F_U64(extractorTrain.seed)},
      {"extractor.init_seed", F_U64(extractorInitSeed)},

      {"injector.embed_dim", F_INT(injector.embedDim)},
      {"injector.out_dim", F_INT(injector.outDim)},
      {"injector.blocks", F_INT(injector.nBlocks)},
      {"injector.heads", F_INT(injector.nHeads)},
      {"injector.residual_scale", F_DBL(injector.residualScale)},
      {"injector.broadcast", F_BOOL(injector.broadcast)},
      {"injector.init_seed", F_U64(injectorInitSeed)},

      {"trainer.steps", F_INT(trainerSteps)},
      {"trainer.lambda_rec", F_DBL(trainer.lambdaRec)},
      {"trainer.w_train", F_DBL(trainer.wTrain)},
      {"trainer.lr_disc", F_DBL(trainer.lrDisc)},
      {"trainer.lr_inj", F_DBL(trainer.lrInj)},
      {"trainer.weight_decay", F_DBL(trainer.weightDecay)},
      {"trainer.grad_clip", F_DBL(trainer.gradClip)},
      {"trainer.r1_weight", F_DBL(trainer.r1Weight)},
      {"trainer.r1_eps", F_DBL(trainer.r1Eps)},
      {"trainer.batch_size", F_INT(trainer.batchSize)},
      {"trainer.seed", F_U64(trainer.seed)},
      {"trainer.latent_space", F_BOOL(trainer.latentSpace)},
      {"trainer.disc_init_seed", F_U64(discInitSeed)},

      {"sampler.temperature", F_DBL(sampler.temperature)},
      {"sampler.top_k", F_INT(sampler.topK)},
      {"sampler.cfg_scale", F_DBL(sampler.cfgScale)},
      {"sampler.seed", F_U64(sampler.seed)},

      {"generate.count", F_INT(generateCount)},
      {"generate.label", F_INT(generateLabel)},
      {"generate.guidance_weight", F_DBL(generateGuidanceWeight)},
      {"generate.use_injector", F_STR(generateUseInjector)},

      {"metric.source", F_STR(metricSource)},
      {"metric.min_samples", F_INT(metric.minSamples)},
      {"metric.eps_reg", F_DBL(metric.epsReg)},
      {"metric.eps_floor", F_DBL(metric.epsFloor)},
      {"metric.cap", F_DBL(metric.cap)},

      {"sim.scales", F_INT(sim.scaleCount)},
      {"sim.sigma", F_DLIST(sim.sigma)},
      {"sim.lipschitz", F_DLIST(sim.lipschitz)},
      {"sim.gamma", F_DBL(sim.gamma)},
      {"sim.d_min", F_DBL(sim.dMin)},
      {"sim.eta", F_DLIST(sim.eta)},
      {"sim.resolutions", F_ILIST(sim.resolutions)},
      {"sim.trials", F_INT(sim.trials)},
      {"sim.seed", F_U64(sim.seed)},
      {"sim.dim", F_INT(sim.dim)},
      {"sim.random_direction", F_BOOL(sim.randomDirection)},
      {"sim.corrected", F_BOOL(simCorrected)},

      {"inject.scale", F_INT(inject.injectScale)},
      {"inject.noise_level", F_DBL(inject.noiseLevel)},
      {"inject.seeds", F_INT(inject.seeds)},
      {"inject.base_seed", F_U64(inject.baseSeed)},
      {"inject.guidance_weight", F_DBL(inject.guidanceWeight)},

      {"ablate.param", F_STR(ablateParam)},
      {"ablate.values", F_DLIST(ablateValues)},
      {"ablate.gen_count", F_INT(ablateGenCount)},

      {"report.run", F_STR(reportRun)},
  };
  return table;
}

const Field* findField(const std::string& dotted) {
  for (const auto& [k, f] : fields())
    if (k == dotted) return &f;
  return nullptr;
}

}  // namespace

void setConfigValue(RunConfig& cfg, const std::string& dottedKey,
                    const std::string& value) {
  const Field* f = findField(trim(dottedKey));
  if (f == nullptr)
    throw ConfigError("config: unknown keys: " + trim(dottedKey));
  f->set(cfg, trim(dottedKey), trim(value));
}

RunConfig parseConfigText(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  std::vector<std::string> unknown;
  int lineNo = 0;
  while (std::getline(is, line)) {
    ++lineNo;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config: malformed section header at line " +
                          std::to_string(lineNo));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected key = value at line " +
                        std::to_string(lineNo));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    std::string dotted = section.empty() ? key : section + "." + key;
    const Field* f = findField(dotted);
    if (f == nullptr) {
      unknown.push_back(dotted);
      continue;
    }
    f->set(cfg, dotted, value);
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const std::string& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  return cfg;
}

RunConfig parseConfigFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parseConfigText(ss.str());
}

void writeConfig(std::ostream& os, const RunConfig& cfg) {
  std::string section;
  for (const auto& [dotted, f] : fields()) {
    std::string sec = dotted.substr(0, dotted.find('.'));
    std::string key = dotted.substr(dotted.find('.') + 1);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key << " = " << f.get(cfg) << '\n';
  }
}

std::string configText(const RunConfig& cfg) {
  std::ostringstream os;
  writeConfig(os, cfg);
  return os.str();
}

std::vector<std::string> configSectionNames() {
  std::vector<std::string> out;
  for (const auto& [dotted, f] : fields()) {
    std::string sec = dotted.substr(0, dotted.find('.'));
    if (out.empty() || out.back() != sec) out.push_back(sec);
  }
  return out;
}

std::uint64_t configHash(const RunConfig& cfg,
                         const std::vector<std::string>& sections) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [dotted, f] : fields()) {
    std::string sec = dotted.substr(0, dotted.find('.'));
    if (!sections.empty() &&
        std::find(sections.begin(), sections.end(), sec) == sections.end())
      continue;
    feed(dotted);
    feed("=");
    feed(f.get(cfg));
    feed("\n");
  }
  return h;
}

}  // namespace aidvar
