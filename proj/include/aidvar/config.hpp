#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "aidvar/backbone.hpp"
#include "aidvar/discriminator.hpp"
#include "aidvar/injector.hpp"
#include "aidvar/iscs.hpp"
#include "aidvar/sim.hpp"
#include "aidvar/tokenizer.hpp"
#include "aidvar/trainer.hpp"

namespace aidvar {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a pipeline run needs, grouped into sections. Every field has a
// default; files and flag overrides both use `section.key = value` keys.
struct RunConfig {
  // [run]
  std::uint64_t seed = 1;
  std::string runsDir = "runs";
  std::string dataDir = "data";

  // [data]
  int dataTrainCount = 512;
  int dataValCount = 128;
  std::uint64_t dataTrainSeed = 101;
  std::uint64_t dataValSeed = 202;

  // [tokenizer] (+ its training settings)
  TokenizerConfig tokenizer;
  TokenizerTrainConfig tokenizerTrain;
  std::uint64_t tokenizerInitSeed = 1234;

  // [backbone]
  BackboneConfig backbone;
  BackboneTrainConfig backboneTrain;
  std::uint64_t backboneInitSeed = 4321;

  // [extractor]
  ExtractorTrainConfig extractorTrain;
  std::uint64_t extractorInitSeed = 2025;

  // [injector]
  InjectorConfig injector;
  std::uint64_t injectorInitSeed = 777;

  // [trainer]
  TrainerConfig trainer;
  int trainerSteps = 1500;
  std::uint64_t discInitSeed = 555;

  // [sampler]
  SamplerConfig sampler;

  // [generate]
  int generateCount = 256;
  int generateLabel = -1;  // -1 = cycle through all classes
  double generateGuidanceWeight = 0.01;
  std::string generateUseInjector = "auto";  // auto | true | false

  // [metric]
  IscsConfig metric;
  std::string metricSource = "auto";  // auto | guided | baseline

  // [sim]
  PropagationConfig sim;
  bool simCorrected = false;

  // [inject]
  NoiseInjectionConfig inject;

  // [ablate]
  std::string ablateParam = "w";
  std::vector<double> ablateValues = {0.0, 1e-4, 1e-3, 1e-2, 1e-1};
  int ablateGenCount = 48;

  // [report]
  std::string reportRun;
};

// Applies `section.key = value` lines over the defaults. Unknown keys are
// collected and reported together in one ConfigError; malformed values name
// the offending key.
RunConfig parseConfigFile(const std::string& path);
RunConfig parseConfigText(const std::string& text);
void setConfigValue(RunConfig& cfg, const std::string& dottedKey,
                    const std::string& value);

// Full echo of the resolved config: every known key with its current value,
// grouped by section. Parsing the echo reproduces the config exactly.
void writeConfig(std::ostream& os, const RunConfig& cfg);
std::string configText(const RunConfig& cfg);

// FNV-1a over the echoed text of the named sections (all sections if empty).
std::uint64_t configHash(const RunConfig& cfg,
                         const std::vector<std::string>& sections = {});

std::vector<std::string> configSectionNames();

}  // namespace aidvar
