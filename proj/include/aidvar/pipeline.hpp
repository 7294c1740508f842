#pragma once

#include <string>

#include "aidvar/config.hpp"

namespace aidvar {

// A prerequisite artifact (corpus, checkpoint, pyramid file) is missing.
// The message names the artifact and the command that produces it.
struct DependencyError : StateError {
  using StateError::StateError;
};

// Executes one subcommand against the resolved config and returns the path
// of the run directory it created. Supported commands:
//   data-gen | tokenizer-train | var-pretrain | aid-train | var-generate |
//   iscs-compute | sim-run | sim-inject | ablate-sweep | report
// RUNS_DIR / DATA_DIR environment variables override the config paths.
// Every run creates a fresh directory (append-only) containing the echoed
// config, a manifest with input/output fingerprints, and the command's CSVs.
std::string runPipeline(RunConfig cfg, const std::string& command);

// FNV-1a over a file's bytes; used for artifact fingerprints.
std::uint64_t fileHash(const std::string& path);

}  // namespace aidvar
