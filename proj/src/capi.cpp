#include "aidvar.h"

#include <cstring>
#include <new>
#include <string>

#include "aidvar/config.hpp"
#include "aidvar/pipeline.hpp"
#include "aidvar/serialize.hpp"

struct aid_config {
  aidvar::RunConfig cfg;
};

namespace {

void fillBuffer(char* buf, size_t cap, const std::string& s) {
  if (buf == nullptr || cap == 0) return;
  size_t n = std::min(cap - 1, s.size());
  std::memcpy(buf, s.data(), n);
  buf[n] = '\0';
}

// Maps the C++ error taxonomy onto C status codes.
template <typename F>
aid_status guard(F&& f, char* err, size_t errCap) {
  try {
    f();
    fillBuffer(err, errCap, "");
    return AID_OK;
  } catch (const aidvar::ConfigError& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_CONFIG;
  } catch (const aidvar::ContractError& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_CONFIG;
  } catch (const aidvar::DependencyError& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_DEPENDENCY;
  } catch (const aidvar::TrainingError& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_TRAINING;
  } catch (const aidvar::FormatError& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_FORMAT;
  } catch (const aidvar::StateError& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_DEPENDENCY;
  } catch (const std::ios_base::failure& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_IO;
  } catch (const std::exception& e) {
    fillBuffer(err, errCap, e.what());
    return AID_ERR_INTERNAL;
  }
}

}  // namespace

extern "C" {

const char* aid_version(void) { return "1.0.0"; }

const char* aid_status_name(int status) {
  switch (status) {
    case AID_OK: return "ok";
    case AID_ERR_CONFIG: return "config-error";
    case AID_ERR_DEPENDENCY: return "dependency-error";
    case AID_ERR_TRAINING: return "training-error";
    case AID_ERR_FORMAT: return "format-error";
    case AID_ERR_IO: return "io-error";
    case AID_ERR_INTERNAL: return "internal-error";
    default: return "unknown-status";
  }
}

aid_config* aid_config_new(void) { return new aid_config(); }

void aid_config_free(aid_config* cfg) { delete cfg; }

aid_status aid_config_load_file(aid_config* cfg, const char* path,
                                char* err, size_t err_cap) {
  if (cfg == nullptr || path == nullptr) {
    fillBuffer(err, err_cap, "null argument");
    return AID_ERR_CONFIG;
  }
  return guard([&] { cfg->cfg = aidvar::parseConfigFile(path); }, err,
               err_cap);
}

aid_status aid_config_set(aid_config* cfg, const char* dotted_key,
                          const char* value, char* err, size_t err_cap) {
  if (cfg == nullptr || dotted_key == nullptr || value == nullptr) {
    fillBuffer(err, err_cap, "null argument");
    return AID_ERR_CONFIG;
  }
  return guard([&] { aidvar::setConfigValue(cfg->cfg, dotted_key, value); },
               err, err_cap);
}

aid_status aid_config_get(const aid_config* cfg, const char* dotted_key,
                          char* out, size_t out_cap) {
  if (cfg == nullptr || dotted_key == nullptr || out == nullptr ||
      out_cap == 0)
    return AID_ERR_CONFIG;
  // round-trip through the echo: find the key's current value
  std::string text = aidvar::configText(cfg->cfg);
  std::string key(dotted_key);
  std::string sec = key.substr(0, key.find('.'));
  std::string name = key.find('.') == std::string::npos
                         ? key
                         : key.substr(key.find('.') + 1);
  std::string header = "[" + sec + "]";
  std::size_t at = text.find(header);
  if (at == std::string::npos) return AID_ERR_CONFIG;
  std::size_t end = text.find("\n[", at);
  std::string block = text.substr(at, end == std::string::npos
                                          ? std::string::npos
                                          : end - at);
  std::size_t line = block.find("\n" + name + " = ");
  if (line == std::string::npos) return AID_ERR_CONFIG;
  std::size_t vs = line + name.size() + 4;
  std::size_t ve = block.find('\n', vs);
  std::string value = block.substr(vs, ve - vs);
  if (value.size() + 1 > out_cap) return AID_ERR_CONFIG;
  fillBuffer(out, out_cap, value);
  return AID_OK;
}

aid_status aid_run(const aid_config* cfg, const char* subcommand,
                   char* run_dir_out, size_t run_dir_cap,
                   char* err, size_t err_cap) {
  if (cfg == nullptr || subcommand == nullptr) {
    fillBuffer(err, err_cap, "null argument");
    return AID_ERR_CONFIG;
  }
  return guard(
      [&] {
        std::string dir = aidvar::runPipeline(cfg->cfg, subcommand);
        fillBuffer(run_dir_out, run_dir_cap, dir);
      },
      err, err_cap);
}

}  // extern "C"
