// Command-line front end: parses flags, fills a run configuration through
// the C API, and dispatches one pipeline subcommand per invocation.
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aidvar.h"

namespace {

struct Invocation {
  std::string command;           // pipeline command name
  std::string configFile;
  std::vector<std::string> sets; // raw section.key=value overrides
};

int fail(int status, const std::string& message) {
  std::fprintf(stderr, "error: %s: %s\n", aid_status_name(status),
               message.c_str());
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multi-scale image generation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(aid_version()));

  Invocation inv;
  auto addCommon = [&](CLI::App* cmd) {
    cmd->add_option("--config", inv.configFile,
                    "config file (section.key = value lines)");
    cmd->add_option("--set", inv.sets,
                    "override one config value, e.g. --set trainer.steps=100")
        ->take_all();
  };
  auto bind = [&](CLI::App* cmd, const std::string& name) {
    addCommon(cmd);
    cmd->callback([&inv, name] { inv.command = name; });
    return cmd;
  };

  CLI::App* data = app.add_subcommand("data", "synthetic corpus commands");
  bind(data->add_subcommand("gen", "render the train/val corpora"),
       "data-gen");

  CLI::App* tok = app.add_subcommand("tokenizer", "tokenizer commands");
  bind(tok->add_subcommand("train", "train and freeze the tokenizer"),
       "tokenizer-train");

  CLI::App* var = app.add_subcommand("var", "backbone commands");
  bind(var->add_subcommand("pretrain", "teacher-forced backbone training"),
       "var-pretrain");
  CLI::App* gen =
      bind(var->add_subcommand("generate", "sample token pyramids"),
           "var-generate");
  gen->add_option_function<int>(
      "--count", [&inv](const int& v) {
        inv.sets.push_back("generate.count=" + std::to_string(v));
      },
      "number of samples");

  CLI::App* aidc = app.add_subcommand("aid", "adversarial guidance commands");
  CLI::App* aidTrain = bind(
      aidc->add_subcommand("train", "train injector + discriminator"),
      "aid-train");
  aidTrain->add_option_function<int>(
      "--steps", [&inv](const int& v) {
        inv.sets.push_back("trainer.steps=" + std::to_string(v));
      },
      "refresh steps");

  CLI::App* iscs = app.add_subcommand("iscs", "metric commands");
  bind(iscs->add_subcommand("compute", "inter-scale consistency report"),
       "iscs-compute");

  CLI::App* sim = app.add_subcommand("sim", "error-accumulation simulator");
  bind(sim->add_subcommand("run", "Monte Carlo bound checks"), "sim-run");
  CLI::App* inj = bind(
      sim->add_subcommand("inject", "paired noise-injection experiment"),
      "sim-inject");
  inj->add_option_function<int>(
      "--scale", [&inv](const int& v) {
        inv.sets.push_back("inject.scale=" + std::to_string(v));
      },
      "scale receiving the noise patch");
  inj->add_option_function<double>(
      "--noise", [&inv](const double& v) {
        inv.sets.push_back("inject.noise_level=" + std::to_string(v));
      },
      "noise amplitude");

  CLI::App* ablate = app.add_subcommand("ablate", "ablation studies");
  CLI::App* sweep = bind(
      ablate->add_subcommand("sweep", "sweep one parameter, score proxy FD"),
      "ablate-sweep");
  sweep->add_option_function<std::string>(
      "--param", [&inv](const std::string& v) {
        inv.sets.push_back("ablate.param=" + v);
      },
      "w | guidance | disc_input");
  sweep->add_option_function<std::string>(
      "--values", [&inv](const std::string& v) {
        inv.sets.push_back("ablate.values=" + v);
      },
      "comma-separated values");

  CLI::App* report = bind(
      app.add_subcommand("report", "summarize a training run"), "report");
  report->add_option_function<std::string>(
      "--run", [&inv](const std::string& v) {
        inv.sets.push_back("report.run=" + v);
      },
      "run directory containing telemetry.csv");

  CLI11_PARSE(app, argc, argv);

  aid_config* cfg = aid_config_new();
  char err[1024];
  if (!inv.configFile.empty()) {
    int rc = aid_config_load_file(cfg, inv.configFile.c_str(), err,
                                  sizeof(err));
    if (rc != AID_OK) {
      aid_config_free(cfg);
      return fail(rc, err);
    }
  }
  for (const std::string& kv : inv.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      aid_config_free(cfg);
      return fail(AID_ERR_CONFIG, "--set expects section.key=value, got '" +
                                      kv + "'");
    }
    int rc = aid_config_set(cfg, kv.substr(0, eq).c_str(),
                            kv.substr(eq + 1).c_str(), err, sizeof(err));
    if (rc != AID_OK) {
      aid_config_free(cfg);
      return fail(rc, err);
    }
  }

  char runDir[4096];
  int rc = aid_run(cfg, inv.command.c_str(), runDir, sizeof(runDir), err,
                   sizeof(err));
  aid_config_free(cfg);
  if (rc != AID_OK) return fail(rc, err);
  std::printf("%s\n", runDir);
  return 0;
}
