#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stsam/commands.hpp"
#include "stsam/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"ST-SAM spatial-temporal self-attention traffic forecaster"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  for (const char* name : {"generate", "train", "eval", "predict"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "structured-text config file");
    sub->add_option("--set", overrides,
                    "override a config key, e.g. --set model.d=32");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return stsam::kExitUsage;
  }

  try {
    const stsam::RunConfig cfg =
        config_path.empty() ? stsam::parse_run_config_values(overrides)
                            : stsam::parse_run_config(config_path, overrides);
    return stsam::run_command(app.get_subcommands().front()->get_name(), cfg);
  } catch (const stsam::UsageError& e) {
    std::fprintf(stderr, "st-sam: %s\n", e.what());
    return stsam::kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "st-sam: %s\n", e.what());
    return stsam::kExitData;
  }
}
