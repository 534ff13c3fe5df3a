#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rapa/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Replicated-array convolution simulator"};
  app.require_subcommand(1);

  std::string config_path;
  rapa::ConfigOverrides overrides;
  std::vector<std::string> settings;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "train a network, writing metrics.csv and checkpoints"},
      {"eval", "single-pass and majority-vote test error of a checkpoint"},
      {"attack", "FGSM accuracy curve of a checkpoint, writing adversarial.csv"},
      {"theory", "replica logistic-regression decomposition check, writing theory.csv"},
      {"cost", "analog-array cost model table"},
      {"reduce", "collapse a tiled checkpoint to one kernel per layer"},
      {"synth", "write a synthetic dataset in the CIFAR-10 binary layout"},
  };

  // Flags that map one-to-one onto config keys.
  const std::vector<std::pair<std::string, std::string>> keyed = {
      {"seed", "random seed"},
      {"data", "dataset directory (CIFAR-10 binary files)"},
      {"out", "output directory"},
      {"workers", "worker threads (0 = all cores)"},
      {"subset", "training images to use (0 = all)"},
      {"tiles", "tiles per conv layer, e.g. 16,4,1"},
      {"scheme", "tiling scheme"},
      {"pooling", "max | average | stochastic | mixed"},
      {"votes", "predictions per majority vote"},
      {"checkpoint", "checkpoint to load"},
      {"epochs", "training epochs"},
  };
  std::vector<std::optional<std::string>> keyed_values(keyed.size());

  std::string chosen;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->callback([&chosen, name = name] { chosen = name; });
    sub->add_option("--config", config_path, "key = value config file");
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      sub->add_option("--" + keyed[i].first, keyed_values[i], keyed[i].second);
    }
    sub->add_option("--set", settings, "extra config entry key=value (repeatable)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (std::size_t i = 0; i < keyed.size(); ++i) {
      if (keyed_values[i]) overrides.emplace_back(keyed[i].first, *keyed_values[i]);
    }
    for (const auto& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw rapa::Error("--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    rapa::RunConfig cfg = config_path.empty() ? rapa::default_config(overrides)
                                              : rapa::parse_config(config_path, overrides);
    cfg.command = chosen;
    return rapa::run_command(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "rapa " << chosen << ": " << e.what() << '\n';
    return 1;
  }
}
