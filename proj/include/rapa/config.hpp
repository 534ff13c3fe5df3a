#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rapa/analysis.hpp"
#include "rapa/network.hpp"
#include "rapa/training.hpp"

namespace rapa {

/// Everything a subcommand needs. Learning-rate settings left unset in the
/// file and on the command line take the tiled or untiled defaults.
struct RunConfig {
  std::string command;
  std::filesystem::path data;
  std::filesystem::path out = "out";
  std::filesystem::path checkpoint;
  NetworkConfig network;
  TrainConfig train;
  std::size_t subset = 0;       // training images, 0 = all
  std::size_t test_subset = 0;  // test images, 0 = all
  std::size_t votes = 5;
  std::vector<double> eps_grid{0, 4, 8, 16, 24, 33, 48};
  std::size_t attack_images = 0;
  int workers = 0;  // 0 = available parallelism
  std::uint64_t seed = 1;
  bool eval_each_epoch = true;

  std::size_t theory_instances = 100;
  std::size_t theory_max_dims = 4;
  std::size_t theory_max_tiles = 4;
  std::size_t theory_examples = 8;

  std::size_t synth_train_per_batch = 1000;
  std::size_t synth_test = 2000;

  std::vector<CostLayerSpec> cost_layers;  // empty: derive from `network`
};

/// (key, value) pairs taken from command-line flags; they override the file.
using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Grammar: one `key = value` per line; `#` starts a comment; blank lines are
/// ignored; `cost_layer` may repeat, every other key may appear once.
/// Lists are comma separated. Errors name the key and its source line.
RunConfig parse_config_text(const std::string& text, const std::string& source,
                            const ConfigOverrides& overrides = {});
RunConfig parse_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});
/// Defaults only, with overrides applied.
RunConfig default_config(const ConfigOverrides& overrides = {});

/// Text form of a NetworkConfig, readable by parse_network_text.
std::string network_to_text(const NetworkConfig& cfg);
NetworkConfig parse_network_text(const std::string& text, const std::string& source);

}  // namespace rapa
