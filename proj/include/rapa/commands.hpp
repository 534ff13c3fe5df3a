#pragma once

#include <iosfwd>
#include <string_view>

#include "rapa/cifar.hpp"
#include "rapa/config.hpp"

namespace rapa {

/// Loads cfg.data and applies the train and test subset sizes.
CifarData load_run_data(const RunConfig& cfg);

/// Trains, appending one metrics.csv row per epoch; writes checkpoints at
/// every anneal boundary and final.rapa at the end.
int cmd_train(const RunConfig& cfg, std::ostream& log);
/// Single-pass and majority-vote test error of a checkpoint.
int cmd_eval(const RunConfig& cfg, std::ostream& log);
/// FGSM curve over the eps grid, written to adversarial.csv.
int cmd_attack(const RunConfig& cfg, std::ostream& log);
/// Decomposition check on random instances, written to theory.csv.
int cmd_theory(const RunConfig& cfg, std::ostream& log);
int cmd_cost(const RunConfig& cfg, std::ostream& log);
/// Collapses every tiled layer of a checkpoint to one kernel matrix.
int cmd_reduce(const RunConfig& cfg, std::ostream& log);
/// Writes a synthetic dataset in the CIFAR-10 binary layout to cfg.out.
int cmd_synth(const RunConfig& cfg, std::ostream& log);

int run_command(const RunConfig& cfg, std::ostream& log);

}  // namespace rapa
