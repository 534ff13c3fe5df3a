#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rapa/rng.hpp"
#include "rapa/tensor.hpp"

// Logistic regression whose parameters are replicated over tiles: each
// evaluation draws, for every coordinate l independently and uniformly, the
// tile whose copy of theta_l is used.
namespace rapa::theory {

struct LabeledDataset {
  Tensor x;                  // N x d
  std::vector<std::uint8_t> y;  // 0 or 1

  std::size_t size() const noexcept { return y.size(); }
  void validate() const;
};

struct ReplicaModel {
  Tensor theta;  // tiles x d; row j is tile j's parameter vector

  std::size_t tiles() const { return theta.dim(0); }
  std::size_t dims() const { return theta.dim(1); }
  /// Column mean over tiles.
  std::vector<double> mean() const;
};

inline constexpr std::uint64_t kEnumerationBudget = 1'000'000;

/// log(1 + exp(z)) without overflow.
double log_partition(double z);
double sigmoid(double z);

/// sum_i A(x_i . theta) - y_i x_i . theta
double nll(std::span<const double> theta, const LabeledDataset& data);

/// tiles^dims, or 0 when that exceeds the enumeration budget.
std::uint64_t selection_count(const ReplicaModel& model);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 for exact results
  std::uint64_t samples = 0;
};

/// Average of nll over every tile-selection vector.
double averaged_replica_loss_exact(const ReplicaModel& model, const LabeledDataset& data);
/// Mean over `samples` independent selection vectors, with standard error.
Estimate averaged_replica_loss_mc(const ReplicaModel& model, const LabeledDataset& data,
                                  std::uint64_t samples, SeededRng& rng);

/// sum_i (<A(x_i . theta^s)>_s - A(x_i . mean theta)), enumerated exactly.
double regularizer_exact(const ReplicaModel& model, const LabeledDataset& data);
/// 1/2 sum_i p_i (1 - p_i) sum_l x_il^2 Var_l, p_i = sigmoid(x_i . mean theta),
/// Var_l the population variance of column l.
double regularizer_taylor(const ReplicaModel& model, const LabeledDataset& data);

struct Decomposition {
  double lhs = 0.0;           // averaged replica loss
  double loss_at_mean = 0.0;  // nll(mean theta)
  double regularizer = 0.0;   // regularizer_exact
  double rhs = 0.0;           // loss_at_mean + regularizer
  double gap = 0.0;           // |lhs - rhs|
};

Decomposition decomposition_check(const ReplicaModel& model, const LabeledDataset& data);

struct Instance {
  ReplicaModel model;
  LabeledDataset data;
};

/// Standard normal theta and x, fair-coin labels; dims and tiles uniform in
/// [1, max].
Instance random_instance(SeededRng& rng, std::size_t max_dims, std::size_t max_tiles,
                         std::size_t examples);

/// The one-dimensional two-tile case: theta = {+1, -1}, x = 1, y = 1.
Instance worked_instance();

/// Keeps the column means and multiplies every deviation from them by `factor`.
ReplicaModel scale_spread(const ReplicaModel& model, double factor);

struct InstanceRow {
  std::size_t id = 0;
  Decomposition decomposition;
  double taylor = 0.0;
};

std::vector<InstanceRow> run_instances(std::size_t count, std::uint64_t seed, std::size_t max_dims,
                                       std::size_t max_tiles, std::size_t examples);
void write_theory_csv(const std::filesystem::path& path, std::span<const InstanceRow> rows);

}  // namespace rapa::theory
