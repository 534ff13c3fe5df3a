#include "rapa/theory.hpp"

#include <cmath>
#include <fstream>

#include "rapa/stats.hpp"

namespace rapa::theory {

namespace {

double dot_row(const Tensor& x, std::size_t row, std::span<const double> theta) {
  const std::size_t d = theta.size();
  double z = 0.0;
  for (std::size_t l = 0; l < d; ++l) z += x[row * d + l] * theta[l];
  return z;
}

void check_shapes(const ReplicaModel& model, const LabeledDataset& data) {
  data.validate();
  if (model.theta.rank() != 2 || model.tiles() == 0 || model.dims() == 0) {
    throw Error("replica model needs a non-empty tiles x d theta, got " +
                shape_string(model.theta.shape()));
  }
  if (data.x.dim(1) != model.dims()) {
    throw Error("data has " + std::to_string(data.x.dim(1)) + " features, model has " +
                std::to_string(model.dims()));
  }
}

std::uint64_t require_enumerable(const ReplicaModel& model) {
  const std::uint64_t count = selection_count(model);
  if (count == 0) {
    throw Error(std::to_string(model.tiles()) + "^" + std::to_string(model.dims()) +
                " selection vectors exceed the enumeration budget of " +
                std::to_string(kEnumerationBudget));
  }
  return count;
}

// Calls f(z) with z[i] = x_i . theta^s for every selection vector s.
template <typename F>
void for_each_selection(const ReplicaModel& model, const LabeledDataset& data, F&& f) {
  const std::size_t d = model.dims(), tiles = model.tiles(), n = data.size();
  const std::uint64_t count = require_enumerable(model);
  std::vector<std::size_t> s(d, 0);
  std::vector<double> theta(d), z(n);
  for (std::uint64_t v = 0; v < count; ++v) {
    for (std::size_t l = 0; l < d; ++l) theta[l] = model.theta[s[l] * d + l];
    for (std::size_t i = 0; i < n; ++i) z[i] = dot_row(data.x, i, theta);
    f(std::span<const double>(z));
    for (std::size_t l = 0; l < d; ++l) {
      if (++s[l] < tiles) break;
      s[l] = 0;
    }
  }
}

}  // namespace

void LabeledDataset::validate() const {
  if (x.rank() != 2 || x.dim(0) != y.size()) {
    throw Error("dataset x " + shape_string(x.shape()) + " does not match " +
                std::to_string(y.size()) + " labels");
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] > 1) throw Error("label " + std::to_string(y[i]) + " at example " + std::to_string(i) + " is not 0 or 1");
  }
}

std::vector<double> ReplicaModel::mean() const {
  const std::size_t d = dims(), tiles = this->tiles();
  std::vector<double> out(d);
  for (std::size_t l = 0; l < d; ++l) {
    CompensatedSum sum;
    for (std::size_t j = 0; j < tiles; ++j) sum.add(theta[j * d + l]);
    out[l] = sum.value() / static_cast<double>(tiles);
  }
  return out;
}

double log_partition(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double nll(std::span<const double> theta, const LabeledDataset& data) {
  data.validate();
  if (data.x.dim(1) != theta.size()) {
    throw Error("theta has " + std::to_string(theta.size()) + " entries, data has " +
                std::to_string(data.x.dim(1)) + " features");
  }
  CompensatedSum sum;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double z = dot_row(data.x, i, theta);
    sum.add(log_partition(z));
    sum.add(-static_cast<double>(data.y[i]) * z);
  }
  return sum.value();
}

std::uint64_t selection_count(const ReplicaModel& model) {
  std::uint64_t count = 1;
  for (std::size_t l = 0; l < model.dims(); ++l) {
    count *= model.tiles();
    if (count > kEnumerationBudget) return 0;
  }
  return count;
}

double averaged_replica_loss_exact(const ReplicaModel& model, const LabeledDataset& data) {
  check_shapes(model, data);
  CompensatedSum sum;
  std::uint64_t count = 0;
  for_each_selection(model, data, [&](std::span<const double> z) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      sum.add(log_partition(z[i]));
      sum.add(-static_cast<double>(data.y[i]) * z[i]);
    }
    ++count;
  });
  return sum.value() / static_cast<double>(count);
}

Estimate averaged_replica_loss_mc(const ReplicaModel& model, const LabeledDataset& data,
                                  std::uint64_t samples, SeededRng& rng) {
  check_shapes(model, data);
  if (samples < 2) throw Error("Monte Carlo estimate needs at least 2 samples");
  const std::size_t d = model.dims();
  std::vector<double> theta(d);
  CompensatedSum sum, sum_sq;
  for (std::uint64_t m = 0; m < samples; ++m) {
    for (std::size_t l = 0; l < d; ++l) theta[l] = model.theta[rng.below(model.tiles()) * d + l];
    const double loss = nll(theta, data);
    sum.add(loss);
    sum_sq.add(loss * loss);
  }
  const auto count = static_cast<double>(samples);
  const double mean = sum.value() / count;
  const double var = std::max(0.0, (sum_sq.value() - count * mean * mean) / (count - 1.0));
  return {mean, std::sqrt(var / count), samples};
}

double regularizer_exact(const ReplicaModel& model, const LabeledDataset& data) {
  check_shapes(model, data);
  const std::size_t n = data.size();
  std::vector<CompensatedSum> per_example(n);
  std::uint64_t count = 0;
  for_each_selection(model, data, [&](std::span<const double> z) {
    for (std::size_t i = 0; i < n; ++i) per_example[i].add(log_partition(z[i]));
    ++count;
  });
  const std::vector<double> mean = model.mean();
  CompensatedSum total;
  for (std::size_t i = 0; i < n; ++i) {
    total.add(per_example[i].value() / static_cast<double>(count));
    total.add(-log_partition(dot_row(data.x, i, mean)));
  }
  return total.value();
}

double regularizer_taylor(const ReplicaModel& model, const LabeledDataset& data) {
  check_shapes(model, data);
  const std::size_t d = model.dims(), tiles = model.tiles();
  const std::vector<double> mean = model.mean();
  std::vector<double> var(d), column(tiles);
  for (std::size_t l = 0; l < d; ++l) {
    for (std::size_t j = 0; j < tiles; ++j) column[j] = model.theta[j * d + l];
    var[l] = population_variance(column);
  }
  CompensatedSum total;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double p = sigmoid(dot_row(data.x, i, mean));
    double spread = 0.0;
    for (std::size_t l = 0; l < d; ++l) {
      const double x = data.x[i * d + l];
      spread += x * x * var[l];
    }
    total.add(0.5 * p * (1.0 - p) * spread);
  }
  return total.value();
}

Decomposition decomposition_check(const ReplicaModel& model, const LabeledDataset& data) {
  Decomposition out;
  out.lhs = averaged_replica_loss_exact(model, data);
  out.loss_at_mean = nll(model.mean(), data);
  out.regularizer = regularizer_exact(model, data);
  out.rhs = out.loss_at_mean + out.regularizer;
  out.gap = std::abs(out.lhs - out.rhs);
  return out;
}

Instance random_instance(SeededRng& rng, std::size_t max_dims, std::size_t max_tiles,
                         std::size_t examples) {
  if (max_dims == 0 || max_tiles == 0 || examples == 0) {
    throw Error("random instance bounds must be positive");
  }
  const std::size_t d = 1 + rng.below(max_dims);
  const std::size_t tiles = 1 + rng.below(max_tiles);
  Instance inst;
  inst.model.theta = Tensor({tiles, d});
  for (auto& v : inst.model.theta.values()) v = rng.normal();
  inst.data.x = Tensor({examples, d});
  for (auto& v : inst.data.x.values()) v = rng.normal();
  inst.data.y.resize(examples);
  for (auto& y : inst.data.y) y = rng.coin() ? 1 : 0;
  return inst;
}

Instance worked_instance() {
  Instance inst;
  inst.model.theta = Tensor({2, 1}, {1.0, -1.0});
  inst.data.x = Tensor({1, 1}, {1.0});
  inst.data.y = {1};
  return inst;
}

ReplicaModel scale_spread(const ReplicaModel& model, double factor) {
  const std::vector<double> mean = model.mean();
  const std::size_t d = model.dims();
  ReplicaModel out = model;
  for (std::size_t j = 0; j < model.tiles(); ++j) {
    for (std::size_t l = 0; l < d; ++l) {
      out.theta[j * d + l] = mean[l] + factor * (model.theta[j * d + l] - mean[l]);
    }
  }
  return out;
}

std::vector<InstanceRow> run_instances(std::size_t count, std::uint64_t seed, std::size_t max_dims,
                                       std::size_t max_tiles, std::size_t examples) {
  std::vector<InstanceRow> rows(count);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t k = 0; k < count; ++k) {
    SeededRng rng = SeededRng::derive(seed, {40, k});
    const Instance inst = random_instance(rng, max_dims, max_tiles, examples);
    rows[k].id = k;
    rows[k].decomposition = decomposition_check(inst.model, inst.data);
    rows[k].taylor = regularizer_taylor(inst.model, inst.data);
  }
  return rows;
}

void write_theory_csv(const std::filesystem::path& path, std::span<const InstanceRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "instance,lhs,rhs,gap,r_exact,r_taylor\n";
  for (const auto& r : rows) {
    const auto& d = r.decomposition;
    out << r.id << ',' << format_real(d.lhs) << ',' << format_real(d.rhs) << ','
        << format_real(d.gap) << ',' << format_real(d.regularizer) << ',' << format_real(r.taylor)
        << '\n';
  }
}

}  // namespace rapa::theory
