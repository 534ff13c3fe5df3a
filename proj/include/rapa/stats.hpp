#pragma once

#include <span>
#include <string>

namespace rapa {

struct Correlation {
  double value = 0.0;
  /// True when either input has zero variance; `value` is then 0.
  bool degenerate = false;
};

/// Sample (Pearson) correlation coefficient, accumulated in double.
/// Throws Error when lengths differ or are below 2.
Correlation pearson(std::span<const double> u, std::span<const double> v);
Correlation pearson(std::span<const float> u, std::span<const float> v);

double mean(std::span<const double> values);
/// Population variance (divides by n).
double population_variance(std::span<const double> values);

/// Shortest round-trip decimal form, independent of the global locale.
/// Infinities print as "inf"/"-inf" and NaN as "nan".
std::string format_real(double value);

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) noexcept;
  double value() const noexcept { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

}  // namespace rapa
