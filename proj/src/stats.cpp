#include "rapa/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include "rapa/tensor.hpp"

namespace rapa {

namespace {

template <typename T>
Correlation pearson_impl(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    throw Error("pearson: length mismatch (" + std::to_string(u.size()) + " vs " +
                std::to_string(v.size()) + ")");
  }
  if (u.size() < 2) throw Error("pearson: need at least 2 samples");
  const double n = static_cast<double>(u.size());
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    mu += u[i];
    mv += v[i];
  }
  mu /= n;
  mv /= n;
  double suu = 0.0, svv = 0.0, suv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double du = u[i] - mu, dv = v[i] - mv;
    suu += du * du;
    svv += dv * dv;
    suv += du * dv;
  }
  if (suu <= 0.0 || svv <= 0.0) return {0.0, true};
  const double r = suv / std::sqrt(suu * svv);
  return {std::clamp(r, -1.0, 1.0), false};
}

}  // namespace

Correlation pearson(std::span<const double> u, std::span<const double> v) {
  return pearson_impl(u, v);
}

Correlation pearson(std::span<const float> u, std::span<const float> v) {
  return pearson_impl(u, v);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double x : values) s += x;
  return s / static_cast<double>(values.size());
}

double population_variance(std::span<const double> values) {
  if (values.empty()) return 0.0;
  const double m = mean(values);
  double s = 0.0;
  for (double x : values) s += (x - m) * (x - m);
  return s / static_cast<double>(values.size());
}

std::string format_real(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void CompensatedSum::add(double v) noexcept {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    carry_ += (sum_ - t) + v;
  } else {
    carry_ += (v - t) + sum_;
  }
  sum_ = t;
}

}  // namespace rapa
