#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vortexlab/error.hpp"

namespace vortexlab {

/// Least-squares line through (x, log y). For exponential models x is time
/// and `rate` is the growth rate; for power laws x is log of the abscissa and
/// `rate` is the exponent.
struct RateFit {
  double rate = 0.0;
  double intercept = 0.0;
  double r_squared = 1.0;
  std::size_t samples = 0;
  // log y is exactly constant; R^2 is undefined and reported as 1.
  bool exact_constant = false;
};

struct Sample {
  double t = 0.0;
  double value = 0.0;
};

namespace detail {

inline RateFit fit_line(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  require(sxx > 0.0, ErrorCode::DegenerateFit, "all abscissae coincide");
  RateFit fit;
  fit.samples = n;
  bool constant = true;
  for (std::size_t i = 1; i < n; ++i) constant = constant && (y[i] == y[0]);
  if (constant) {
    fit.rate = 0.0;
    fit.intercept = y[0];
    fit.r_squared = 1.0;
    fit.exact_constant = true;
    return fit;
  }
  fit.rate = sxy / sxx;
  fit.intercept = my - fit.rate * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - (fit.intercept + fit.rate * x[i]);
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

inline void check_positive(std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0) || !std::isfinite(values[i]))
      fail(ErrorCode::NonPositiveValue,
           "sample " + std::to_string(i) + " has value " + std::to_string(values[i]));
  }
}

}  // namespace detail

/// Fits value(t) ~ exp(intercept + rate * t). Requires at least `min_samples`
/// strictly positive values.
inline RateFit fit_exponential(std::span<const double> t, std::span<const double> value,
                               std::size_t min_samples = 10) {
  require(t.size() == value.size(), ErrorCode::InvalidArgument, "time/value length mismatch");
  require(t.size() >= min_samples, ErrorCode::DegenerateFit,
          "need at least " + std::to_string(min_samples) + " samples, got " +
              std::to_string(t.size()));
  detail::check_positive(value);
  std::vector<double> logs(value.size());
  for (std::size_t i = 0; i < value.size(); ++i) logs[i] = std::log(value[i]);
  return detail::fit_line(t, logs);
}

inline RateFit fit_exponential(std::span<const Sample> series, std::size_t min_samples = 10) {
  std::vector<double> t, v;
  t.reserve(series.size());
  v.reserve(series.size());
  for (const auto& s : series) { t.push_back(s.t); v.push_back(s.value); }
  return fit_exponential(t, v, min_samples);
}

/// Fits value(x) ~ exp(intercept) * x^rate on a log-log scale.
inline RateFit fit_power_law(std::span<const double> x, std::span<const double> value,
                             std::size_t min_samples = 2) {
  require(x.size() == value.size(), ErrorCode::InvalidArgument, "abscissa/value length mismatch");
  require(x.size() >= min_samples, ErrorCode::DegenerateFit,
          "need at least " + std::to_string(min_samples) + " samples");
  detail::check_positive(x);
  detail::check_positive(value);
  std::vector<double> lx(x.size()), ly(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(value[i]);
  }
  return detail::fit_line(lx, ly);
}

}  // namespace vortexlab
