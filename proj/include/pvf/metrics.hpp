#pragma once

// Point and interval forecast metrics. Errors are reported in MW, MARE in
// percent of installed capacity.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pvf/error.hpp"
#include "pvf/kde.hpp"

namespace pvf {

namespace detail {

inline void check_pairs(std::span<const double> actual, std::span<const double> predicted,
                        const char* who) {
  if (actual.size() != predicted.size()) {
    throw ShapeError(std::string(who) + ": series lengths differ (" +
                     std::to_string(actual.size()) + " vs " +
                     std::to_string(predicted.size()) + ")");
  }
  if (actual.empty()) throw ValidationError(std::string(who) + ": empty series");
}

inline double mean(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace detail

inline double mae(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_pairs(actual, predicted, "mae");
  double acc = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) acc += std::abs(actual[i] - predicted[i]);
  return acc / static_cast<double>(actual.size());
}

inline double mare(std::span<const double> actual, std::span<const double> predicted,
                    double rated_mw) {
  if (!(rated_mw > 0.0)) throw ValidationError("mare: rated capacity must be positive");
  return mae(actual, predicted) / rated_mw * 100.0;
}

inline double rmse(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_pairs(actual, predicted, "rmse");
  double acc = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double d = actual[i] - predicted[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(actual.size()));
}

inline double pearson(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_pairs(actual, predicted, "pearson");
  const double ma = detail::mean(actual), mp = detail::mean(predicted);
  double sab = 0.0, saa = 0.0, spp = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double da = actual[i] - ma, dp = predicted[i] - mp;
    sab += da * dp;
    saa += da * da;
    spp += dp * dp;
  }
  if (!(saa > 0.0) || !(spp > 0.0)) {
    throw ValidationError("pearson: undefined for a zero-variance series");
  }
  return std::clamp(sab / std::sqrt(saa * spp), -1.0, 1.0);
}

inline double r2(std::span<const double> actual, std::span<const double> predicted) {
  detail::check_pairs(actual, predicted, "r2");
  const double ma = detail::mean(actual);
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    sse += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
    sst += (actual[i] - ma) * (actual[i] - ma);
  }
  if (!(sst > 0.0)) throw ValidationError("r2: undefined for a zero-variance actual series");
  return 1.0 - sse / sst;
}

// Relative reduction of `ours` against `base`, positive when ours is smaller.
inline double improvement(double base, double ours) {
  if (!(base > 0.0)) throw ValidationError("improvement: base metric must be positive");
  return (base - ours) / base * 100.0;
}

// Fraction of actuals inside their closed interval.
inline double picp(std::span<const double> actual, std::span<const Interval> intervals) {
  if (actual.size() != intervals.size()) throw ShapeError("picp: length mismatch");
  if (actual.empty()) throw ValidationError("picp: empty series");
  std::size_t inside = 0;
  for (std::size_t t = 0; t < actual.size(); ++t) inside += intervals[t].contains(actual[t]);
  return static_cast<double>(inside) / static_cast<double>(actual.size());
}

inline double piaw(std::span<const Interval> intervals) {
  if (intervals.empty()) throw ValidationError("piaw: empty series");
  double acc = 0.0;
  for (const auto& iv : intervals) acc += iv.width();
  return acc / static_cast<double>(intervals.size());
}

struct PointMetrics {
  double mae = 0.0;
  double mare = 0.0;  // percent
  double rmse = 0.0;
  double pearson = std::nan("");  // NaN when undefined (zero variance)
  double r2 = std::nan("");
  std::size_t n = 0;
};

struct IntervalMetrics {
  double picp = 0.0;
  double piaw = 0.0;
};

inline PointMetrics point_metrics(std::span<const double> actual,
                                  std::span<const double> predicted, double rated_mw) {
  PointMetrics m;
  m.mae = mae(actual, predicted);
  m.mare = mare(actual, predicted, rated_mw);
  m.rmse = rmse(actual, predicted);
  m.n = actual.size();
  try {
    m.pearson = pearson(actual, predicted);
  } catch (const ValidationError&) {
  }
  try {
    m.r2 = r2(actual, predicted);
  } catch (const ValidationError&) {
  }
  return m;
}

inline IntervalMetrics interval_metrics(std::span<const double> actual,
                                        std::span<const Interval> intervals) {
  return {picp(actual, intervals), piaw(intervals)};
}

}  // namespace pvf
