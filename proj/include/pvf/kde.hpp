#pragma once

// Gaussian kernel density estimation of the joint (predicted, actual) power
// distribution, and conditional quantile intervals read off the density
// column at a given prediction.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "pvf/dataset.hpp"
#include "pvf/error.hpp"

namespace pvf {

inline double gaussian_kernel(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// (1 / (N h)) sum_i Ker((x - x_i) / h)
inline double estimate_1d(std::span<const double> samples, double h, double x) {
  if (samples.empty()) throw ValidationError("kde: no samples");
  if (!(h > 0.0)) throw ValidationError("kde: bandwidth must be positive");
  double acc = 0.0;
  for (double xi : samples) acc += gaussian_kernel((x - xi) / h);
  return acc / (static_cast<double>(samples.size()) * h);
}

namespace detail {

// Linear-interpolated sample quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double sample_stddev(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

// Silverman's rule: 1.06 min(sigma, IQR / 1.34) N^(-1/5). Falls back to
// sigma when the IQR collapses but the sample still has spread.
inline double select_bandwidth(std::span<const double> samples) {
  if (samples.size() < 2) throw ValidationError("bandwidth: need at least 2 samples");
  const double sigma = detail::sample_stddev(samples);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double iqr = detail::sorted_quantile(sorted, 0.75) - detail::sorted_quantile(sorted, 0.25);
  double spread = std::min(sigma, iqr / 1.34);
  if (!(spread > 0.0)) spread = sigma;
  if (!(spread > 0.0) || !std::isfinite(spread)) {
    throw ValidationError(
        "bandwidth: samples have zero spread; add jitter or supply a fixed bandwidth");
  }
  return 1.06 * spread * std::pow(static_cast<double>(samples.size()), -0.2);
}

// Least-squares cross-validation over a log grid around the Silverman
// bandwidth; minimizes an unbiased estimate of the integrated squared error.
inline double select_bandwidth_lscv(std::span<const double> samples) {
  const double h0 = select_bandwidth(samples);
  const auto n = static_cast<double>(samples.size());
  auto score = [&](double h) {
    // int f^2 = 1/(N^2 h) sum_ij phi_{sqrt2}(d/h); leave-one-out term excludes i=j.
    double conv = 0.0, loo = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      for (std::size_t j = i + 1; j < samples.size(); ++j) {
        const double z = (samples[i] - samples[j]) / h;
        conv += 2.0 * gaussian_kernel(z / std::numbers::sqrt2) / std::numbers::sqrt2;
        loo += 2.0 * gaussian_kernel(z);
      }
    }
    conv += n * gaussian_kernel(0.0) / std::numbers::sqrt2;
    return conv / (n * n * h) - 2.0 * loo / (n * (n - 1.0) * h);
  };
  double best_h = h0, best = score(h0);
  for (int k = -12; k <= 8; ++k) {
    const double h = h0 * std::pow(2.0, k / 4.0);
    const double s = score(h);
    if (s < best) {
      best = s;
      best_h = h;
    }
  }
  return best_h;
}

enum class BandwidthRule { kSilverman, kLscv };

// Joint sample of (predicted, actual) pairs in MW with per-axis bandwidths.
struct DensityModel {
  std::vector<double> predicted;
  std::vector<double> actual;
  double h_pred = 0.0;
  double h_actual = 0.0;

  std::size_t size() const { return predicted.size(); }

  void validate() const {
    if (predicted.size() != actual.size()) throw ShapeError("density: pair count mismatch");
    if (predicted.size() < 2) throw ValidationError("density: need at least 2 pairs");
    if (!(h_pred > 0.0) || !(h_actual > 0.0)) {
      throw ValidationError("density: bandwidths must be positive");
    }
  }

  // Product-kernel estimate at (p, a).
  double evaluate(double p, double a) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      acc += gaussian_kernel((p - predicted[i]) / h_pred) *
             gaussian_kernel((a - actual[i]) / h_actual);
    }
    return acc / (static_cast<double>(predicted.size()) * h_pred * h_actual);
  }
};

inline DensityModel fit_density(std::vector<double> predicted, std::vector<double> actual,
                                BandwidthRule rule = BandwidthRule::kSilverman) {
  DensityModel m;
  auto select = rule == BandwidthRule::kLscv ? select_bandwidth_lscv : select_bandwidth;
  m.h_pred = select(predicted);
  m.h_actual = select(actual);
  m.predicted = std::move(predicted);
  m.actual = std::move(actual);
  m.validate();
  return m;
}

struct GridSpec {
  std::size_t pred_nodes = 256;
  std::size_t actual_nodes = 256;
  double margin_bandwidths = 5.0;  // axis extends this many bandwidths past the data
};

struct DensityGrid {
  std::vector<double> pred_axis;
  std::vector<double> actual_axis;
  std::vector<double> density;  // [pred][actual], 1/MW^2

  double at(std::size_t p, std::size_t a) const { return density[p * actual_axis.size() + a]; }
  double pred_step() const { return axis_step(pred_axis); }
  double actual_step() const { return axis_step(actual_axis); }
  double cell_area() const { return pred_step() * actual_step(); }

  // Riemann sum of density * cell area.
  double total_mass() const {
    double acc = 0.0;
    for (double d : density) acc += d;
    return acc * cell_area();
  }

 private:
  static double axis_step(const std::vector<double>& axis) {
    return axis.size() > 1 ? (axis.back() - axis.front()) / static_cast<double>(axis.size() - 1)
                           : 1.0;
  }
};

namespace detail {

inline std::vector<double> uniform_axis(double lo, double hi, std::size_t nodes) {
  std::vector<double> axis(nodes);
  const double step = nodes > 1 ? (hi - lo) / static_cast<double>(nodes - 1) : 0.0;
  for (std::size_t k = 0; k < nodes; ++k) axis[k] = lo + step * static_cast<double>(k);
  return axis;
}

}  // namespace detail

inline DensityGrid estimate_joint(const DensityModel& model, std::vector<double> pred_axis,
                                  std::vector<double> actual_axis) {
  model.validate();
  if (pred_axis.empty() || actual_axis.empty()) throw ValidationError("density: empty grid axis");
  const std::size_t n = model.size(), np = pred_axis.size(), na = actual_axis.size();
  // The product kernel separates: tabulate each axis once, then contract.
  std::vector<double> kp(np * n), ka(na * n);
  for (std::size_t p = 0; p < np; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      kp[p * n + i] = gaussian_kernel((pred_axis[p] - model.predicted[i]) / model.h_pred);
    }
  }
  for (std::size_t a = 0; a < na; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      ka[a * n + i] = gaussian_kernel((actual_axis[a] - model.actual[i]) / model.h_actual);
    }
  }
  const double norm = 1.0 / (static_cast<double>(n) * model.h_pred * model.h_actual);
  DensityGrid grid;
  grid.density.assign(np * na, 0.0);
  for (std::size_t p = 0; p < np; ++p) {
    const double* rp = kp.data() + p * n;
    for (std::size_t a = 0; a < na; ++a) {
      const double* ra = ka.data() + a * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += rp[i] * ra[i];
      grid.density[p * na + a] = acc * norm;
    }
  }
  grid.pred_axis = std::move(pred_axis);
  grid.actual_axis = std::move(actual_axis);
  return grid;
}

// Uniform grid over the sample range +- margin bandwidths on each axis.
inline DensityGrid estimate_joint(const DensityModel& model, const GridSpec& spec = {}) {
  model.validate();
  if (spec.pred_nodes < 2 || spec.actual_nodes < 2) {
    throw ValidationError("density: grid needs at least 2 nodes per axis");
  }
  const auto [pmin, pmax] = std::minmax_element(model.predicted.begin(), model.predicted.end());
  const auto [amin, amax] = std::minmax_element(model.actual.begin(), model.actual.end());
  const double mp = spec.margin_bandwidths * model.h_pred;
  const double ma = spec.margin_bandwidths * model.h_actual;
  return estimate_joint(model, detail::uniform_axis(*pmin - mp, *pmax + mp, spec.pred_nodes),
                        detail::uniform_axis(*amin - ma, *amax + ma, spec.actual_nodes));
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;

  double width() const { return upper - lower; }
  bool contains(double y) const { return y >= lower && y <= upper; }
};

// Central quantile interval of the conditional density of `actual` in the
// grid column nearest `predicted` (clamped to the edge columns). The column
// CDF places each node's mass at the node's midpoint-cumulative position
// and interpolates linearly between nodes.
inline Interval conditional_interval(const DensityGrid& grid, double predicted,
                                     double level = 0.95) {
  if (!(level > 0.0 && level <= 1.0)) throw ValidationError("interval: level must be in (0, 1]");
  const auto& pa = grid.pred_axis;
  const auto& aa = grid.actual_axis;
  if (pa.empty() || aa.empty()) throw ValidationError("interval: empty grid");
  std::size_t col = 0;
  if (pa.size() > 1) {
    const double pos = (predicted - pa.front()) / grid.pred_step();
    col = static_cast<std::size_t>(
        std::clamp(std::lround(pos), 0L, static_cast<long>(pa.size() - 1)));
  }
  const std::size_t na = aa.size();
  double total = 0.0;
  for (std::size_t a = 0; a < na; ++a) total += grid.at(col, a);
  if (!(total > 0.0)) throw ValidationError("no density support at this prediction");

  std::vector<double> cdf(na);
  double run = 0.0;
  for (std::size_t a = 0; a < na; ++a) {
    const double d = grid.at(col, a) / total;
    cdf[a] = run + 0.5 * d;
    run += d;
  }
  auto quantile = [&](double q) {
    if (q <= 0.0 || q <= cdf.front()) return aa.front();
    if (q >= 1.0 || q >= cdf.back()) return aa.back();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
    const auto j = static_cast<std::size_t>(it - cdf.begin());
    const double span = cdf[j] - cdf[j - 1];
    const double t = span > 0.0 ? (q - cdf[j - 1]) / span : 0.0;
    return aa[j - 1] + t * (aa[j] - aa[j - 1]);
  };
  const double tail = (1.0 - level) / 2.0;
  return {quantile(tail), quantile(1.0 - tail), level};
}

// ---------------------------------------------------------------------------
// Long-format CSV: header `pred_mw,actual_mw,density`, pred-major rows.

inline void export_density(const DensityGrid& grid, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::fputs("pred_mw,actual_mw,density\n", f);
  for (std::size_t p = 0; p < grid.pred_axis.size(); ++p) {
    for (std::size_t a = 0; a < grid.actual_axis.size(); ++a) {
      std::fprintf(f, "%.17g,%.17g,%.17g\n", grid.pred_axis[p], grid.actual_axis[a],
                   grid.at(p, a));
    }
  }
  if (std::fclose(f) != 0) throw IoError("write failed for '" + path + "'");
}

inline DensityGrid read_density_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != "pred_mw,actual_mw,density") {
    throw ParseError(path + ": expected header 'pred_mw,actual_mw,density'");
  }
  DensityGrid grid;
  std::vector<double> preds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    double v[3];
    std::string_view s = line;
    for (int k = 0; k < 3; ++k) {
      const auto comma = k < 2 ? s.find(',') : s.size();
      if (comma == std::string_view::npos || !detail::parse_number(s.substr(0, comma), v[k])) {
        throw ParseError(path + ": line " + std::to_string(line_no) + ": bad row");
      }
      if (k < 2) s.remove_prefix(comma + 1);
    }
    if (preds.empty() || preds.back() != v[0]) preds.push_back(v[0]);
    if (preds.size() == 1) grid.actual_axis.push_back(v[1]);
    grid.density.push_back(v[2]);
  }
  grid.pred_axis = std::move(preds);
  if (grid.pred_axis.size() * grid.actual_axis.size() != grid.density.size()) {
    throw StructuralError(path + ": rows do not form a complete grid");
  }
  return grid;
}

}  // namespace pvf
