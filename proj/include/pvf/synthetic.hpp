#pragma once

// Synthetic PV output for demos and end-to-end tests: a clear-sky arc
// between 05:00 and 20:00, a per-day cloudiness level, a slowly varying
// AR(1) cloud factor, and additive white noise. Night samples are zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "pvf/dataset.hpp"
#include "pvf/tensor.hpp"

namespace pvf {

struct SyntheticConfig {
  std::size_t days = 100;
  std::int64_t step_minutes = 15;
  double capacity_mw = 1000.0;
  double peak_fraction = 0.8;   // clear-sky peak as a fraction of capacity
  double noise_fraction = 0.1;  // white-noise sigma as a fraction of the peak
  double cloud_phi = 0.95;      // AR(1) coefficient of the cloud factor
  double cloud_sigma = 0.02;    // AR(1) innovation sigma
  Timestamp start = 1420070400; // 2015-01-01T00:00:00
  std::uint64_t seed = 7;
};

inline RawSeries synthetic_series(const SyntheticConfig& c) {
  if (c.days == 0 || c.step_minutes <= 0 || 1440 % c.step_minutes != 0) {
    throw ValidationError("synthetic: need >= 1 day and a step dividing 24 h");
  }
  if (!(c.capacity_mw > 0.0)) throw ValidationError("synthetic: capacity must be positive");
  Rng rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> level(0.6, 1.0);

  RawSeries s;
  s.capacity_mw = c.capacity_mw;
  s.step_seconds = c.step_minutes * 60;
  const double peak = c.peak_fraction * c.capacity_mw;
  const std::int64_t per_day = 1440 / c.step_minutes;
  double cloud = 0.0;
  for (std::size_t d = 0; d < c.days; ++d) {
    const double day_level = level(rng);
    for (std::int64_t k = 0; k < per_day; ++k) {
      const double minutes = static_cast<double>(k * c.step_minutes);
      double v = 0.0;
      if (minutes >= 300.0 && minutes < 1200.0) {
        // Midpoint phase keeps both ends of the arc strictly positive.
        const double phase =
            (minutes - 300.0 + 0.5 * static_cast<double>(c.step_minutes)) / 900.0;
        cloud = c.cloud_phi * cloud + c.cloud_sigma * normal(rng);
        const double clear = peak * std::sin(std::numbers::pi * phase);
        v = clear * day_level * (1.0 + cloud) + c.noise_fraction * peak * normal(rng);
        v = std::clamp(v, 0.0, c.capacity_mw);
      }
      s.timestamps.push_back(c.start + static_cast<Timestamp>(d) * kSecondsPerDay +
                             k * c.step_minutes * 60);
      s.values.push_back(v);
    }
  }
  return s;
}

inline void write_series_csv(const RawSeries& s, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  std::fputs("timestamp,power_mw\n", f);
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::fprintf(f, "%s,%.17g\n", format_timestamp(s.timestamps[i]).c_str(), s.values[i]);
  }
  if (std::fclose(f) != 0) throw IoError("write failed for '" + path + "'");
}

}  // namespace pvf
